//! The numeric core runs in single precision and agrees with double precision.

use ogp_core::disorder::{DisorderMatrix, Distribution};
use ogp_core::landscape::{count_solutions, is_solution, Variant};
use ogp_core::mvn::{box_probability_equicorrelated, quadrant_probability};
use ogp_core::ogp::{alpha_c, f3};
use ogp_core::solvers::{majority_solve, online_solve, OnlineStrategy};

#[test]
fn kernels_agree_across_precisions() {
    let single = box_probability_equicorrelated(3, 0.978f32, 1.0).unwrap().value;
    let double = box_probability_equicorrelated(3, 0.978f64, 1.0).unwrap().value;
    assert!((single as f64 - double).abs() < 1e-5, "{single} vs {double}");
    assert!((quadrant_probability(0.5f32).unwrap() - 1.0 / 3.0).abs() < 1e-6);
    assert!((alpha_c(1.0f32).unwrap() as f64 - alpha_c(1.0f64).unwrap()).abs() < 1e-4);
    assert!((f3(0.978f32, 1.667).unwrap().value as f64 - f3(0.978f64, 1.667).unwrap().value).abs() < 1e-4);
}

#[test]
fn solvers_agree_across_precisions() {
    let m64 = DisorderMatrix::<f64>::sample(300, 0.05, Distribution::Gaussian, 12).unwrap();
    let m32 = DisorderMatrix::<f32>::sample(300, 0.05, Distribution::Gaussian, 12).unwrap();
    for (a, b) in m64.entries().iter().zip(m32.entries()) {
        assert_eq!(*a as f32, *b);
    }
    let s64 = majority_solve(&m64);
    let s32 = majority_solve(&m32);
    assert!(s64.hamming(&s32).unwrap() <= 3);
    let run = online_solve(&m32, 1.0f32, OnlineStrategy::GreedyMinimax).unwrap();
    assert_eq!(run.max_abs_partial.len(), 300);
}

#[test]
fn exhaustive_counts_agree_across_precisions() {
    let m64 = DisorderMatrix::<f64>::sample(14, 0.5, Distribution::Gaussian, 3).unwrap();
    let m32 = DisorderMatrix::<f32>::sample(14, 0.5, Distribution::Gaussian, 3).unwrap();
    let c64 = count_solutions(&m64, 1.0, Variant::Symmetric, 25).unwrap();
    let c32 = count_solutions(&m32, 1.0f32, Variant::Symmetric, 25).unwrap();
    assert!(c64.abs_diff(c32) <= 2, "{c64} vs {c32}");
    let r = DisorderMatrix::<f32>::sample(14, 0.5, Distribution::Rademacher, 3).unwrap();
    let s = ogp_core::landscape::SignVector::all_plus(14);
    assert!(is_solution(&r, &s, 100.0f32, Variant::Symmetric).unwrap());
}
