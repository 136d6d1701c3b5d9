//! Large-n behaviour of the exact tuple counts against the counting exponent.

use num_bigint::BigUint;
use ogp_core::landscape::{count_overlap_tuples_exact, OverlapBand};
use ogp_core::ogp::phi_count;

fn log2_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    let shift = bits.saturating_sub(64);
    let top: BigUint = x >> shift;
    let lead = top.iter_u64_digits().next().unwrap_or(0) as f64;
    lead.log2() + shift as f64
}

fn normalized_triples(n: usize, beta: f64, eta: f64) -> f64 {
    let band = OverlapBand::from_real(n, beta, eta).unwrap();
    log2_big(&count_overlap_tuples_exact(&band, 3).unwrap()) / n as f64
}

#[test]
fn log2_of_big_integers() {
    assert_eq!(log2_big(&BigUint::from(1u32)), 0.0);
    assert_eq!(log2_big(&(BigUint::from(1u32) << 300u32)), 300.0);
    let x = BigUint::from(3u32) << 1000u32;
    assert!((log2_big(&x) - (1000.0 + 3f64.log2())).abs() < 1e-12);
}

// The exponent bounds the normalized count from above up to the polynomial
// factor, and the bound tightens as the band narrows.
#[test]
fn triple_counts_track_the_exponent_at_n_2000() {
    let n = 2000;
    let slack = 3.0 * (n as f64).log2() / n as f64;
    for (beta, eta) in [(0.5, 0.01), (0.9, 0.01), (0.5, 0.004)] {
        let got = normalized_triples(n, beta, eta);
        let phi = phi_count(beta, eta).unwrap();
        assert!(got <= phi + slack, "beta {beta} eta {eta}: {got} > {phi}");
        assert!(phi - got < 0.025, "beta {beta} eta {eta}: {got} vs {phi}");
    }
    let wide = phi_count(0.5, 0.01).unwrap() - normalized_triples(n, 0.5, 0.01);
    let narrow = phi_count(0.5, 0.004).unwrap() - normalized_triples(n, 0.5, 0.004);
    assert!(narrow < wide, "{narrow} vs {wide}");
}

#[test]
fn pair_counts_match_entropy() {
    // Pairs at overlap exactly beta: 2^n C(n, (1-beta)n/2) ~ 2^(n (1 + h((1-beta)/2))).
    let n = 2000;
    let band = OverlapBand::from_real(n, 0.5, 1e-6).unwrap();
    let got = log2_big(&count_overlap_tuples_exact(&band, 2).unwrap()) / n as f64;
    let h = |p: f64| -p * p.log2() - (1.0 - p) * (1.0 - p).log2();
    let want = 1.0 + h(0.25);
    assert!(got <= want && want - got < (n as f64).log2() / n as f64, "{got} vs {want}");
}
