pub mod disorder;
pub mod error;
pub mod experiments;
pub mod landscape;
pub mod mvn;
pub mod ogp;
pub mod quad;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod solvers;

pub use error::{Error, Result};

pub type Disorder = disorder::DisorderMatrix<f64>;
pub type Ensemble = disorder::InterpolatedEnsemble<f64>;
pub type Query = landscape::TupleQuery<f64>;
pub type Signer = solvers::OnlineSigner<f64>;
pub type Scan = ogp::ScanResult<f64>;
pub type FreeEnergy = ogp::FreeEnergyPoint<f64>;
