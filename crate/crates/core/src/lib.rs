//! Gaussian-mixture extended RAIM: GNSS spoofing detection that cross-checks
//! satellite fixes against locations solved from untrusted terrestrial
//! ranging (cellular base stations, Wi-Fi access points).

pub mod attacks;
pub mod baselines;
pub mod datamodel;
pub mod error;
pub mod eval;
pub mod filtering;
pub mod fusion;
pub mod geo;
pub mod ingest;
pub mod nls;
pub mod pipeline;
pub mod positioning;
pub mod subsets;
pub mod theory;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
