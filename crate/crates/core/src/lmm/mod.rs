//! Linear mixed models for genuine scores with subject-level random effects.

pub mod apc;
pub mod design;
pub mod frame;
pub mod inference;
pub mod optim;
pub mod reml;
pub mod report;

pub use apc::{compare_apc, ApcReport};
pub use design::{build_design, build_design_frame, ApcMode, Design, ModelSpec, RandomStructure, Term};
pub use frame::{ModelFrame, StandardizeScope};
pub use inference::{icc, likelihood_ratio_test, marginal_r2, vif, LrtResult};
pub use reml::{fit, fit_ml, fit_reml, FitOptions, FittedModel, Method};

pub(crate) fn sha256_hex(data: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}
