//! Applied estimators: exposure-based Horvitz-Thompson contrasts, the
//! diffusion moment estimator and socio-economic covariance construction.

mod exposure;
mod socio;
mod zest;

pub use exposure::{
    bin_exposure, exposure_map, exposure_probabilities, exposure_probabilities_exact, exposure_probabilities_mc,
    ht_design_expectation, ht_estimate, keyed_assignment, true_effect, Binning, ExposureDesign, ExposureKind,
    ExposureProbs, HtEstimate, OutcomeTable, PositivityMode, RealExposure, MAX_ENUMERATION_N, MAX_REL_SE,
};
pub use socio::{socio_cov_kernel, socio_distance, PsdReport, SocioCovSpec, MAX_PSD_CHECK_N};
pub use zest::{q_hat_mc, q_hat_star, Boundary, CurvePoint, QHat};
