//! Distribution of the exponential functional of a hyper-exponential Lévy
//! process, computed four independent ways: Monte Carlo sampling of the
//! underlying paths, a Mellin transform built from those samples and
//! continued by functional-equation recurrences, series expansions at zero
//! and infinity driven by the transform, and an integral-equation residual
//! check that validates any candidate density against the law's stationarity
//! identity.
//!
//! # Quick start
//!
//! ```
//! use std::sync::Arc;
//! use expfun::mc::{simulate, SamplerConfig};
//! use expfun::{DensityEvaluator, EtaSpec, EvaluatorOptions, HyperExpLevyModel, Strategy};
//!
//! // ψ(z) = z² − z: Brownian motion with negative drift, no jumps.
//! let model = HyperExpLevyModel::new(std::f64::consts::SQRT_2, -1.0, vec![], vec![])?;
//! let eta = EtaSpec::brownian(0.0, 1.0)?;
//!
//! // Simulate the conditional moments (J₁, J₂) of the functional.
//! let config = SamplerConfig::for_model(&model, 500, 7)?;
//! let samples = Arc::new(simulate(&model, &eta, &config)?);
//!
//! // Evaluate the density through the automatic dispatch pipeline.
//! let evaluator = DensityEvaluator::new(&model, &eta, samples, EvaluatorOptions::default())?;
//! let report = evaluator.density(1.0, Strategy::Auto)?;
//! assert!(report.value > 0.0 && report.error_estimate.is_finite());
//! # Ok::<(), expfun::Error>(())
//! ```

pub mod error;
pub mod mc;
pub mod density;
pub mod integral_eq;
pub mod mellin;
pub mod runio;
pub mod model;
pub mod special;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use mc::{
    McSample, MellinEstimate, MellinMethod, RealEstimate, SampleSet, SamplerConfig,
};
pub use density::{
    invert_density, invert_tail, series_large_x, series_small_x, DensityEvaluator, DensityReport,
    EvaluatorOptions, InversionConfig, MellinSource, Method, Strategy,
};
pub use integral_eq::{
    residual_brownian_eta, residual_general, residual_negative_side, CheckOptions, DensityCurve,
    ResidualReport,
};
pub use mellin::{
    hyperexp_coeffs, small_x_coeffs, step_down, step_up, tail_constant, AnchorOptions,
    ExpansionCoeffs, MellinExtension, TailConstant, TailOrder,
};
pub use model::{EtaJumps, EtaSpec, ExtendedReal, HyperExpLevyModel, JumpTerm, Side};
pub use runio::{model_hash, parse_grid, write_output, RunConfig, RunManifest};
pub use num_complex::Complex64;
