//! Poly-RBF modeling of diffusion MRI signals.
//!
//! The log of a b0-normalized signal is expanded as a polynomial in the
//! b-value times tapered Gaussian radial bases over gradient directions, fitted
//! per voxel with a ridge-stabilized projector shared across voxels. The crate
//! also provides prediction onto new acquisition schemes, tensor features,
//! batch adjustment, evaluation statistics, a multi-tensor phantom and NIfTI /
//! FSL I/O.

pub mod artifact;
pub mod basis;
pub mod benchmark;
pub mod error;
pub mod estimator;
pub mod harmonize;
pub mod io;
pub mod metrics;
pub mod microstructure;
pub mod phantom;
pub mod predictor;
pub mod protocols;
pub mod rng;

pub use basis::{design_matrix, design_row, BasisConfig, DesignMatrix, Ridge, UnitDirection};
pub use error::{Error, Result};
pub use estimator::{
    build_projector, fit_batch, fit_volume, fit_voxel, information_criterion, select_order, Criterion, FitVolume,
    OrderSelection, Projector, VoxelFit,
};
pub use harmonize::{harmonize_pipeline, CombatModel, CombatOptions, DatasetInput, PipelineConfig, PipelineOutput};
pub use io::{normalize_b0, GradientScheme, Normalized, SignalKind, SignalVolume};
pub use microstructure::{DiffusionTensor, Feature, TensorFitter};
pub use phantom::{generate_phantom, Phantom, PhantomSpec};
pub use predictor::{baseline_predict, predict_log, predict_signal, resample_volume, ExtrapolationReport};
