//! Acquisition schemes, NIfTI volumes and b0 normalization.

pub mod nifti;
pub mod scheme;
pub mod volume;

pub use nifti::{read_mask, read_nifti, write_nifti, write_nifti_as, NiftiDtype};
pub use scheme::{parse_bvals, parse_bvecs, GradientScheme, Shell};
pub use volume::{normalize_b0, Normalized, SignalKind, SignalVolume, NORMALIZED_FLOOR};
