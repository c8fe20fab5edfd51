pub mod benchmark;
pub mod evaluate;
pub mod fit;
pub mod harmonize;
pub mod predict;
pub mod simulate;

use std::path::Path;

use serde::Serialize;

use polyrbf::io::{read_mask, read_nifti};
use polyrbf::{GradientScheme, SignalVolume};

use crate::error::{io_err, CliError, Result, WithPath};

/// Reads a 4D volume with its gradient table and optional mask.
pub fn load_dwi(dwi: &Path, bvals: &Path, bvecs: &Path, mask: Option<&Path>) -> Result<(SignalVolume, GradientScheme)> {
    let scheme = GradientScheme::read_fsl(bvals, bvecs).in_file(bvecs)?;
    let mut volume = read_nifti(dwi).in_file(dwi)?;
    if volume.n_frames() != scheme.len() {
        return Err(CliError::InFile {
            path: dwi.to_path_buf(),
            source: polyrbf::Error::LengthMismatch {
                what: "volume frames vs gradient table entries".into(),
                left: volume.n_frames(),
                right: scheme.len(),
            },
        });
    }
    if let Some(m) = mask {
        let mask = read_mask(m).in_file(m)?;
        volume.set_mask(Some(mask)).in_file(m)?;
    }
    Ok((volume, scheme))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}
