use std::path::PathBuf;

use clap::Args;

use polyrbf::artifact::read_fit;
use polyrbf::io::write_nifti;
use polyrbf::{resample_volume, GradientScheme};

use super::write_json;
use crate::error::{Result, WithPath};

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Fit artifact written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Target gradient table.
    #[arg(long)]
    pub bvals: PathBuf,
    #[arg(long)]
    pub bvecs: PathBuf,
    /// NIfTI of predicted b0-normalized signal.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Allow target b-values above the training maximum.
    #[arg(long)]
    pub allow_extrapolation: bool,
    /// JSON report listing extrapolated frames.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn run(args: &PredictArgs) -> Result<()> {
    let fits = read_fit(&args.fit).in_file(&args.fit)?;
    let target = GradientScheme::read_fsl(&args.bvals, &args.bvecs).in_file(&args.bvecs)?;
    let (volume, report) = resample_volume(&fits, &target, args.allow_extrapolation)?;
    write_nifti(&volume, &args.out)?;
    if let Some(path) = &args.report {
        write_json(&report, path)?;
    }
    Ok(())
}
