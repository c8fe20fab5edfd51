use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use polyrbf::io::{read_mask, read_nifti};
use polyrbf::metrics::{mse_log, quantile};
use polyrbf::{normalize_b0, GradientScheme, SignalVolume};

use super::write_json;
use crate::error::{CliError, Result, WithPath};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted volume.
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference volume on the same grid and frames.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Gradient table shared by both volumes; when given, both are divided by
    /// their mean b0 and only diffusion-weighted frames are scored.
    #[arg(long, requires = "bvecs")]
    pub bvals: Option<PathBuf>,
    #[arg(long, requires = "bvals")]
    pub bvecs: Option<PathBuf>,
    /// JSON report; printed to stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EvaluateReport {
    mse_log: f64,
    n_voxels: usize,
    n_pairs: usize,
    skipped_nonpositive: usize,
    /// Quantiles 0.05, 0.25, 0.5, 0.75, 0.95 of |ln pred − ln truth|.
    abs_log_diff_quantiles: Vec<(f64, f64)>,
}

const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let mut pred = read_nifti(&args.pred).in_file(&args.pred)?;
    let mut truth = read_nifti(&args.truth).in_file(&args.truth)?;
    if pred.dims() != truth.dims() || pred.n_frames() != truth.n_frames() {
        return Err(CliError::Usage(format!(
            "{} is {:?}x{} but {} is {:?}x{}",
            args.pred.display(),
            pred.dims(),
            pred.n_frames(),
            args.truth.display(),
            truth.dims(),
            truth.n_frames()
        )));
    }
    if let Some(m) = &args.mask {
        let mask = read_mask(m).in_file(m)?;
        pred.set_mask(Some(mask.clone())).in_file(m)?;
        truth.set_mask(Some(mask)).in_file(m)?;
    }
    if let (Some(bvals), Some(bvecs)) = (&args.bvals, &args.bvecs) {
        let scheme = GradientScheme::read_fsl(bvals, bvecs).in_file(bvecs)?;
        let normalize = |v: &SignalVolume, path: &PathBuf| normalize_b0(v, &scheme).map(|n| n.volume).in_file(path);
        pred = normalize(&pred, &args.pred)?;
        truth = normalize(&truth, &args.truth)?;
    }

    let voxels: Vec<usize> = pred.masked_voxels().into_iter().filter(|&v| truth.in_mask(v)).collect();
    let (mut p, mut t, mut skipped) = (Vec::new(), Vec::new(), 0);
    for &v in &voxels {
        for (&a, &b) in pred.voxel(v).iter().zip(truth.voxel(v)) {
            if a > 0.0 && b > 0.0 {
                p.push(a);
                t.push(b);
            } else {
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} pair(s) with a nonpositive value skipped");
    }
    let mse = mse_log(&p, &t)?;
    let diffs: Vec<f64> = p.iter().zip(&t).map(|(a, b)| (a.ln() - b.ln()).abs()).collect();
    let report = EvaluateReport {
        mse_log: mse,
        n_voxels: voxels.len(),
        n_pairs: p.len(),
        skipped_nonpositive: skipped,
        abs_log_diff_quantiles: QUANTILES.iter().map(|&q| (q, quantile(&diffs, q))).collect(),
    };
    match &args.out {
        Some(path) => write_json(&report, path),
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?
            );
            Ok(())
        }
    }
}
