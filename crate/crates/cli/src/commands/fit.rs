use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::Serialize;

use polyrbf::artifact::write_fit;
use polyrbf::estimator::OrderSelection;
use polyrbf::{fit_volume, normalize_b0, select_order, Projector};

use super::{load_dwi, write_json};
use crate::config::{ModelConfig, Order};
use crate::error::{Result, WithPath};

#[derive(Debug, Args)]
pub struct FitArgs {
    /// 4D NIfTI of raw intensities.
    #[arg(long)]
    pub dwi: PathBuf,
    #[arg(long)]
    pub bvals: PathBuf,
    #[arg(long)]
    pub bvecs: PathBuf,
    /// Nonzero voxels are fitted; all voxels when omitted.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// JSON model settings (N, K or "auto", ridge_d, taper_mult, ...).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fit artifact to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// JSON fit report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Timing {
    elapsed_ms: u128,
}

#[derive(Debug, Serialize)]
struct FitReport {
    n: usize,
    k: usize,
    ridge_d: f64,
    bandwidth: f64,
    b_scale: f64,
    n_voxels: usize,
    n_frames: usize,
    dropped_b0_frames: usize,
    clamped_values: usize,
    degenerate_voxels: usize,
    in_sample_mse: f64,
    order_selection: Option<OrderSelection>,
    seed: u64,
    scheme_fingerprint: String,
    design_fingerprint: String,
    /// Wall-clock only; excluded from reproducibility comparisons.
    timing: Timing,
}

pub fn run(args: &FitArgs, seed: u64) -> Result<()> {
    let start = Instant::now();
    let cfg = ModelConfig::load(args.config.as_deref())?;
    let (volume, scheme) = load_dwi(&args.dwi, &args.bvals, &args.bvecs, args.mask.as_deref())?;
    let norm = normalize_b0(&volume, &scheme).in_file(&args.dwi)?;
    let b_scale = norm.scheme.max_b();

    let (k, selection) = match cfg.k {
        Order::Fixed(k) => (k, None),
        Order::Auto(_) => {
            let masked = norm.volume.masked_voxels();
            let take = cfg.selection_voxels.clamp(1, masked.len().max(1));
            let signals: Vec<Vec<f64>> = (0..take)
                .filter_map(|i| masked.get(i * masked.len() / take))
                .map(|&v| norm.volume.voxel(v).to_vec())
                .collect();
            let base = cfg.basis(1, b_scale)?;
            let sel = select_order(&norm.scheme, &signals, &base, &cfg.k_candidates, cfg.folds, seed)?;
            log::info!("selected K = {} from losses {:?}", sel.selected, sel.losses);
            (sel.selected, Some(sel))
        }
    };
    let basis = cfg.basis(k, b_scale)?;
    let projector = Projector::for_scheme(&norm.scheme, &basis)?;
    let fits = fit_volume(&projector, &basis, &norm.scheme, &norm.volume).in_file(&args.dwi)?;
    write_fit(&fits, &args.out)?;
    log::info!(
        "fitted {} voxels, in-sample log-MSE {:.6}",
        fits.voxels.len(),
        fits.in_sample_mse()
    );

    if let Some(path) = &args.report {
        let report = FitReport {
            n: basis.n(),
            k,
            ridge_d: fits.ridge_d,
            bandwidth: basis.bandwidth(),
            b_scale,
            n_voxels: fits.voxels.len(),
            n_frames: norm.scheme.len(),
            dropped_b0_frames: norm.dropped_frames.len(),
            clamped_values: norm.clamped,
            degenerate_voxels: norm.degenerate_voxels.len(),
            in_sample_mse: fits.in_sample_mse(),
            order_selection: selection,
            seed,
            scheme_fingerprint: fits.scheme_fingerprint.clone(),
            design_fingerprint: fits.design_fingerprint.clone(),
            timing: Timing {
                elapsed_ms: start.elapsed().as_millis(),
            },
        };
        write_json(&report, path)?;
    }
    Ok(())
}
