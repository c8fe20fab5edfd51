//! Held-out prediction benchmark: subsample a dense acquisition with each
//! protocol, fit on the subsample and score predictions of the held-out
//! frames against the shell-wise nearest-neighbour baseline.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{design_matrix, BasisConfig, Ridge, DEFAULT_K, DEFAULT_N, DEFAULT_TAPER_MULT};
use crate::error::{Error, Result};
use crate::estimator::{fit_voxel, Projector};
use crate::io::scheme::GradientScheme;
use crate::io::volume::{normalize_b0, SignalVolume};
use crate::predictor::baseline_predict;
use crate::protocols::{subsample_protocol, train_test_split, TRAIN_FRACTION};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub n: usize,
    pub k: usize,
    pub taper_mult: f64,
    pub ridge: Ridge,
    pub train_fraction: f64,
    pub replications: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n: DEFAULT_N,
            k: DEFAULT_K,
            taper_mult: DEFAULT_TAPER_MULT,
            ridge: Ridge::default(),
            train_fraction: TRAIN_FRACTION,
            replications: crate::protocols::DEFAULT_REPLICATIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    /// 1-based protocol number.
    pub protocol: usize,
    pub replication: usize,
    pub counts: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub polyrbf_mse: f64,
    pub baseline_mse: f64,
}

fn row_for(
    scheme: &GradientScheme,
    volume: &SignalVolume,
    voxels: &[usize],
    train: &[usize],
    test: &[usize],
    cfg: &BenchmarkConfig,
) -> Result<(f64, f64)> {
    let train_scheme = scheme.subset(train)?;
    let test_scheme = scheme.subset(test)?;
    let basis = BasisConfig::new(cfg.n, cfg.k, train_scheme.max_b())?
        .with_taper(cfg.taper_mult)?
        .with_ridge(cfg.ridge)?;
    let projector = Projector::for_scheme(&train_scheme, &basis)?;
    let test_x = design_matrix(&test_scheme, &basis)?;
    let test_dirs: Vec<_> = (0..test.len()).map(|j| test_scheme.direction(j)).collect();
    let per_voxel: Vec<(f64, f64)> = voxels
        .par_iter()
        .map(|&v| {
            let s = volume.voxel(v);
            let y_train: Vec<f64> = train.iter().map(|&m| s[m]).collect();
            let logs: Vec<f64> = y_train.iter().map(|x| x.ln()).collect();
            let fit = fit_voxel(&projector, &logs)?;
            let pred = test_x.matrix() * DVector::from_vec(fit.beta);
            let mut poly = 0.0;
            let mut base = 0.0;
            for (j, &m) in test.iter().enumerate() {
                let obs = s[m].ln();
                poly += (pred[j] - obs).powi(2);
                let dir = test_dirs[j].as_ref().expect("test frames are diffusion weighted");
                let nn = baseline_predict(&train_scheme, &y_train, test_scheme.bval(j), dir)?;
                base += (nn.ln() - obs).powi(2);
            }
            Ok((poly, base))
        })
        .collect::<Result<_>>()?;
    let count = (voxels.len() * test.len()) as f64;
    let (poly, base) = per_voxel.iter().fold((0.0, 0.0), |(a, b), (p, q)| (a + p, b + q));
    Ok((poly / count, base / count))
}

/// Runs every protocol `cfg.replications` times on a raw volume acquired with
/// `scheme`. `protocols[i]` lists directions drawn per shell, ascending b.
pub fn run_benchmark(
    volume: &SignalVolume,
    scheme: &GradientScheme,
    protocols: &[Vec<usize>],
    cfg: &BenchmarkConfig,
) -> Result<Vec<BenchmarkRow>> {
    if cfg.replications == 0 {
        return Err(Error::invalid("benchmark needs at least one replication"));
    }
    let norm = normalize_b0(volume, scheme)?;
    let voxels = norm.volume.masked_voxels();
    if voxels.is_empty() {
        return Err(Error::invalid("benchmark volume has no masked voxels"));
    }
    let split = train_test_split(&norm.scheme, cfg.train_fraction, cfg.seed)?;
    let sub_seed = rng::substream(cfg.seed, "subsample");
    let mut rows = Vec::new();
    for (i, counts) in protocols.iter().enumerate() {
        for r in 0..cfg.replications {
            let mut g = rng::rng(rng::indexed(rng::indexed(sub_seed, i as u64), r as u64));
            let train = subsample_protocol(&norm.scheme, &split, counts, &mut g)?;
            let (poly, base) = row_for(&norm.scheme, &norm.volume, &voxels, &train, &split.test, cfg)?;
            rows.push(BenchmarkRow {
                protocol: i + 1,
                replication: r + 1,
                counts: counts.clone(),
                n_train: train.len(),
                n_test: split.test.len(),
                polyrbf_mse: poly,
                baseline_mse: base,
            });
        }
    }
    Ok(rows)
}
