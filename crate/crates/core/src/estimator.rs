//! Ridge least-squares estimation of Poly-RBF coefficients.
//!
//! The solve operator `P = (XᵀX + dI)⁻¹Xᵀ` depends only on the acquisition
//! scheme and the basis, so it is factored once and applied to every voxel.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{design_matrix, BasisConfig, DesignMatrix};
use crate::error::{Error, Result};
use crate::io::scheme::{hex_digest, GradientScheme};
use crate::io::volume::{SignalKind, SignalVolume};
use crate::rng;

/// Precomputed `(XᵀX + dI)⁻¹Xᵀ` together with the design it came from.
#[derive(Debug, Clone)]
pub struct Projector {
    solve: DMatrix<f64>,
    design: DMatrix<f64>,
    ridge_d: f64,
    fingerprint: String,
    scheme_fingerprint: String,
}

impl Projector {
    /// `N·K × M` solve operator.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.solve
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn ridge_d(&self) -> f64 {
        self.ridge_d
    }

    pub fn n_obs(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_coef(&self) -> usize {
        self.design.ncols()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn scheme_fingerprint(&self) -> &str {
        &self.scheme_fingerprint
    }

    /// Builds the design for `scheme` and resolves the configured ridge.
    pub fn for_scheme(scheme: &GradientScheme, cfg: &BasisConfig) -> Result<Projector> {
        let x = design_matrix(scheme, cfg)?;
        let d = cfg.ridge().resolve(mean_gram_diagonal(x.matrix()));
        build_projector(&x, d)
    }
}

/// Mean of `diag(XᵀX)`, i.e. the mean squared column norm.
pub fn mean_gram_diagonal(x: &DMatrix<f64>) -> f64 {
    if x.ncols() == 0 {
        return 0.0;
    }
    x.column_iter().map(|c| c.norm_squared()).sum::<f64>() / x.ncols() as f64
}

fn deficient_dimensions(gram: &DMatrix<f64>) -> usize {
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let max = eig.iter().copied().fold(0.0, f64::max);
    let tol = max * gram.nrows() as f64 * f64::EPSILON;
    eig.iter().filter(|&&e| e <= tol).count()
}

/// Factors `XᵀX + dI` (Cholesky) and solves for the projector.
pub fn build_projector(x: &DesignMatrix, d: f64) -> Result<Projector> {
    let design = x.matrix();
    if design.nrows() == 0 || design.ncols() == 0 {
        return Err(Error::invalid("design matrix is empty"));
    }
    if !(d >= 0.0 && d.is_finite()) {
        return Err(Error::invalid(format!("ridge d must be a finite value >= 0, got {d}")));
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("design matrix has non-finite entries"));
    }
    let p = design.ncols();
    let mut gram = design.transpose() * design;
    if d == 0.0 {
        let deficient = deficient_dimensions(&gram);
        if deficient > 0 {
            return Err(Error::RankDeficient { deficient, dim: p });
        }
    }
    for i in 0..p {
        gram[(i, i)] += d;
    }
    let chol = gram.clone().cholesky().ok_or_else(|| Error::RankDeficient {
        deficient: deficient_dimensions(&gram).max(1),
        dim: p,
    })?;
    let solve = chol.solve(&design.transpose());
    if solve.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient {
            deficient: deficient_dimensions(&gram).max(1),
            dim: p,
        });
    }
    Ok(Projector {
        solve,
        design: design.clone(),
        ridge_d: d,
        fingerprint: x.fingerprint().to_string(),
        scheme_fingerprint: x.scheme_fingerprint().to_string(),
    })
}

/// Coefficients and residual statistics of one voxel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelFit {
    pub beta: Vec<f64>,
    /// `RSS / max(M - N·K, 1)`.
    pub residual_variance: f64,
    pub rss: f64,
    pub n_obs: usize,
}

/// Fits one voxel's log-signal.
pub fn fit_voxel(projector: &Projector, log_signal: &[f64]) -> Result<VoxelFit> {
    let m = projector.n_obs();
    if log_signal.len() != m {
        return Err(Error::LengthMismatch {
            what: "log-signal vs design rows".into(),
            left: log_signal.len(),
            right: m,
        });
    }
    let bad: Vec<usize> = log_signal
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonFinite(bad));
    }
    let y = DVector::from_column_slice(log_signal);
    let beta = &projector.solve * &y;
    let resid = &y - &projector.design * &beta;
    let rss = resid.norm_squared();
    let dof = m.saturating_sub(projector.n_coef()).max(1);
    Ok(VoxelFit {
        beta: beta.as_slice().to_vec(),
        residual_variance: rss / dof as f64,
        rss,
        n_obs: m,
    })
}

/// Fits every row of `log_signals` (one voxel each).
pub fn fit_batch(projector: &Projector, log_signals: &[Vec<f64>]) -> Result<Vec<VoxelFit>> {
    log_signals.par_iter().map(|y| fit_voxel(projector, y)).collect()
}

/// Per-voxel fits over a masked volume.
#[derive(Debug, Clone, PartialEq)]
pub struct FitVolume {
    pub dims: [usize; 3],
    pub mask: Vec<bool>,
    /// Linear indices of fitted voxels, ascending.
    pub voxels: Vec<usize>,
    pub fits: Vec<VoxelFit>,
    pub config: BasisConfig,
    /// Largest b-value seen in training.
    pub max_train_b: f64,
    pub scheme_fingerprint: String,
    pub design_fingerprint: String,
    pub ridge_d: f64,
}

impl FitVolume {
    pub fn fit_at(&self, voxel: usize) -> Option<&VoxelFit> {
        self.voxels.binary_search(&voxel).ok().map(|i| &self.fits[i])
    }

    /// Pooled in-sample mean squared residual (log scale).
    pub fn in_sample_mse(&self) -> f64 {
        let (rss, n) = self
            .fits
            .iter()
            .fold((0.0, 0usize), |(r, n), f| (r + f.rss, n + f.n_obs));
        if n == 0 {
            0.0
        } else {
            rss / n as f64
        }
    }
}

pub(crate) fn combined_fingerprint(scheme_fp: &str, cfg_fp: &str) -> String {
    let mut h = Sha256::new();
    h.update(scheme_fp.as_bytes());
    h.update(cfg_fp.as_bytes());
    hex_digest(h)
}

/// Fits every masked voxel of a b0-normalized volume whose frames follow
/// `scheme`.
pub fn fit_volume(
    projector: &Projector,
    cfg: &BasisConfig,
    scheme: &GradientScheme,
    volume: &SignalVolume,
) -> Result<FitVolume> {
    let scheme_fp = scheme.fingerprint();
    if scheme_fp != projector.scheme_fingerprint {
        return Err(Error::ProtocolMismatch {
            expected: projector.scheme_fingerprint.clone(),
            found: scheme_fp,
        });
    }
    let design_fp = combined_fingerprint(&scheme_fp, &cfg.fingerprint());
    if design_fp != projector.fingerprint {
        return Err(Error::ProtocolMismatch {
            expected: projector.fingerprint.clone(),
            found: design_fp,
        });
    }
    if volume.kind() != SignalKind::Normalized {
        return Err(Error::invalid("fit_volume expects a b0-normalized volume"));
    }
    if volume.n_frames() != scheme.len() {
        return Err(Error::LengthMismatch {
            what: "volume frames vs scheme entries".into(),
            left: volume.n_frames(),
            right: scheme.len(),
        });
    }
    let voxels = volume.masked_voxels();
    let fits = voxels
        .par_iter()
        .map(|&v| {
            let y: Vec<f64> = volume.voxel(v).iter().map(|s| s.ln()).collect();
            fit_voxel(projector, &y).map_err(|e| match e {
                Error::NonFinite(frames) => Error::invalid(format!(
                    "voxel {v}: non-positive or non-finite signal at frame(s) {frames:?}"
                )),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mask = vec![false; volume.n_voxels()];
    for &v in &voxels {
        mask[v] = true;
    }
    Ok(FitVolume {
        dims: volume.dims(),
        mask,
        voxels,
        fits,
        config: cfg.clone(),
        max_train_b: scheme.max_b(),
        scheme_fingerprint: scheme_fp,
        design_fingerprint: design_fp,
        ridge_d: projector.ridge_d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Aic,
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InformationCriterion {
    pub value: f64,
    /// Set when the residual sum of squares is zero (`value` is −∞).
    pub perfect_fit: bool,
}

/// Gaussian-likelihood AIC / BIC with `n_coef` free parameters.
pub fn information_criterion(fit: &VoxelFit, n_coef: usize, which: Criterion) -> InformationCriterion {
    let m = fit.n_obs as f64;
    if fit.rss <= 0.0 {
        return InformationCriterion {
            value: f64::NEG_INFINITY,
            perfect_fit: true,
        };
    }
    let penalty = match which {
        Criterion::Aic => 2.0,
        Criterion::Bic => m.ln(),
    };
    InformationCriterion {
        value: m * (fit.rss / m).ln() + penalty * n_coef as f64,
        perfect_fit: false,
    }
}

/// Outcome of cross-validated order selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSelection {
    pub selected: usize,
    /// Mean held-out log-MSE for every admissible candidate, ascending K.
    pub losses: Vec<(usize, f64)>,
    /// Candidates skipped as unidentifiable.
    pub skipped: Vec<usize>,
}

/// Assigns diffusion-weighted frames to folds, stratified by shell.
pub fn shell_stratified_folds(scheme: &GradientScheme, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng::rng(rng::substream(seed, "cv-folds"));
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for shell in scheme.shells() {
        let mut frames = shell.frames.clone();
        frames.shuffle(&mut rng);
        for m in frames {
            out[next % folds].push(m);
            next += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

/// Picks the polynomial order minimizing the mean held-out log-MSE over
/// shell-stratified folds. `signals` are b0-normalized (positive) per-voxel
/// vectors following `scheme`; b0 frames are ignored. Ties go to smaller K.
pub fn select_order(
    scheme: &GradientScheme,
    signals: &[Vec<f64>],
    base: &BasisConfig,
    candidates: &[usize],
    folds: usize,
    seed: u64,
) -> Result<OrderSelection> {
    if folds < 2 {
        return Err(Error::invalid("order selection needs at least 2 folds"));
    }
    if signals.is_empty() {
        return Err(Error::invalid("order selection needs at least one voxel"));
    }
    let logs: Vec<Vec<f64>> = signals
        .iter()
        .enumerate()
        .map(|(v, s)| {
            if s.len() != scheme.len() {
                return Err(Error::LengthMismatch {
                    what: format!("voxel {v} signal vs scheme"),
                    left: s.len(),
                    right: scheme.len(),
                });
            }
            if let Some(m) = s.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::invalid(format!(
                    "voxel {v}: signal at frame {m} is not positive"
                )));
            }
            Ok(s.iter().map(|x| x.ln()).collect())
        })
        .collect::<Result<_>>()?;

    let fold_frames = shell_stratified_folds(scheme, folds, seed);
    if fold_frames.iter().any(|f| f.is_empty()) {
        return Err(Error::invalid(format!(
            "{} diffusion-weighted frames cannot fill {folds} folds",
            scheme.dw_indices().len()
        )));
    }
    let dw = scheme.dw_indices();
    let train_sets: Vec<Vec<usize>> = fold_frames
        .iter()
        .map(|held| dw.iter().copied().filter(|m| held.binary_search(m).is_err()).collect())
        .collect();
    let min_shells = train_sets
        .iter()
        .map(|t| scheme.subset(t).map(|s| s.shells().len()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .min()
        .unwrap_or(0);

    let mut ks: Vec<usize> = candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let (admissible, skipped): (Vec<usize>, Vec<usize>) = ks.into_iter().partition(|&k| k >= 1 && k <= min_shells);
    if !skipped.is_empty() {
        log::warn!("orders {skipped:?} skipped: training folds span only {min_shells} distinct nonzero b-value(s)");
    }
    if admissible.is_empty() {
        return Err(Error::invalid(format!(
            "no admissible order among {candidates:?} for {min_shells} distinct nonzero b-value(s)"
        )));
    }

    let mut losses = Vec::with_capacity(admissible.len());
    for &k in &admissible {
        let cfg = base.clone().with_order(k)?;
        let mut total = 0.0;
        for (held, train) in fold_frames.iter().zip(&train_sets) {
            let train_scheme = scheme.subset(train)?;
            let projector = Projector::for_scheme(&train_scheme, &cfg)?;
            let held_scheme = scheme.subset(held)?;
            let held_x = design_matrix(&held_scheme, &cfg)?;
            let (sse, count) = logs
                .par_iter()
                .map(|y| {
                    let y_train: Vec<f64> = train.iter().map(|&m| y[m]).collect();
                    let fit = fit_voxel(&projector, &y_train)?;
                    let beta = DVector::from_vec(fit.beta);
                    let pred = held_x.matrix() * beta;
                    let sse: f64 = held.iter().zip(pred.iter()).map(|(&m, p)| (y[m] - p).powi(2)).sum();
                    Ok((sse, held.len()))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold((0.0, 0usize), |(a, n), (s, c)| (a + s, n + c));
            total += sse / count as f64;
        }
        losses.push((k, total / folds as f64));
    }
    let mut best = losses[0];
    for &(k, loss) in &losses[1..] {
        if loss < best.1 {
            best = (k, loss);
        }
    }
    Ok(OrderSelection {
        selected: best.0,
        losses,
        skipped,
    })
}
