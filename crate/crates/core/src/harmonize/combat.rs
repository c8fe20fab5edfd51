//! Location-scale batch adjustment with parametric empirical-Bayes shrinkage.
//!
//! Samples are rows, features are columns. Each feature is standardized by a
//! grand mean (plus covariate effects) and pooled residual variance; batch
//! location `γ` and scale `δ²` are estimated on the standardized data, shrunk
//! toward normal / inverse-gamma priors fitted across features, and removed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EB_TOLERANCE: f64 = 1e-6;
pub const EB_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombatOptions {
    pub empirical_bayes: bool,
}

impl Default for CombatOptions {
    fn default() -> Self {
        CombatOptions { empirical_bayes: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombatModel {
    /// Batch labels in sorted order; rows of `gamma` and `delta2`.
    pub batches: Vec<String>,
    /// Shrunk location per batch and feature (standardized units).
    pub gamma: Vec<Vec<f64>>,
    /// Shrunk scale per batch and feature (standardized units), > 0.
    pub delta2: Vec<Vec<f64>>,
    pub grand_mean: Vec<f64>,
    pub pooled_var: Vec<f64>,
    /// One row per covariate column, one entry per feature.
    pub covariate_coef: Option<Vec<Vec<f64>>>,
    /// Features left untouched because their pooled variance is zero.
    pub passthrough: Vec<bool>,
    pub empirical_bayes: bool,
    /// Shrinkage iterations used per batch (0 without EB).
    pub iterations: Vec<usize>,
    /// A single batch was supplied: adjustment is the identity.
    pub noop: bool,
}

impl CombatModel {
    pub fn n_features(&self) -> usize {
        self.grand_mean.len()
    }

    fn batch_index(&self, label: &str) -> Result<usize> {
        self.batches
            .binary_search_by(|b| b.as_str().cmp(label))
            .map_err(|_| Error::UnknownBatch(label.to_string()))
    }
}

fn batch_groups(batches: &[String]) -> (Vec<String>, Vec<Vec<usize>>) {
    let mut labels: Vec<String> = batches.to_vec();
    labels.sort();
    labels.dedup();
    let mut groups = vec![Vec::new(); labels.len()];
    for (i, b) in batches.iter().enumerate() {
        let j = labels.binary_search(b).expect("label present");
        groups[j].push(i);
    }
    (labels, groups)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Per-feature standardization mean (grand mean plus covariate effect) for
/// every sample.
fn stand_mean(model: &CombatModel, covariates: Option<&DMatrix<f64>>, n: usize) -> Result<DMatrix<f64>> {
    let g = model.n_features();
    let mut out = DMatrix::from_fn(n, g, |_, j| model.grand_mean[j]);
    match (&model.covariate_coef, covariates) {
        (Some(coef), Some(x)) => {
            if x.nrows() != n || x.ncols() != coef.len() {
                return Err(Error::invalid(format!(
                    "covariates are {}x{}, model expects {n}x{}",
                    x.nrows(),
                    x.ncols(),
                    coef.len()
                )));
            }
            for i in 0..n {
                for j in 0..g {
                    out[(i, j)] += (0..coef.len()).map(|c| x[(i, c)] * coef[c][j]).sum::<f64>();
                }
            }
        }
        (Some(_), None) => return Err(Error::invalid("model was fitted with covariates; none supplied")),
        (None, Some(_)) => return Err(Error::invalid("model was fitted without covariates")),
        (None, None) => {}
    }
    Ok(out)
}

/// Fits the adjustment. `features` is samples × features.
pub fn fit_combat(
    features: &DMatrix<f64>,
    batches: &[String],
    covariates: Option<&DMatrix<f64>>,
    options: CombatOptions,
) -> Result<CombatModel> {
    let (n, g) = features.shape();
    if batches.len() != n {
        return Err(Error::LengthMismatch {
            what: "batch labels vs samples".into(),
            left: batches.len(),
            right: n,
        });
    }
    if n == 0 || g == 0 {
        return Err(Error::invalid("ComBat needs at least one sample and one feature"));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("ComBat features must be finite"));
    }
    let (labels, groups) = batch_groups(batches);
    if let Some((j, _)) = groups.iter().enumerate().find(|(_, idx)| idx.len() < 2) {
        return Err(Error::invalid(format!("batch {:?} has a single sample", labels[j])));
    }
    let n_cov = covariates.map_or(0, |x| x.ncols());
    if let Some(x) = covariates {
        if x.nrows() != n {
            return Err(Error::LengthMismatch {
                what: "covariate rows vs samples".into(),
                left: x.nrows(),
                right: n,
            });
        }
    }
    if labels.len() == 1 {
        log::warn!("ComBat got a single batch {:?}; nothing to adjust", labels[0]);
        return Ok(CombatModel {
            batches: labels,
            gamma: vec![vec![0.0; g]],
            delta2: vec![vec![1.0; g]],
            grand_mean: (0..g).map(|j| features.column(j).mean()).collect(),
            pooled_var: vec![1.0; g],
            covariate_coef: None,
            passthrough: vec![false; g],
            empirical_bayes: options.empirical_bayes,
            iterations: vec![0],
            noop: true,
        });
    }

    // Design: batch indicators, then covariates.
    let nb = labels.len();
    let p = nb + n_cov;
    let mut design = DMatrix::zeros(n, p);
    for (j, idx) in groups.iter().enumerate() {
        for &i in idx {
            design[(i, j)] = 1.0;
        }
    }
    if let Some(x) = covariates {
        design.view_mut((0, nb), (n, n_cov)).copy_from(x);
    }
    if n <= p {
        return Err(Error::invalid(format!(
            "ComBat needs more samples ({n}) than design columns ({p})"
        )));
    }
    let gram = design.transpose() * &design;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::invalid("batch/covariate design is rank deficient"))?;
    let coef = chol.solve(&(design.transpose() * features));
    let resid = features - &design * &coef;

    let grand_mean: Vec<f64> = (0..g)
        .map(|f| (0..nb).map(|j| groups[j].len() as f64 * coef[(j, f)]).sum::<f64>() / n as f64)
        .collect();
    let dof = (n - p) as f64;
    let pooled_var: Vec<f64> = (0..g).map(|f| resid.column(f).norm_squared() / dof).collect();
    let passthrough: Vec<bool> = pooled_var.iter().map(|&v| !(v > 0.0)).collect();
    let n_pass = passthrough.iter().filter(|&&b| b).count();
    if n_pass > 0 {
        log::warn!("{n_pass} feature(s) with zero pooled variance pass through ComBat unchanged");
    }
    let covariate_coef = covariates.map(|_| {
        (0..n_cov)
            .map(|c| (0..g).map(|f| coef[(nb + c, f)]).collect())
            .collect()
    });

    let mut model = CombatModel {
        batches: labels,
        gamma: Vec::new(),
        delta2: Vec::new(),
        grand_mean,
        pooled_var,
        covariate_coef,
        passthrough,
        empirical_bayes: options.empirical_bayes,
        iterations: vec![0; nb],
        noop: false,
    };
    let sm = stand_mean(&model, covariates, n)?;
    let active: Vec<usize> = (0..g).filter(|&f| !model.passthrough[f]).collect();
    let z = DMatrix::from_fn(n, g, |i, f| {
        if model.passthrough[f] {
            0.0
        } else {
            (features[(i, f)] - sm[(i, f)]) / model.pooled_var[f].sqrt()
        }
    });

    let use_eb = options.empirical_bayes && active.len() >= 2;
    if options.empirical_bayes && !use_eb {
        log::warn!("fewer than 2 adjustable features; empirical Bayes disabled");
    }
    for idx in &groups {
        let nj = idx.len() as f64;
        let cols: Vec<Vec<f64>> = (0..g).map(|f| idx.iter().map(|&i| z[(i, f)]).collect()).collect();
        let gamma_hat: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
        let delta_hat: Vec<f64> = cols.iter().map(|c| sample_var(c)).collect();
        let (mut gamma, mut delta2) = (gamma_hat.clone(), delta_hat.clone());
        let mut iters = 0;
        if use_eb {
            let gh: Vec<f64> = active.iter().map(|&f| gamma_hat[f]).collect();
            let dh: Vec<f64> = active.iter().map(|&f| delta_hat[f]).collect();
            let gamma_bar = mean(&gh);
            let tau2 = sample_var(&gh);
            let m = mean(&dh);
            let s2 = sample_var(&dh);
            if tau2 > 0.0 && s2 > 0.0 {
                let a = (2.0 * s2 + m * m) / s2;
                let b = (m * s2 + m * m * m) / s2;
                for &f in &active {
                    let (g_new, d_new, it) = shrink(&cols[f], gamma_hat[f], delta_hat[f], gamma_bar, tau2, a, b, nj);
                    gamma[f] = g_new;
                    delta2[f] = d_new;
                    iters = iters.max(it);
                }
            } else {
                log::warn!("degenerate empirical-Bayes prior; using unshrunk batch estimates");
            }
        }
        for f in 0..g {
            if model.passthrough[f] {
                gamma[f] = 0.0;
                delta2[f] = 1.0;
            } else if !(delta2[f] > 0.0) {
                log::warn!("feature {f}: zero within-batch variance; scale left unadjusted");
                delta2[f] = 1.0;
            }
        }
        model.gamma.push(gamma);
        model.delta2.push(delta2);
        let j = model.gamma.len() - 1;
        model.iterations[j] = iters;
    }
    Ok(model)
}

#[allow(clippy::too_many_arguments)]
fn shrink(
    z: &[f64],
    gamma_hat: f64,
    delta_hat: f64,
    gamma_bar: f64,
    tau2: f64,
    a: f64,
    b: f64,
    n: f64,
) -> (f64, f64, usize) {
    let mut g_old = gamma_hat;
    let mut d_old = delta_hat;
    for it in 1..=EB_MAX_ITER {
        let g_new = (n * tau2 * gamma_hat + d_old * gamma_bar) / (n * tau2 + d_old);
        let ss: f64 = z.iter().map(|v| (v - g_new).powi(2)).sum();
        let d_new = (0.5 * ss + b) / (0.5 * n + a - 1.0);
        let change = ((g_new - g_old).abs() / g_old.abs()).max((d_new - d_old).abs() / d_old.abs());
        g_old = g_new;
        d_old = d_new;
        if !(change >= EB_TOLERANCE) {
            return (g_new, d_new, it);
        }
    }
    log::warn!("empirical-Bayes shrinkage hit {EB_MAX_ITER} iterations");
    (g_old, d_old, EB_MAX_ITER)
}

/// Applies a fitted model to samples × features data.
pub fn apply_combat(
    model: &CombatModel,
    features: &DMatrix<f64>,
    batches: &[String],
    covariates: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let (n, g) = features.shape();
    if g != model.n_features() {
        return Err(Error::LengthMismatch {
            what: "features vs model".into(),
            left: g,
            right: model.n_features(),
        });
    }
    if batches.len() != n {
        return Err(Error::LengthMismatch {
            what: "batch labels vs samples".into(),
            left: batches.len(),
            right: n,
        });
    }
    let rows: Vec<usize> = batches.iter().map(|b| model.batch_index(b)).collect::<Result<_>>()?;
    if model.noop {
        return Ok(features.clone());
    }
    let sm = stand_mean(model, covariates, n)?;
    let mut out = features.clone();
    for f in 0..g {
        if model.passthrough[f] {
            continue;
        }
        let sd = model.pooled_var[f].sqrt();
        for i in 0..n {
            let j = rows[i];
            let z = (features[(i, f)] - sm[(i, f)]) / sd;
            out[(i, f)] = sd * (z - model.gamma[j][f]) / model.delta2[j][f].sqrt() + sm[(i, f)];
        }
    }
    Ok(out)
}

/// Fits and applies in one step.
pub fn combat(
    features: &DMatrix<f64>,
    batches: &[String],
    covariates: Option<&DMatrix<f64>>,
    options: CombatOptions,
) -> Result<(CombatModel, DMatrix<f64>)> {
    let model = fit_combat(features, batches, covariates, options)?;
    let adjusted = apply_combat(&model, features, batches, covariates)?;
    Ok((model, adjusted))
}
