//! Signal prediction from fitted coefficients, volume resampling onto a new
//! scheme, and a nearest-neighbour comparator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{fill_design_row, BasisConfig, UnitDirection};
use crate::error::{Error, Result};
use crate::estimator::{FitVolume, VoxelFit};
use crate::io::scheme::GradientScheme;
use crate::io::volume::{SignalKind, SignalVolume};

/// Predicted log of the normalized signal; exactly 0 at `b = 0`.
pub fn predict_log(fit: &VoxelFit, cfg: &BasisConfig, b: f64, p: &UnitDirection) -> Result<f64> {
    predict_log_opt(fit, cfg, b, Some(p))
}

fn predict_log_opt(fit: &VoxelFit, cfg: &BasisConfig, b: f64, p: Option<&UnitDirection>) -> Result<f64> {
    if fit.beta.len() != cfg.n_coef() {
        return Err(Error::LengthMismatch {
            what: "coefficients vs basis size".into(),
            left: fit.beta.len(),
            right: cfg.n_coef(),
        });
    }
    let mut row = vec![0.0; cfg.n_coef()];
    fill_design_row(b, p, cfg, &mut row)?;
    Ok(row.iter().zip(&fit.beta).map(|(x, beta)| x * beta).sum())
}

/// Predicted normalized signal, `exp(predict_log)`.
pub fn predict_signal(fit: &VoxelFit, cfg: &BasisConfig, b: f64, p: &UnitDirection) -> Result<f64> {
    predict_log(fit, cfg, b, p).map(f64::exp)
}

/// Frames of a target scheme lying beyond the training b-range.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationReport {
    pub max_train_b: f64,
    pub frames: Vec<usize>,
}

impl ExtrapolationReport {
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Predicts every fitted voxel on the `target` scheme. Frames with `b` above
/// the training maximum are an error unless `allow_extrapolation` is set.
/// Voxels outside the fit mask are zero.
pub fn resample_volume(
    fits: &FitVolume,
    target: &GradientScheme,
    allow_extrapolation: bool,
) -> Result<(SignalVolume, ExtrapolationReport)> {
    let cfg = &fits.config;
    let frames: Vec<usize> = (0..target.len())
        .filter(|&m| target.bval(m) > fits.max_train_b)
        .collect();
    let report = ExtrapolationReport {
        max_train_b: fits.max_train_b,
        frames,
    };
    if !report.is_empty() {
        let err = Error::Extrapolation {
            target_b: report.frames.iter().map(|&m| target.bval(m)).fold(0.0, f64::max),
            max_train_b: fits.max_train_b,
            frames: report.frames.len(),
        };
        if !allow_extrapolation {
            return Err(err);
        }
        log::warn!("{err}");
    }

    let n_frames = target.len();
    let mut design = vec![0.0; n_frames * cfg.n_coef()];
    for (m, row) in design.chunks_mut(cfg.n_coef()).enumerate() {
        fill_design_row(target.bval(m), target.direction(m).as_ref(), cfg, row)?;
    }
    let predicted: Vec<Vec<f64>> = fits
        .fits
        .par_iter()
        .map(|fit| {
            design
                .chunks(cfg.n_coef())
                .map(|row| row.iter().zip(&fit.beta).map(|(x, b)| x * b).sum::<f64>().exp())
                .collect()
        })
        .collect();

    let mut out = SignalVolume::zeros(fits.dims, n_frames, SignalKind::Normalized)?;
    for (&v, values) in fits.voxels.iter().zip(predicted) {
        out.voxel_mut(v).copy_from_slice(&values);
    }
    out.set_mask(Some(fits.mask.clone()))?;
    Ok((out, report))
}

/// Antipodally aware nearest neighbour on the nearest shell: returns the
/// training value whose direction maximizes `|p·p_m|` among the frames of the
/// shell closest to `b` (b0 frames form their own shell). Ties go to the
/// lowest frame index.
pub fn baseline_predict(scheme: &GradientScheme, signals: &[f64], b: f64, p: &UnitDirection) -> Result<f64> {
    if scheme.is_empty() || signals.is_empty() {
        return Err(Error::invalid("baseline prediction needs training frames"));
    }
    if signals.len() != scheme.len() {
        return Err(Error::LengthMismatch {
            what: "training signals vs scheme".into(),
            left: signals.len(),
            right: scheme.len(),
        });
    }
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    let b0 = scheme.b0_indices();
    if !b0.is_empty() {
        groups.push((0.0, b0));
    }
    groups.extend(scheme.shells().into_iter().map(|s| (s.bval, s.frames)));
    let mut nearest = &groups[0];
    for g in &groups[1..] {
        if (g.0 - b).abs() < (nearest.0 - b).abs() {
            nearest = g;
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for &m in &nearest.1 {
        let v = scheme.bvec(m);
        let score = (v[0] * p.x() + v[1] * p.y() + v[2] * p.z()).abs();
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((m, score));
        }
    }
    Ok(signals[best.expect("nonempty scheme").0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme() -> GradientScheme {
        GradientScheme::new(
            vec![1000.0, 1000.0, 2000.0, 2000.0],
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.6, 0.8, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn b0_prediction_is_one() {
        let cfg = BasisConfig::new(10, 4, 3000.0).unwrap();
        let fit = VoxelFit {
            beta: (0..40).map(|i| i as f64 * 0.1 - 2.0).collect(),
            residual_variance: 0.0,
            rss: 0.0,
            n_obs: 0,
        };
        let p = UnitDirection::normalize([0.1, 0.7, -0.2]).unwrap();
        assert_eq!(predict_log(&fit, &cfg, 0.0, &p).unwrap(), 0.0);
        assert_eq!(predict_signal(&fit, &cfg, 0.0, &p).unwrap(), 1.0);
        assert_eq!(
            predict_log(&fit, &cfg, 1700.0, &p).unwrap(),
            predict_log(&fit, &cfg, 1700.0, &-p).unwrap()
        );
    }

    #[test]
    fn baseline_returns_matching_frame() {
        let s = scheme();
        let y = [0.5, 0.4, 0.2, 0.1];
        let p = UnitDirection::normalize([0.0, 1.0, 0.0]).unwrap();
        assert_eq!(baseline_predict(&s, &y, 1000.0, &p).unwrap(), 0.4);
        assert_eq!(baseline_predict(&s, &y, 1000.0, &-p).unwrap(), 0.4);
        // nearest shell is 2000, closest direction (0.6, 0.8, 0)
        assert_eq!(baseline_predict(&s, &y, 1800.0, &p).unwrap(), 0.1);
    }

    #[test]
    fn baseline_tie_takes_lowest_index() {
        let s = scheme();
        let y = [0.5, 0.4, 0.2, 0.1];
        let p = UnitDirection::normalize([1.0, 1.0, 0.0]).unwrap();
        assert_eq!(baseline_predict(&s, &y, 1000.0, &p).unwrap(), 0.5);
    }

    #[test]
    fn baseline_needs_data() {
        let p = UnitDirection::normalize([1.0, 0.0, 0.0]).unwrap();
        assert!(baseline_predict(&scheme(), &[], 1000.0, &p).is_err());
    }
}
