//! Evaluation statistics: log-scale MSE, paired t-tests and −log p threshold
//! counts, ICC reproducibility and difference summaries.

pub mod special;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use special::{incomplete_beta, ln_gamma, student_t_two_sided};

/// Thresholds on −log p used by the voxel-wise comparisons.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [3.0, 5.0, 10.0, 15.0];

fn check_lengths(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch {
            what: what.into(),
            left: a,
            right: b,
        });
    }
    Ok(())
}

/// Mean of `(ln predicted - ln observed)²` over all pairs.
pub fn mse_log(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    check_lengths("predicted vs observed", predicted.len(), observed.len())?;
    if predicted.is_empty() {
        return Err(Error::invalid("mse_log needs at least one pair"));
    }
    let mut sum = 0.0;
    for (i, (&p, &o)) in predicted.iter().zip(observed).enumerate() {
        if !(p > 0.0 && o > 0.0) {
            return Err(Error::invalid(format!(
                "mse_log needs positive values; pair {i} is ({p}, {o})"
            )));
        }
        let d = p.ln() - o.ln();
        sum += d * d;
    }
    Ok(sum / predicted.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// Zero spread with a nonzero mean difference: `t` is infinite and `p` is 0.
    pub degenerate: bool,
}

/// Paired t-test on `a - b` with `n - 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    check_lengths("paired samples", a.len(), b.len())?;
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest {
                t: 0.0,
                p: 1.0,
                df,
                degenerate: false,
            }
        } else {
            TTest {
                t: f64::INFINITY.copysign(mean),
                p: 0.0,
                df,
                degenerate: true,
            }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    Ok(TTest {
        t,
        p: student_t_two_sided(t, df as f64),
        df,
        degenerate: false,
    })
}

/// Voxel-wise paired t-tests. `a[r][v]` is replicate `r` at voxel `v`.
pub fn voxelwise_paired_t(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<TTest>> {
    check_lengths("replicates", a.len(), b.len())?;
    let n_vox = a.first().map_or(0, Vec::len);
    for (ra, rb) in a.iter().zip(b) {
        check_lengths("voxels per replicate", ra.len(), n_vox)?;
        check_lengths("voxels per replicate", rb.len(), n_vox)?;
    }
    (0..n_vox)
        .into_par_iter()
        .map(|v| {
            let xa: Vec<f64> = a.iter().map(|r| r[v]).collect();
            let xb: Vec<f64> = b.iter().map(|r| r[v]).collect();
            paired_t_test(&xa, &xb)
        })
        .collect()
}

/// Logarithm base for −log p.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
}

impl LogBase {
    pub fn neglog(self, p: f64) -> f64 {
        match self {
            LogBase::Natural => -p.ln(),
            LogBase::Ten => -p.log10(),
        }
    }
}

/// Number of p-values with `−ln p > τ` for each threshold.
pub fn neglogp_threshold_counts(p_values: &[f64], thresholds: &[f64]) -> Vec<usize> {
    neglogp_threshold_counts_base(p_values, thresholds, LogBase::Natural)
}

pub fn neglogp_threshold_counts_base(p_values: &[f64], thresholds: &[f64], base: LogBase) -> Vec<usize> {
    let scores: Vec<f64> = p_values.iter().map(|&p| base.neglog(p)).collect();
    thresholds
        .iter()
        .map(|&tau| scores.iter().filter(|&&s| s > tau).count())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Icc {
    /// NaN when the total variance is zero.
    pub value: f64,
    pub within: f64,
    pub total: f64,
    /// The raw ratio fell outside [0, 1].
    pub clipped: bool,
    pub undefined: bool,
}

fn sample_variance(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = x.clone().count();
    let mean = x.clone().sum::<f64>() / n as f64;
    x.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// `1 − mean within-subject sample variance / pooled sample variance`,
/// clipped to [0, 1]. `values[s]` holds the scans of subject `s`.
pub fn icc(values: &[Vec<f64>]) -> Result<Icc> {
    if values.len() < 2 {
        return Err(Error::invalid(format!("ICC needs >= 2 subjects, got {}", values.len())));
    }
    if let Some(s) = values.iter().position(|v| v.len() < 2) {
        return Err(Error::invalid(format!(
            "ICC needs >= 2 scans per subject; subject {s} has {}",
            values[s].len()
        )));
    }
    let within = values.iter().map(|v| sample_variance(v.iter().copied())).sum::<f64>() / values.len() as f64;
    let total = sample_variance(values.iter().flatten().copied());
    if total == 0.0 {
        return Ok(Icc {
            value: f64::NAN,
            within,
            total,
            clipped: false,
            undefined: true,
        });
    }
    let raw = 1.0 - within / total;
    Ok(Icc {
        value: raw.clamp(0.0, 1.0),
        within,
        total,
        clipped: !(0.0..=1.0).contains(&raw),
        undefined: false,
    })
}

/// Per-region share of voxels whose ICC went up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub label: u32,
    pub n_voxels: usize,
    pub improved_fraction: f64,
    pub median_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccDifference {
    pub original: Vec<f64>,
    pub harmonized: Vec<f64>,
    /// harmonized − original; NaN where either ICC is undefined.
    pub difference: Vec<f64>,
    /// Share of voxels with a positive difference among those where both are defined.
    pub improved_fraction: f64,
    pub median_difference: f64,
    /// Every defined difference is exactly zero.
    pub all_ties: bool,
    pub regions: Vec<RegionSummary>,
}

fn improved(diff: &[f64]) -> (f64, f64, bool) {
    let defined: Vec<f64> = diff.iter().copied().filter(|d| !d.is_nan()).collect();
    if defined.is_empty() {
        return (0.0, f64::NAN, false);
    }
    let up = defined.iter().filter(|&&d| d > 0.0).count();
    let ties = defined.iter().all(|&d| d == 0.0);
    (up as f64 / defined.len() as f64, quantile(&defined, 0.5), ties)
}

/// Voxel-wise ICC of two feature sets over the same scans. `original[s][v]`
/// is scan `s` at voxel `v`; `subjects[s]` names the subject of scan `s`.
pub fn icc_difference_map(
    original: &[Vec<f64>],
    harmonized: &[Vec<f64>],
    subjects: &[String],
    labels: Option<&[u32]>,
) -> Result<IccDifference> {
    check_lengths("original scans vs subject list", original.len(), subjects.len())?;
    check_lengths("harmonized scans vs subject list", harmonized.len(), subjects.len())?;
    let n_vox = original.first().map_or(0, Vec::len);
    for (o, h) in original.iter().zip(harmonized) {
        check_lengths("voxels per scan", o.len(), n_vox)?;
        check_lengths("voxels per scan", h.len(), n_vox)?;
    }
    if let Some(l) = labels {
        check_lengths("region labels vs voxels", l.len(), n_vox)?;
    }
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    for (s, name) in subjects.iter().enumerate() {
        match groups.iter_mut().find(|(g, _)| *g == name.as_str()) {
            Some((_, scans)) => scans.push(s),
            None => groups.push((name.as_str(), vec![s])),
        }
    }
    let voxel_icc = |set: &[Vec<f64>]| -> Result<Vec<f64>> {
        (0..n_vox)
            .into_par_iter()
            .map(|v| {
                let values: Vec<Vec<f64>> = groups
                    .iter()
                    .map(|(_, scans)| scans.iter().map(|&s| set[s][v]).collect())
                    .collect();
                icc(&values).map(|r| r.value)
            })
            .collect()
    };
    let orig = voxel_icc(original)?;
    let harm = voxel_icc(harmonized)?;
    let difference: Vec<f64> = orig.iter().zip(&harm).map(|(o, h)| h - o).collect();
    let (improved_fraction, median_difference, all_ties) = improved(&difference);

    let mut regions = Vec::new();
    if let Some(labels) = labels {
        let mut by_label: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for (&l, &d) in labels.iter().zip(&difference) {
            by_label.entry(l).or_default().push(d);
        }
        for (label, diffs) in by_label {
            let (f, med, _) = improved(&diffs);
            regions.push(RegionSummary {
                label,
                n_voxels: diffs.len(),
                improved_fraction: f,
                median_difference: med,
            });
        }
    }
    Ok(IccDifference {
        original: orig,
        harmonized: harm,
        difference,
        improved_fraction,
        median_difference,
        all_ties,
        regions,
    })
}

/// Linear-interpolation quantile of unsorted data (NaN for empty input).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Quantiles of `|a − b|` over voxels.
pub fn abs_diff_quantiles(a: &[f64], b: &[f64], qs: &[f64]) -> Result<Vec<f64>> {
    check_lengths("maps", a.len(), b.len())?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    Ok(qs.iter().map(|&q| quantile(&d, q)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_log_cases() {
        let o = [0.5, 0.2, 0.9];
        assert_eq!(mse_log(&o, &o).unwrap(), 0.0);
        let p: Vec<f64> = o.iter().map(|x| x * std::f64::consts::E).collect();
        assert!((mse_log(&p, &o).unwrap() - 1.0).abs() < 1e-15);
        assert!(mse_log(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse_log(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn t_test_fixture() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
        assert!((r.t - 3.464101615137754).abs() < 1e-12);
        assert_eq!(r.df, 2);
        assert!((r.p - 0.07417990022744855).abs() < 1e-12);
        let flipped = paired_t_test(&[0.0; 3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(flipped.t, -r.t);
        assert_eq!(flipped.p, r.p);
    }

    #[test]
    fn t_test_degenerate_cases() {
        let same = paired_t_test(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((same.t, same.p, same.degenerate), (0.0, 1.0, false));
        let shift = paired_t_test(&[2.0, 3.0], &[1.0, 2.0]).unwrap();
        assert_eq!(shift.p, 0.0);
        assert!(shift.degenerate);
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn threshold_counts() {
        let p = [1.0, 1.0, 1.0];
        assert_eq!(neglogp_threshold_counts(&p, &DEFAULT_THRESHOLDS), vec![0; 4]);
        let p = [1.0, 0.5, 1e-2, 1e-5, 1e-8];
        assert_eq!(neglogp_threshold_counts(&p, &[0.0]), vec![4]);
        assert_eq!(neglogp_threshold_counts(&p, &[3.0, 5.0, 10.0, 15.0]), vec![3, 2, 2, 1]);
        assert_eq!(neglogp_threshold_counts_base(&p, &[3.0], LogBase::Ten), vec![2]);
    }

    #[test]
    fn icc_fixture() {
        let r = icc(&[vec![0.0, 2.0], vec![10.0, 12.0]]).unwrap();
        assert_eq!(r.within, 2.0);
        assert!((r.total - 104.0 / 3.0).abs() < 1e-12);
        assert!((r.value - 0.9423076923076923).abs() < 1e-12);
    }

    #[test]
    fn icc_edges() {
        let perfect = icc(&[vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!(perfect.value, 1.0);
        let flat = icc(&[vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap();
        assert!(flat.undefined && flat.value.is_nan());
        // within > total drives the raw value negative
        let neg = icc(&[vec![0.0, 10.0], vec![10.0, 0.0]]).unwrap();
        assert_eq!(neg.value, 0.0);
        assert!(neg.clipped);
        assert!(icc(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn identical_sets_are_all_ties() {
        let scans = vec![vec![0.1, 0.5], vec![0.2, 0.4], vec![0.8, 0.9], vec![0.7, 1.0]];
        let subjects: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let r = icc_difference_map(&scans, &scans, &subjects, None).unwrap();
        assert!(r.difference.iter().all(|&d| d == 0.0));
        assert_eq!(r.improved_fraction, 0.0);
        assert!(r.all_ties);
    }

    #[test]
    fn region_summaries_follow_labels() {
        let orig = vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![5.0, 5.0, 5.0],
            vec![6.0, 6.0, 6.0],
        ];
        let harm = vec![
            vec![0.0, 0.5, 0.0],
            vec![0.2, 0.5, 1.0],
            vec![5.0, 5.0, 5.0],
            vec![5.2, 5.0, 6.0],
        ];
        let subjects: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let r1 = icc_difference_map(&orig, &harm, &subjects, Some(&[1, 2, 3])).unwrap();
        let r2 = icc_difference_map(&orig, &harm, &subjects, Some(&[3, 1, 2])).unwrap();
        let find = |r: &IccDifference, l: u32| r.regions.iter().find(|s| s.label == l).unwrap().clone();
        for (a, b) in [(1, 3), (2, 1), (3, 2)] {
            let (x, y) = (find(&r1, a), find(&r2, b));
            assert_eq!((x.n_voxels, x.improved_fraction), (y.n_voxels, y.improved_fraction));
        }
        assert_eq!(find(&r1, 1).improved_fraction, 1.0);
    }

    #[test]
    fn quantiles() {
        let q = abs_diff_quantiles(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5], &[0.0, 0.5, 1.0, 0.25]).unwrap();
        assert_eq!(q, vec![1.0, 3.0, 5.0, 2.0]);
    }
}
