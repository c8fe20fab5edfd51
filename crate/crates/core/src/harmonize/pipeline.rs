//! Per-dataset normalize → fit → resample → feature extraction, followed by an
//! optional pooled batch adjustment.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::combat::{combat, CombatModel, CombatOptions};
use crate::basis::{BasisConfig, Ridge, DEFAULT_K, DEFAULT_N, DEFAULT_TAPER_MULT};
use crate::error::{Error, Result};
use crate::estimator::{fit_volume, Projector};
use crate::io::scheme::GradientScheme;
use crate::io::volume::{normalize_b0, SignalVolume};
use crate::microstructure::{normalized_feature_values, Feature};
use crate::predictor::resample_volume;

/// One acquisition to harmonize. The volume holds raw intensities; its mask,
/// if any, limits the voxels processed.
#[derive(Debug, Clone)]
pub struct DatasetInput {
    pub name: String,
    /// Protocol/scanner label used as the batch.
    pub batch: String,
    pub subject: Option<String>,
    pub volume: SignalVolume,
    pub scheme: GradientScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub n: usize,
    pub k: usize,
    pub taper_mult: f64,
    pub ridge: Ridge,
    pub feature: Feature,
    pub combat: bool,
    pub empirical_bayes: bool,
    pub allow_extrapolation: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n: DEFAULT_N,
            k: DEFAULT_K,
            taper_mult: DEFAULT_TAPER_MULT,
            ridge: Ridge::default(),
            feature: Feature::Fa,
            combat: true,
            empirical_bayes: true,
            allow_extrapolation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFeatures {
    pub name: String,
    pub batch: String,
    pub subject: Option<String>,
    /// Feature from the acquired signal, over the common voxels.
    pub original: Vec<f64>,
    /// Feature from the signal predicted on the target scheme.
    pub harmonized: Vec<f64>,
    pub original_combat: Option<Vec<f64>>,
    pub harmonized_combat: Option<Vec<f64>>,
    pub scheme_fingerprint: String,
    pub design_fingerprint: String,
    pub in_sample_mse: f64,
    pub clamped: usize,
    pub extrapolated_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub dims: [usize; 3],
    /// Voxels fitted in every dataset, ascending linear indices.
    pub voxels: Vec<usize>,
    pub feature: Feature,
    pub target_fingerprint: String,
    pub datasets: Vec<DatasetFeatures>,
    pub combat_original: Option<CombatModel>,
    pub combat_harmonized: Option<CombatModel>,
}

impl PipelineOutput {
    /// Scatters per-voxel values back onto the grid (zero outside the common
    /// mask).
    pub fn to_map(&self, values: &[f64]) -> Result<SignalVolume> {
        let n: usize = self.dims.iter().product();
        let mut full = vec![0.0; n];
        for (&v, &x) in self.voxels.iter().zip(values) {
            full[v] = x;
        }
        let mut mask = vec![false; n];
        for &v in &self.voxels {
            mask[v] = true;
        }
        SignalVolume::scalar_map(self.dims, full)?.with_mask(mask)
    }
}

fn stage<'a>(stage: &'static str, dataset: &'a str) -> impl FnOnce(Error) -> Error + 'a {
    move |e| Error::Stage {
        stage,
        dataset: dataset.to_string(),
        source: Box::new(e),
    }
}

struct Processed {
    mask: Vec<bool>,
    normalized: SignalVolume,
    dw_scheme: GradientScheme,
    predicted: SignalVolume,
    scheme_fingerprint: String,
    design_fingerprint: String,
    in_sample_mse: f64,
    clamped: usize,
    extrapolated_frames: usize,
}

fn process(d: &DatasetInput, target: &GradientScheme, cfg: &PipelineConfig) -> Result<Processed> {
    let name = d.name.as_str();
    let norm = normalize_b0(&d.volume, &d.scheme).map_err(stage("normalize", name))?;
    let basis = BasisConfig::new(cfg.n, cfg.k, norm.scheme.max_b())
        .and_then(|b| b.with_taper(cfg.taper_mult))
        .and_then(|b| b.with_ridge(cfg.ridge))
        .map_err(stage("fit", name))?;
    let projector = Projector::for_scheme(&norm.scheme, &basis).map_err(stage("fit", name))?;
    let fits = fit_volume(&projector, &basis, &norm.scheme, &norm.volume).map_err(stage("fit", name))?;
    let (predicted, report) =
        resample_volume(&fits, target, cfg.allow_extrapolation).map_err(stage("resample", name))?;
    Ok(Processed {
        mask: fits.mask.clone(),
        normalized: norm.volume,
        dw_scheme: norm.scheme,
        predicted,
        scheme_fingerprint: fits.scheme_fingerprint.clone(),
        design_fingerprint: fits.design_fingerprint.clone(),
        in_sample_mse: fits.in_sample_mse(),
        clamped: norm.clamped,
        extrapolated_frames: report.frames.len(),
    })
}

fn adjust(values: &[Vec<f64>], batches: &[String], eb: bool) -> Result<(CombatModel, Vec<Vec<f64>>)> {
    let x = DMatrix::from_fn(values.len(), values[0].len(), |i, j| values[i][j]);
    let (model, y) = combat(&x, batches, None, CombatOptions { empirical_bayes: eb })?;
    let rows = (0..y.nrows()).map(|i| y.row(i).iter().copied().collect()).collect();
    Ok((model, rows))
}

/// Runs the harmonization flow over `data` with `target` as the common
/// acquisition design.
pub fn harmonize_pipeline(
    data: &[DatasetInput],
    target: &GradientScheme,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let first = data
        .first()
        .ok_or_else(|| Error::invalid("harmonization needs at least one dataset"))?;
    let dims = first.volume.dims();
    if let Some(d) = data.iter().find(|d| d.volume.dims() != dims) {
        return Err(Error::invalid(format!(
            "dataset {} has grid {:?}, expected {:?}",
            d.name,
            d.volume.dims(),
            dims
        )));
    }
    let processed: Vec<Processed> = data
        .par_iter()
        .map(|d| process(d, target, cfg))
        .collect::<Result<_>>()?;

    let n_vox: usize = dims.iter().product();
    let voxels: Vec<usize> = (0..n_vox).filter(|&v| processed.iter().all(|p| p.mask[v])).collect();
    if voxels.is_empty() {
        return Err(Error::invalid("datasets share no masked voxels"));
    }

    let features: Vec<(Vec<f64>, Vec<f64>)> = data
        .par_iter()
        .zip(&processed)
        .map(|(d, p)| {
            let original = normalized_feature_values(&p.normalized, &p.dw_scheme, &voxels, cfg.feature)
                .map_err(stage("features", &d.name))?;
            let harmonized = normalized_feature_values(&p.predicted, target, &voxels, cfg.feature)
                .map_err(stage("features", &d.name))?;
            Ok((original, harmonized))
        })
        .collect::<Result<_>>()?;
    let (original, harmonized): (Vec<_>, Vec<_>) = features.into_iter().unzip();

    let (mut combat_original, mut combat_harmonized) = (None, None);
    let (mut oc, mut hc) = (None, None);
    if cfg.combat {
        let batches: Vec<String> = data.iter().map(|d| d.batch.clone()).collect();
        let tag = |e| Error::Stage {
            stage: "combat",
            dataset: "pooled".into(),
            source: Box::new(e),
        };
        let (m, y) = adjust(&original, &batches, cfg.empirical_bayes).map_err(tag)?;
        combat_original = Some(m);
        oc = Some(y);
        let (m, y) = adjust(&harmonized, &batches, cfg.empirical_bayes).map_err(tag)?;
        combat_harmonized = Some(m);
        hc = Some(y);
    }

    let datasets = data
        .iter()
        .zip(processed)
        .zip(original.into_iter().zip(harmonized))
        .enumerate()
        .map(|(i, ((d, p), (o, h)))| DatasetFeatures {
            name: d.name.clone(),
            batch: d.batch.clone(),
            subject: d.subject.clone(),
            original: o,
            harmonized: h,
            original_combat: oc.as_ref().map(|rows: &Vec<Vec<f64>>| rows[i].clone()),
            harmonized_combat: hc.as_ref().map(|rows: &Vec<Vec<f64>>| rows[i].clone()),
            scheme_fingerprint: p.scheme_fingerprint,
            design_fingerprint: p.design_fingerprint,
            in_sample_mse: p.in_sample_mse,
            clamped: p.clamped,
            extrapolated_frames: p.extrapolated_frames,
        })
        .collect();

    Ok(PipelineOutput {
        dims,
        voxels,
        feature: cfg.feature,
        target_fingerprint: target.fingerprint(),
        datasets,
        combat_original,
        combat_harmonized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};
    use crate::protocols::multi_shell_scheme;

    fn dataset(name: &str, batch: &str, seed: u64, shells: &[(f64, usize)]) -> DatasetInput {
        let scheme = multi_shell_scheme(shells, 3).unwrap();
        let spec = PhantomSpec::layered([3, 3, 4], 10.0, seed);
        let ph = generate_phantom(&spec, &scheme).unwrap();
        DatasetInput {
            name: name.into(),
            batch: batch.into(),
            subject: None,
            volume: ph.raw,
            scheme,
        }
    }

    fn target() -> GradientScheme {
        multi_shell_scheme(&[(1000.0, 20), (2000.0, 20)], 2).unwrap()
    }

    fn cfg() -> PipelineConfig {
        PipelineConfig {
            k: 2,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let shells = [(1000.0, 20), (2000.0, 20)];
        let a = dataset("a", "x", 5, &shells);
        let b = DatasetInput {
            name: "b".into(),
            ..a.clone()
        };
        let out = harmonize_pipeline(&[a, b], &target(), &PipelineConfig { combat: false, ..cfg() }).unwrap();
        assert_eq!(out.voxels.len(), 36);
        assert_eq!(out.datasets[0].original, out.datasets[1].original);
        assert_eq!(out.datasets[0].harmonized, out.datasets[1].harmonized);
        assert!(out.datasets[0].harmonized.iter().all(|f| (0.0..=1.0).contains(f)));
        assert!(out.combat_harmonized.is_none());
    }

    #[test]
    fn combat_outputs_present_when_enabled() {
        let shells = [(1000.0, 20), (2000.0, 20)];
        let data = vec![
            dataset("a1", "x", 1, &shells),
            dataset("a2", "x", 2, &shells),
            dataset("b1", "y", 3, &[(1000.0, 12), (2000.0, 25)]),
            dataset("b2", "y", 4, &[(1000.0, 12), (2000.0, 25)]),
        ];
        let out = harmonize_pipeline(&data, &target(), &cfg()).unwrap();
        assert!(out
            .datasets
            .iter()
            .all(|d| d.harmonized_combat.is_some() && d.original_combat.is_some()));
        assert_eq!(out.combat_harmonized.as_ref().unwrap().batches, vec!["x", "y"]);
        let map = out.to_map(&out.datasets[0].harmonized).unwrap();
        assert_eq!(map.n_frames(), 1);
    }

    #[test]
    fn extrapolation_is_a_tagged_error() {
        let data = vec![dataset("low", "x", 1, &[(1000.0, 20), (1500.0, 20)])];
        let err = harmonize_pipeline(&data, &target(), &cfg()).unwrap_err();
        match err {
            Error::Stage { stage, dataset, .. } => {
                assert_eq!(stage, "resample");
                assert_eq!(dataset, "low");
            }
            other => panic!("unexpected {other}"),
        }
    }
}
