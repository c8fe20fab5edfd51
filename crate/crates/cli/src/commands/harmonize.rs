use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use polyrbf::harmonize::{harmonize_pipeline, DatasetInput, PipelineConfig};
use polyrbf::io::write_nifti;
use polyrbf::protocols::hcp_like_scheme;
use polyrbf::{Feature, GradientScheme};

use super::{create_dir, load_dwi, write_json};
use crate::config::ModelConfig;
use crate::error::{io_err, CliError, Result, WithPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct HarmonizeArgs {
    /// JSON manifest of datasets.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "on")]
    pub combat: Switch,
    /// Empirical-Bayes shrinkage inside the batch adjustment.
    #[arg(long, value_enum, default_value = "on")]
    pub empirical_bayes: Switch,
    #[arg(long, default_value = "fa")]
    pub feature: Feature,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub allow_extrapolation: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    dwi: PathBuf,
    bvals: PathBuf,
    bvecs: PathBuf,
    #[serde(default)]
    mask: Option<PathBuf>,
    batch: String,
    #[serde(default)]
    subject: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetEntry {
    bvals: PathBuf,
    bvecs: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    datasets: Vec<ManifestEntry>,
    /// Defaults to the 3-shell × 90 reference design.
    #[serde(default)]
    target: Option<TargetEntry>,
}

#[derive(Debug, Serialize)]
struct DatasetRecord<'a> {
    name: &'a str,
    batch: &'a str,
    subject: Option<&'a str>,
    scheme_fingerprint: &'a str,
    design_fingerprint: &'a str,
    in_sample_mse: f64,
    clamped_values: usize,
    extrapolated_frames: usize,
    maps: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Provenance<'a> {
    config: PipelineConfig,
    seed: u64,
    feature: &'a str,
    target_fingerprint: &'a str,
    n_voxels: usize,
    datasets: Vec<DatasetRecord<'a>>,
    combat_batches: Option<&'a [String]>,
    combat_iterations: Option<&'a [usize]>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn run(args: &HarmonizeArgs, seed: u64) -> Result<()> {
    let model = ModelConfig::load(args.config.as_deref())?;
    let text = std::fs::read_to_string(&args.manifest).map_err(io_err(&args.manifest))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::InFile {
        path: args.manifest.clone(),
        source: e.into(),
    })?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let target = match &manifest.target {
        Some(t) => {
            let bvecs = resolve(base, &t.bvecs);
            GradientScheme::read_fsl(&resolve(base, &t.bvals), &bvecs).in_file(&bvecs)?
        }
        None => hcp_like_scheme()?,
    };
    let mut data = Vec::with_capacity(manifest.datasets.len());
    for e in &manifest.datasets {
        let mask = e.mask.as_ref().map(|m| resolve(base, m));
        let (volume, scheme) = load_dwi(
            &resolve(base, &e.dwi),
            &resolve(base, &e.bvals),
            &resolve(base, &e.bvecs),
            mask.as_deref(),
        )?;
        data.push(DatasetInput {
            name: e.name.clone(),
            batch: e.batch.clone(),
            subject: e.subject.clone(),
            volume,
            scheme,
        });
    }
    let cfg = PipelineConfig {
        n: model.n,
        k: model.fixed_k()?,
        taper_mult: model.taper_mult,
        ridge: model.ridge(),
        feature: args.feature,
        combat: args.combat == Switch::On,
        empirical_bayes: args.empirical_bayes == Switch::On,
        allow_extrapolation: args.allow_extrapolation,
    };
    let out = harmonize_pipeline(&data, &target, &cfg)?;

    let maps_dir = args.out_dir.join("maps");
    create_dir(&maps_dir)?;
    let feature = cfg.feature.name();
    let mut records = Vec::new();
    for d in &out.datasets {
        let mut maps = Vec::new();
        let variants = [
            ("original", Some(&d.original)),
            ("harmonized", Some(&d.harmonized)),
            ("original_combat", d.original_combat.as_ref()),
            ("harmonized_combat", d.harmonized_combat.as_ref()),
        ];
        for (tag, values) in variants {
            if let Some(values) = values {
                let file = format!("{}_{tag}_{feature}.nii", d.name);
                write_nifti(&out.to_map(values)?, &maps_dir.join(&file))?;
                maps.push(format!("maps/{file}"));
            }
        }
        records.push(DatasetRecord {
            name: &d.name,
            batch: &d.batch,
            subject: d.subject.as_deref(),
            scheme_fingerprint: &d.scheme_fingerprint,
            design_fingerprint: &d.design_fingerprint,
            in_sample_mse: d.in_sample_mse,
            clamped_values: d.clamped,
            extrapolated_frames: d.extrapolated_frames,
            maps,
        });
    }
    let provenance = Provenance {
        config: cfg,
        seed,
        feature,
        target_fingerprint: &out.target_fingerprint,
        n_voxels: out.voxels.len(),
        datasets: records,
        combat_batches: out.combat_harmonized.as_ref().map(|m| m.batches.as_slice()),
        combat_iterations: out.combat_harmonized.as_ref().map(|m| m.iterations.as_slice()),
    };
    write_json(&provenance, &args.out_dir.join("provenance.json"))
}
