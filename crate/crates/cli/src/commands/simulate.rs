use std::path::PathBuf;

use clap::Args;

use polyrbf::io::{write_nifti, write_nifti_as, NiftiDtype};
use polyrbf::protocols::hcp_like_scheme;
use polyrbf::{generate_phantom, GradientScheme, PhantomSpec, SignalVolume};

use super::{create_dir, write_json};
use crate::error::{io_err, CliError, Result, WithPath};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Phantom spec JSON; a layered phantom is used when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Grid of the layered phantom.
    #[arg(long, num_args = 3, default_values_t = [16, 16, 16])]
    pub dims: Vec<usize>,
    /// Noise standard deviation of the layered phantom (S0 = 1000).
    #[arg(long, default_value_t = 20.0)]
    pub sigma: f64,
    /// Gradient table; the 3-shell × 90 reference design when omitted.
    #[arg(long, requires = "bvecs")]
    pub bvals: Option<PathBuf>,
    #[arg(long, requires = "bvals")]
    pub bvecs: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(args: &SimulateArgs, seed: u64) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str::<PhantomSpec>(&text).map_err(|e| CliError::InFile {
                path: path.clone(),
                source: e.into(),
            })?
        }
        None => {
            let d = &args.dims;
            PhantomSpec::layered([d[0], d[1], d[2]], args.sigma, seed)
        }
    };
    spec.seed = seed;
    let scheme = match (&args.bvals, &args.bvecs) {
        (Some(bvals), Some(bvecs)) => GradientScheme::read_fsl(bvals, bvecs).in_file(bvecs)?,
        _ => hcp_like_scheme()?,
    };
    let phantom = generate_phantom(&spec, &scheme)?;

    let dir = &args.out_dir;
    create_dir(dir)?;
    write_nifti(&phantom.raw, &dir.join("dwi.nii"))?;
    write_nifti(&phantom.truth, &dir.join("truth.nii"))?;
    let labels = SignalVolume::scalar_map(spec.dims, phantom.labels.iter().map(|&l| l as f64).collect())?;
    write_nifti_as(&labels, &dir.join("labels.nii"), NiftiDtype::I16)?;
    let mask = SignalVolume::scalar_map(
        spec.dims,
        phantom.labels.iter().map(|&l| (l != 0) as u8 as f64).collect(),
    )?;
    write_nifti_as(&mask, &dir.join("mask.nii"), NiftiDtype::U8)?;
    scheme.write_fsl(&dir.join("bvals"), &dir.join("bvecs"))?;
    write_json(&spec, &dir.join("spec.json"))?;
    Ok(())
}
