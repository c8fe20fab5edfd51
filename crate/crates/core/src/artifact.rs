//! Binary container for a fitted volume.
//!
//! Layout: 8-byte magic `PRBFFIT1`, a little-endian u64 header length, a JSON
//! header, then little-endian blocks: u64 voxel indices, f64 coefficients
//! (voxel-major), and per voxel `(residual_variance, rss, n_obs)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::BasisConfig;
use crate::error::{Error, Result};
use crate::estimator::{FitVolume, VoxelFit};

pub const MAGIC: &[u8; 8] = b"PRBFFIT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: BasisConfig,
    scheme_fingerprint: String,
    design_fingerprint: String,
    dims: [usize; 3],
    n_voxels: usize,
    n_coef: usize,
    max_train_b: f64,
    ridge_d: f64,
}

pub fn to_bytes(fit: &FitVolume) -> Result<Vec<u8>> {
    let n_coef = fit.config.n_coef();
    if let Some(f) = fit.fits.iter().find(|f| f.beta.len() != n_coef) {
        return Err(Error::Artifact(format!(
            "fit with {} coefficients, expected {n_coef}",
            f.beta.len()
        )));
    }
    let header = Header {
        version: VERSION,
        config: fit.config.clone(),
        scheme_fingerprint: fit.scheme_fingerprint.clone(),
        design_fingerprint: fit.design_fingerprint.clone(),
        dims: fit.dims,
        n_voxels: fit.voxels.len(),
        n_coef,
        max_train_b: fit.max_train_b,
        ridge_d: fit.ridge_d,
    };
    let json = serde_json::to_vec(&header)?;
    let n = fit.voxels.len();
    let mut out = Vec::with_capacity(16 + json.len() + n * 8 * (4 + n_coef));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for &v in &fit.voxels {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for f in &fit.fits {
        for b in &f.beta {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    for f in &fit.fits {
        out.extend_from_slice(&f.residual_variance.to_le_bytes());
        out.extend_from_slice(&f.rss.to_le_bytes());
        out.extend_from_slice(&(f.n_obs as u64).to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Artifact(format!(
                    "truncated: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len()
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<FitVolume> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Artifact("bad magic".into()));
    }
    let len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    if header.version != VERSION {
        return Err(Error::Artifact(format!("unsupported version {}", header.version)));
    }
    header.config.validate()?;
    if header.n_coef != header.config.n_coef() {
        return Err(Error::Artifact("coefficient count disagrees with the basis".into()));
    }
    let n_grid: usize = header.dims.iter().product();
    let mut voxels = Vec::with_capacity(header.n_voxels);
    for _ in 0..header.n_voxels {
        let v = r.u64()? as usize;
        if v >= n_grid || voxels.last().is_some_and(|&p| p >= v) {
            return Err(Error::Artifact(format!(
                "voxel index {v} out of order or outside the grid"
            )));
        }
        voxels.push(v);
    }
    let mut betas = Vec::with_capacity(header.n_voxels);
    for _ in 0..header.n_voxels {
        betas.push((0..header.n_coef).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
    }
    let mut fits = Vec::with_capacity(header.n_voxels);
    for beta in betas {
        fits.push(VoxelFit {
            beta,
            residual_variance: r.f64()?,
            rss: r.f64()?,
            n_obs: r.u64()? as usize,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Artifact(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let mut mask = vec![false; n_grid];
    for &v in &voxels {
        mask[v] = true;
    }
    Ok(FitVolume {
        dims: header.dims,
        mask,
        voxels,
        fits,
        config: header.config,
        max_train_b: header.max_train_b,
        scheme_fingerprint: header.scheme_fingerprint,
        design_fingerprint: header.design_fingerprint,
        ridge_d: header.ridge_d,
    })
}

pub fn write_fit(fit: &FitVolume, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(fit)?).map_err(|e| Error::file(path, e))
}

pub fn read_fit(path: &Path) -> Result<FitVolume> {
    let buf = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    from_bytes(&buf)
}
