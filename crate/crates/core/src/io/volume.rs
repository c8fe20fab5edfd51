//! In-memory 4D signal volumes and b0 normalization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::scheme::GradientScheme;

/// Floor applied to normalized intensities before taking logarithms.
pub const NORMALIZED_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Raw,
    Normalized,
}

/// A grid of voxels, each holding `n_frames` intensities stored contiguously
/// (voxel-major). Voxel indices follow the NIfTI order, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalVolume {
    dims: [usize; 3],
    n_frames: usize,
    data: Vec<f64>,
    mask: Option<Vec<bool>>,
    kind: SignalKind,
    pub voxel_size: [f32; 3],
}

impl SignalVolume {
    pub fn new(dims: [usize; 3], n_frames: usize, data: Vec<f64>, kind: SignalKind) -> Result<Self> {
        let n_vox = dims[0] * dims[1] * dims[2];
        if n_vox == 0 || n_frames == 0 {
            return Err(Error::invalid(format!("empty volume {dims:?} x {n_frames}")));
        }
        if data.len() != n_vox * n_frames {
            return Err(Error::LengthMismatch {
                what: "volume data vs dims".into(),
                left: data.len(),
                right: n_vox * n_frames,
            });
        }
        Ok(SignalVolume {
            dims,
            n_frames,
            data,
            mask: None,
            kind,
            voxel_size: [1.0; 3],
        })
    }

    pub fn zeros(dims: [usize; 3], n_frames: usize, kind: SignalKind) -> Result<Self> {
        SignalVolume::new(dims, n_frames, vec![0.0; dims[0] * dims[1] * dims[2] * n_frames], kind)
    }

    /// A scalar (single frame) map.
    pub fn scalar_map(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        SignalVolume::new(dims, 1, values, SignalKind::Raw)
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        self.set_mask(Some(mask))?;
        Ok(self)
    }

    pub fn set_mask(&mut self, mask: Option<Vec<bool>>) -> Result<()> {
        if let Some(m) = &mask {
            if m.len() != self.n_voxels() {
                return Err(Error::LengthMismatch {
                    what: "mask vs volume voxels".into(),
                    left: m.len(),
                    right: self.n_voxels(),
                });
            }
        }
        self.mask = mask;
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn in_mask(&self, v: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[v])
    }

    /// Indices of voxels inside the mask (all voxels if there is none).
    pub fn masked_voxels(&self) -> Vec<usize> {
        (0..self.n_voxels()).filter(|&v| self.in_mask(v)).collect()
    }

    pub fn voxel(&self, v: usize) -> &[f64] {
        &self.data[v * self.n_frames..(v + 1) * self.n_frames]
    }

    pub fn voxel_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.data[v * self.n_frames..(v + 1) * self.n_frames]
    }

    /// Values of one frame across all voxels.
    pub fn frame(&self, m: usize) -> Vec<f64> {
        (0..self.n_voxels()).map(|v| self.data[v * self.n_frames + m]).collect()
    }

    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Keeps only the listed frames.
    pub fn select_frames(&self, frames: &[usize]) -> Result<SignalVolume> {
        if let Some(&bad) = frames.iter().find(|&&m| m >= self.n_frames) {
            return Err(Error::invalid(format!(
                "frame {bad} out of range for {} frames",
                self.n_frames
            )));
        }
        let mut data = Vec::with_capacity(self.n_voxels() * frames.len());
        for v in 0..self.n_voxels() {
            let src = self.voxel(v);
            data.extend(frames.iter().map(|&m| src[m]));
        }
        let mut out = SignalVolume::new(self.dims, frames.len(), data, self.kind)?;
        out.mask = self.mask.clone();
        out.voxel_size = self.voxel_size;
        Ok(out)
    }
}

/// Result of dividing diffusion-weighted frames by the mean b0 intensity.
#[derive(Debug, Clone)]
pub struct Normalized {
    /// Diffusion-weighted frames only.
    pub volume: SignalVolume,
    /// The scheme restricted to the kept frames.
    pub scheme: GradientScheme,
    /// Original frame index of every kept frame.
    pub kept_frames: Vec<usize>,
    /// Original indices of the dropped b0 frames.
    pub dropped_frames: Vec<usize>,
    /// Number of values raised to the floor.
    pub clamped: usize,
    /// Voxels removed from the mask because their mean b0 was not positive.
    pub degenerate_voxels: Vec<usize>,
}

/// Divides every `b > 0` frame by the voxel's mean b0 intensity. Values that
/// end up `<= 0` are raised to [`NORMALIZED_FLOOR`].
pub fn normalize_b0(volume: &SignalVolume, scheme: &GradientScheme) -> Result<Normalized> {
    if volume.n_frames() != scheme.len() {
        return Err(Error::LengthMismatch {
            what: "volume frames vs scheme entries".into(),
            left: volume.n_frames(),
            right: scheme.len(),
        });
    }
    let b0 = scheme.b0_indices();
    if b0.is_empty() {
        return Err(Error::invalid("scheme has no b = 0 frames to normalize by"));
    }
    let dw = scheme.dw_indices();
    if dw.is_empty() {
        return Err(Error::invalid("scheme has no diffusion-weighted frames"));
    }
    let n_vox = volume.n_voxels();
    let per_voxel: Vec<(Vec<f64>, usize, bool)> = (0..n_vox)
        .into_par_iter()
        .map(|v| {
            if !volume.in_mask(v) {
                return (vec![0.0; dw.len()], 0, false);
            }
            let src = volume.voxel(v);
            let s0 = b0.iter().map(|&m| src[m]).sum::<f64>() / b0.len() as f64;
            if !(s0 > 0.0) {
                return (vec![0.0; dw.len()], 0, true);
            }
            let mut clamped = 0;
            let vals = dw
                .iter()
                .map(|&m| {
                    let x = src[m] / s0;
                    if x > 0.0 {
                        x.max(NORMALIZED_FLOOR)
                    } else {
                        clamped += 1;
                        NORMALIZED_FLOOR
                    }
                })
                .collect();
            (vals, clamped, false)
        })
        .collect();

    let mut data = Vec::with_capacity(n_vox * dw.len());
    let mut mask = Vec::with_capacity(n_vox);
    let mut clamped = 0;
    let mut degenerate = Vec::new();
    for (v, (vals, c, bad)) in per_voxel.into_iter().enumerate() {
        data.extend(vals);
        clamped += c;
        if bad {
            degenerate.push(v);
        }
        mask.push(volume.in_mask(v) && !bad);
    }
    if !degenerate.is_empty() {
        log::warn!("{} voxel(s) with mean b0 <= 0 removed from the mask", degenerate.len());
    }
    if clamped > 0 {
        log::info!("{clamped} normalized value(s) clamped to {NORMALIZED_FLOOR}");
    }
    let mut out = SignalVolume::new(volume.dims(), dw.len(), data, SignalKind::Normalized)?;
    out.mask = Some(mask);
    out.voxel_size = volume.voxel_size;
    Ok(Normalized {
        volume: out,
        scheme: scheme.subset(&dw)?,
        kept_frames: dw,
        dropped_frames: b0,
        clamped,
        degenerate_voxels: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme() -> GradientScheme {
        GradientScheme::new(
            vec![0.0, 1000.0, 0.0, 1000.0],
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0; 3], [0.0, 1.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn divides_by_mean_b0() {
        let vol = SignalVolume::new([1, 1, 1], 4, vec![100.0, 50.0, 100.0, 0.0], SignalKind::Raw).unwrap();
        let n = normalize_b0(&vol, &scheme()).unwrap();
        assert_eq!(n.volume.voxel(0), &[0.5, NORMALIZED_FLOOR]);
        assert_eq!(n.clamped, 1);
        assert_eq!(n.kept_frames, vec![1, 3]);
        assert_eq!(n.dropped_frames, vec![0, 2]);
        assert_eq!(n.scheme.len(), 2);
    }

    #[test]
    fn zero_b0_voxel_is_masked_out() {
        let vol = SignalVolume::new(
            [2, 1, 1],
            4,
            vec![0.0, 5.0, 0.0, 5.0, 80.0, 40.0, 120.0, 20.0],
            SignalKind::Raw,
        )
        .unwrap();
        let n = normalize_b0(&vol, &scheme()).unwrap();
        assert_eq!(n.degenerate_voxels, vec![0]);
        assert_eq!(n.volume.mask().unwrap(), &[false, true]);
        assert_eq!(n.volume.voxel(1), &[0.4, 0.2]);
    }

    #[test]
    fn needs_b0_frames() {
        let s = GradientScheme::new(vec![1000.0], vec![[1.0, 0.0, 0.0]]).unwrap();
        let vol = SignalVolume::new([1, 1, 1], 1, vec![1.0], SignalKind::Raw).unwrap();
        assert!(matches!(normalize_b0(&vol, &s), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn frame_selection_keeps_mask() {
        let vol = SignalVolume::new([2, 1, 1], 2, vec![1.0, 2.0, 3.0, 4.0], SignalKind::Raw)
            .unwrap()
            .with_mask(vec![true, false])
            .unwrap();
        let s = vol.select_frames(&[1]).unwrap();
        assert_eq!(s.data(), &[2.0, 4.0]);
        assert_eq!(s.masked_voxels(), vec![0]);
    }
}
