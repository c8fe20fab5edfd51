//! Multi-tensor phantoms with Rician noise, used as ground truth.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::scheme::GradientScheme;
use crate::io::volume::{SignalKind, SignalVolume};
use crate::rng;

/// One Gaussian diffusion compartment (D in mm²/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorCompartment {
    pub weight: f64,
    pub d: Matrix3<f64>,
}

impl TensorCompartment {
    /// Checks that `d` is symmetric positive definite and the weight lies in (0, 1].
    pub fn new(weight: f64, d: Matrix3<f64>) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::invalid(format!("compartment weight {weight} outside (0, 1]")));
        }
        if (d - d.transpose()).amax() > 1e-12 * d.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::invalid("diffusion tensor is not symmetric"));
        }
        let eig = SymmetricEigen::new(d).eigenvalues;
        if eig.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::invalid(format!(
                "diffusion tensor is not positive definite (eigenvalues {eig:?})"
            )));
        }
        Ok(TensorCompartment { weight, d })
    }

    /// `D = R diag(λ) Rᵀ` with `R = Rz(α) Ry(β) Rz(γ)` (angles in degrees).
    pub fn from_eigen(weight: f64, eigenvalues: [f64; 3], euler_deg: [f64; 3]) -> Result<Self> {
        let r = euler_rotation(euler_deg);
        let d = r * Matrix3::from_diagonal(&Vector3::from(eigenvalues)) * r.transpose();
        TensorCompartment::new(weight, (d + d.transpose()) * 0.5)
    }
}

pub fn euler_rotation(euler_deg: [f64; 3]) -> Matrix3<f64> {
    let [a, b, g] = euler_deg.map(f64::to_radians);
    let rz = |t: f64| {
        let (s, c) = t.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    };
    let (sb, cb) = b.sin_cos();
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    rz(a) * ry * rz(g)
}

/// `S = Σ w_f exp(-b pᵀ D_f p)`; weights must sum to one.
pub fn multi_tensor_signal(compartments: &[TensorCompartment], b: f64, p: [f64; 3]) -> Result<f64> {
    if compartments.is_empty() {
        return Err(Error::invalid("no compartments"));
    }
    if !(b >= 0.0) {
        return Err(Error::invalid(format!("b-value must be >= 0, got {b}")));
    }
    let total: f64 = compartments.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("compartment weights sum to {total}, not 1")));
    }
    let p = Vector3::from(p);
    Ok(compartments
        .iter()
        .map(|c| c.weight * (-b * p.dot(&(c.d * p))).exp())
        .sum())
}

/// Magnitude of a complex signal with independent Gaussian noise on both
/// channels: `√((S + ε₁)² + ε₂²)`.
pub fn add_rician_noise<R: Rng + ?Sized>(s: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return s;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma >= 0");
    let e1 = normal.sample(rng);
    let e2 = normal.sample(rng);
    ((s + e1).powi(2) + e2 * e2).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompartmentSpec {
    pub weight: f64,
    /// Eigenvalues in mm²/s.
    pub eigenvalues: [f64; 3],
    #[serde(default)]
    pub euler_deg: [f64; 3],
}

/// Box `[min, max)` of voxels sharing one compartment model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub name: String,
    pub label: u32,
    pub min: [usize; 3],
    pub max: [usize; 3],
    pub compartments: Vec<CompartmentSpec>,
}

impl RegionSpec {
    fn contains(&self, [x, y, z]: [usize; 3]) -> bool {
        (self.min[0]..self.max[0]).contains(&x)
            && (self.min[1]..self.max[1]).contains(&y)
            && (self.min[2]..self.max[2]).contains(&z)
    }
}

/// Per-voxel random perturbation of every compartment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Each Euler angle is offset by a uniform draw in ±angle_deg.
    pub angle_deg: f64,
    /// Eigenvalues are scaled by a uniform draw in 1 ± diffusivity_frac.
    pub diffusivity_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    #[serde(default = "default_s0")]
    pub s0: f64,
    /// Standard deviation of each noise channel, in intensity units.
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    pub regions: Vec<RegionSpec>,
    #[serde(default)]
    pub jitter: Option<Jitter>,
}

fn default_s0() -> f64 {
    1000.0
}

impl PhantomSpec {
    /// A layered phantom: single-fibre and crossing-fibre white-matter slabs,
    /// a grey-matter-like slab and a free-water slab (labels 1-4), with
    /// per-voxel jitter.
    pub fn layered(dims: [usize; 3], sigma: f64, seed: u64) -> Self {
        let nz = dims[2];
        let cut = |f: f64| ((nz as f64 * f).round() as usize).min(nz);
        let (z1, z2, z3) = (cut(0.375), cut(0.625), cut(0.875));
        let slab = |name: &str, label, lo, hi, compartments| RegionSpec {
            name: name.into(),
            label,
            min: [0, 0, lo],
            max: [dims[0], dims[1], hi],
            compartments,
        };
        let c = |weight, eigenvalues: [f64; 3], euler_deg| CompartmentSpec {
            weight,
            eigenvalues: eigenvalues.map(|v| v * 1e-3),
            euler_deg,
        };
        PhantomSpec {
            dims,
            s0: 1000.0,
            sigma,
            seed,
            regions: vec![
                slab(
                    "wm-single",
                    1,
                    0,
                    z1,
                    vec![
                        c(0.7, [1.7, 0.2, 0.2], [0.0, 90.0, 0.0]),
                        c(0.3, [1.2, 0.8, 0.8], [0.0, 90.0, 0.0]),
                    ],
                ),
                slab(
                    "wm-crossing",
                    2,
                    z1,
                    z2,
                    vec![
                        c(0.4, [1.7, 0.2, 0.2], [0.0, 90.0, 0.0]),
                        c(0.4, [1.7, 0.2, 0.2], [90.0, 60.0, 0.0]),
                        c(0.2, [1.0, 1.0, 1.0], [0.0; 3]),
                    ],
                ),
                slab(
                    "gm",
                    3,
                    z2,
                    z3,
                    vec![
                        c(0.8, [0.9, 0.6, 0.6], [30.0, 45.0, 0.0]),
                        c(0.2, [1.5, 1.5, 1.5], [0.0; 3]),
                    ],
                ),
                slab("csf", 4, z3, nz, vec![c(1.0, [3.0, 3.0, 3.0], [0.0; 3])]),
            ],
            jitter: Some(Jitter {
                angle_deg: 20.0,
                diffusivity_frac: 0.1,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("phantom dims {:?} must be positive", self.dims)));
        }
        if !(self.sigma >= 0.0) || !(self.s0 > 0.0) {
            return Err(Error::invalid("phantom needs sigma >= 0 and s0 > 0"));
        }
        for r in &self.regions {
            if r.compartments.is_empty() {
                return Err(Error::invalid(format!("region {} has no compartments", r.name)));
            }
            let total: f64 = r.compartments.iter().map(|c| c.weight).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("weights of region {} sum to {total}", r.name)));
            }
            for c in &r.compartments {
                TensorCompartment::from_eigen(c.weight, c.eigenvalues, c.euler_deg)?;
            }
        }
        Ok(())
    }
}

/// Generated data and its ground truth.
#[derive(Debug, Clone)]
pub struct Phantom {
    /// Noisy raw intensities (mask = voxels covered by a region).
    pub raw: SignalVolume,
    /// Noise-free intensities on the same grid.
    pub truth: SignalVolume,
    /// Region label per voxel (0 outside every region).
    pub labels: Vec<u32>,
    /// Compartments of every voxel (empty outside the mask).
    pub models: Vec<Vec<TensorCompartment>>,
}

fn voxel_model(spec: &PhantomSpec, region: &RegionSpec, voxel: usize) -> Result<Vec<TensorCompartment>> {
    let mut r = rng::rng(rng::indexed(rng::substream(spec.seed, "jitter"), voxel as u64));
    region
        .compartments
        .iter()
        .map(|c| {
            let (mut lam, mut euler) = (c.eigenvalues, c.euler_deg);
            if let Some(j) = spec.jitter {
                for e in &mut euler {
                    *e += j.angle_deg * r.random_range(-1.0..=1.0);
                }
                let scale = 1.0 + j.diffusivity_frac * r.random_range(-1.0..=1.0);
                lam = lam.map(|l| l * scale);
            }
            TensorCompartment::from_eigen(c.weight, lam, euler)
        })
        .collect()
}

/// Evaluates the phantom on `scheme`, scales by S0 and adds Rician noise.
/// Noise for voxel `v` comes from its own stream, so results do not depend on
/// thread count.
pub fn generate_phantom(spec: &PhantomSpec, scheme: &GradientScheme) -> Result<Phantom> {
    spec.validate()?;
    let [nx, ny, nz] = spec.dims;
    let n_vox = nx * ny * nz;
    let m = scheme.len();
    let noise_seed = rng::substream(spec.seed, "noise");

    type VoxelOut = (u32, Vec<TensorCompartment>, Vec<f64>, Vec<f64>);
    let voxels: Vec<VoxelOut> = (0..n_vox)
        .into_par_iter()
        .map(|v| -> Result<VoxelOut> {
            let xyz = [v % nx, (v / nx) % ny, v / (nx * ny)];
            let Some(region) = spec.regions.iter().find(|r| r.contains(xyz)) else {
                return Ok((0, Vec::new(), vec![0.0; m], vec![0.0; m]));
            };
            let model = voxel_model(spec, region, v)?;
            let mut r = rng::rng(rng::indexed(noise_seed, v as u64));
            let mut clean = Vec::with_capacity(m);
            let mut noisy = Vec::with_capacity(m);
            for f in 0..m {
                let s = spec.s0 * multi_tensor_signal(&model, scheme.bval(f), scheme.bvec(f))?;
                clean.push(s);
                noisy.push(add_rician_noise(s, spec.sigma, &mut r));
            }
            Ok((region.label, model, clean, noisy))
        })
        .collect::<Result<_>>()?;

    let mut labels = Vec::with_capacity(n_vox);
    let mut models = Vec::with_capacity(n_vox);
    let mut clean = Vec::with_capacity(n_vox * m);
    let mut noisy = Vec::with_capacity(n_vox * m);
    for (label, model, c, n) in voxels {
        labels.push(label);
        models.push(model);
        clean.extend(c);
        noisy.extend(n);
    }
    let mask: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    let raw = SignalVolume::new(spec.dims, m, noisy, SignalKind::Raw)?.with_mask(mask.clone())?;
    let truth = SignalVolume::new(spec.dims, m, clean, SignalKind::Raw)?.with_mask(mask)?;
    Ok(Phantom {
        raw,
        truth,
        labels,
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(w: f64, d: f64) -> TensorCompartment {
        TensorCompartment::new(w, Matrix3::identity() * d).unwrap()
    }

    #[test]
    fn b0_signal_is_one() {
        let c = [iso(0.3, 1e-3), iso(0.7, 2e-3)];
        assert_eq!(multi_tensor_signal(&c, 0.0, [1.0, 0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn single_isotropic_compartment() {
        let v = multi_tensor_signal(&[iso(1.0, 1e-3)], 1000.0, [0.0, 0.6, 0.8]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn two_rotated_compartments() {
        // Direct formula evaluation (numpy), frozen.
        let a = TensorCompartment::from_eigen(0.5, [2.0e-3, 0.2e-3, 0.2e-3], [0.0; 3]).unwrap();
        let b = TensorCompartment::from_eigen(0.5, [2.0e-3, 0.2e-3, 0.2e-3], [90.0, 0.0, 0.0]).unwrap();
        let v = multi_tensor_signal(&[a, b], 1000.0, [1.0, 0.0, 0.0]).unwrap();
        assert!((v - 0.47703301815729726).abs() < 1e-14, "{v}");
    }

    #[test]
    fn rejects_bad_tensors_and_weights() {
        let mut d = Matrix3::identity() * 1e-3;
        d[(0, 0)] = -1e-3;
        assert!(TensorCompartment::new(1.0, d).is_err());
        d = Matrix3::identity();
        d[(0, 1)] = 0.5;
        assert!(TensorCompartment::new(1.0, d).is_err());
        assert!(TensorCompartment::new(0.0, Matrix3::identity()).is_err());
        assert!(multi_tensor_signal(&[iso(0.5, 1e-3)], 1000.0, [1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_sigma_is_identity() {
        let mut r = rng::rng(1);
        assert_eq!(add_rician_noise(0.123, 0.0, &mut r), 0.123);
    }

    #[test]
    fn rayleigh_mean_of_pure_noise() {
        let mut r = rng::rng(42);
        let n = 1_000_000;
        let mean = (0..n).map(|_| add_rician_noise(0.0, 1.0, &mut r)).sum::<f64>() / n as f64;
        let want = (std::f64::consts::PI / 2.0).sqrt();
        assert!((mean - want).abs() / want < 0.01, "{mean}");
    }
}
