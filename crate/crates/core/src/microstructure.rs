//! Diffusion tensor estimation and scalar features (FA, MD).

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::scheme::GradientScheme;
use crate::io::volume::SignalVolume;

const N_PARAMS: usize = 7;

/// Symmetric diffusion tensor in mm²/s plus the fitted log-S0 intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionTensor {
    /// Dxx, Dyy, Dzz, Dxy, Dxz, Dyz
    pub components: [f64; 6],
    pub log_s0: f64,
}

impl DiffusionTensor {
    pub fn matrix(&self) -> Matrix3<f64> {
        let [xx, yy, zz, xy, xz, yz] = self.components;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    /// Eigenvalues, largest first.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let mut e: Vec<f64> = SymmetricEigen::new(self.matrix()).eigenvalues.iter().copied().collect();
        e.sort_by(|a, b| b.total_cmp(a));
        [e[0], e[1], e[2]]
    }

    pub fn features(&self) -> TensorFeatures {
        let eig = self.eigenvalues();
        TensorFeatures {
            fa: fa(eig),
            md: md(eig),
            eigenvalues: eig,
            negative_eigenvalues: eig.iter().any(|&l| l < 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorFeatures {
    pub fa: f64,
    pub md: f64,
    pub eigenvalues: [f64; 3],
    /// Set when any eigenvalue is negative; FA/MD are computed from the raw values.
    pub negative_eigenvalues: bool,
}

/// Fractional anisotropy; 0 for the zero tensor.
pub fn fa(eigenvalues: [f64; 3]) -> f64 {
    let mean = md(eigenvalues);
    let num: f64 = eigenvalues.iter().map(|l| (l - mean).powi(2)).sum();
    let den: f64 = eigenvalues.iter().map(|l| l * l).sum();
    if den == 0.0 {
        0.0
    } else {
        (1.5 * num / den).sqrt()
    }
}

/// Mean diffusivity.
pub fn md(eigenvalues: [f64; 3]) -> f64 {
    eigenvalues.iter().sum::<f64>() / 3.0
}

/// Scalar feature extracted per voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Fa,
    Md,
}

impl Feature {
    pub fn of(self, t: &TensorFeatures) -> f64 {
        match self {
            Feature::Fa => t.fa,
            Feature::Md => t.md,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Fa => "fa",
            Feature::Md => "md",
        }
    }
}

impl std::str::FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fa" => Ok(Feature::Fa),
            "md" => Ok(Feature::Md),
            other => Err(Error::invalid(format!("unknown feature {other:?} (expected fa or md)"))),
        }
    }
}

/// Two-pass weighted linear least squares on `ln S = c - b pᵀDp`, set up once
/// per scheme.
#[derive(Debug, Clone)]
pub struct TensorFitter {
    design: DMatrix<f64>,
    ols: DMatrix<f64>,
}

impl TensorFitter {
    pub fn new(scheme: &GradientScheme) -> Result<Self> {
        let m = scheme.len();
        let design = DMatrix::from_fn(m, N_PARAMS, |i, j| {
            let b = scheme.bval(i);
            let [x, y, z] = scheme.bvec(i);
            match j {
                0 => 1.0,
                1 => -b * x * x,
                2 => -b * y * y,
                3 => -b * z * z,
                4 => -2.0 * b * x * y,
                5 => -2.0 * b * x * z,
                _ => -2.0 * b * y * z,
            }
        });
        let svd = design.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > smax * 1e-10 * m.max(N_PARAMS) as f64)
            .count();
        if m < N_PARAMS || rank < N_PARAMS {
            return Err(Error::UnidentifiableTensor { rank });
        }
        let gram = design.transpose() * &design;
        let chol = gram.cholesky().ok_or(Error::UnidentifiableTensor { rank })?;
        let ols = chol.solve(&design.transpose());
        Ok(TensorFitter { design, ols })
    }

    /// Fits one voxel's normalized (positive) signal.
    pub fn fit(&self, signal: &[f64]) -> Result<DiffusionTensor> {
        let m = self.design.nrows();
        if signal.len() != m {
            return Err(Error::LengthMismatch {
                what: "signal vs scheme".into(),
                left: signal.len(),
                right: m,
            });
        }
        if let Some(i) = signal.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("signal at frame {i} is not positive")));
        }
        let y = DVector::from_iterator(m, signal.iter().map(|s| s.ln()));
        let first = &self.ols * &y;
        let fitted = &self.design * &first;
        let w = fitted.map(|f| (2.0 * f).exp());
        let mut xtw = self.design.transpose();
        for (j, mut col) in xtw.column_iter_mut().enumerate() {
            col *= w[j];
        }
        let gram = &xtw * &self.design;
        let rhs = &xtw * &y;
        let beta = match gram.cholesky() {
            Some(c) => c.solve(&rhs),
            None => first,
        };
        Ok(DiffusionTensor {
            components: [beta[1], beta[2], beta[3], beta[4], beta[5], beta[6]],
            log_s0: beta[0],
        })
    }
}

pub fn fit_tensor_wlls(scheme: &GradientScheme, signal: &[f64]) -> Result<DiffusionTensor> {
    TensorFitter::new(scheme)?.fit(signal)
}

/// Feature value for each of `voxels` of a normalized volume following `scheme`.
pub fn feature_values(
    volume: &SignalVolume,
    scheme: &GradientScheme,
    voxels: &[usize],
    feature: Feature,
) -> Result<Vec<f64>> {
    if volume.n_frames() != scheme.len() {
        return Err(Error::LengthMismatch {
            what: "volume frames vs scheme entries".into(),
            left: volume.n_frames(),
            right: scheme.len(),
        });
    }
    let fitter = TensorFitter::new(scheme)?;
    voxels
        .par_iter()
        .map(|&v| {
            let t = fitter
                .fit(volume.voxel(v))
                .map_err(|e| Error::invalid(format!("voxel {v}: {e}")))?;
            Ok(feature.of(&t.features()))
        })
        .collect()
}

/// Like [`feature_values`] for a b0-normalized volume whose scheme has no b0
/// frames: a unit-signal b = 0 frame is prepended so the intercept is pinned.
pub fn normalized_feature_values(
    volume: &SignalVolume,
    scheme: &GradientScheme,
    voxels: &[usize],
    feature: Feature,
) -> Result<Vec<f64>> {
    if !scheme.b0_indices().is_empty() {
        return feature_values(volume, scheme, voxels, feature);
    }
    if volume.n_frames() != scheme.len() {
        return Err(Error::LengthMismatch {
            what: "volume frames vs scheme entries".into(),
            left: volume.n_frames(),
            right: scheme.len(),
        });
    }
    let b0 = GradientScheme::new(vec![0.0], vec![[0.0; 3]])?;
    let fitter = TensorFitter::new(&b0.concat(scheme))?;
    voxels
        .par_iter()
        .map(|&v| {
            let mut s = Vec::with_capacity(scheme.len() + 1);
            s.push(1.0);
            s.extend_from_slice(volume.voxel(v));
            let t = fitter.fit(&s).map_err(|e| Error::invalid(format!("voxel {v}: {e}")))?;
            Ok(feature.of(&t.features()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{multi_tensor_signal, TensorCompartment};
    use crate::protocols::multi_shell_scheme;

    #[test]
    fn fa_and_md_closed_form() {
        let lam = [2.0e-3, 0.2e-3, 0.2e-3];
        assert!((fa(lam) - 0.891132788679007).abs() < 1e-12);
        assert!((md(lam) - 0.8e-3).abs() < 1e-18);
        assert_eq!(fa([1e-3; 3]), 0.0);
        assert_eq!(md([1e-3; 3]), 1e-3);
        assert!((fa([1.5e-3, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(fa([0.0; 3]), 0.0);
    }

    #[test]
    fn negative_eigenvalues_are_flagged() {
        let t = DiffusionTensor {
            components: [1e-3, -1e-4, 5e-4, 0.0, 0.0, 0.0],
            log_s0: 0.0,
        };
        let f = t.features();
        assert!(f.negative_eigenvalues);
        assert_eq!(f.eigenvalues[2], -1e-4);
    }

    #[test]
    fn recovers_planted_tensor() {
        let scheme = multi_shell_scheme(&[(1000.0, 20), (2000.0, 20)], 2).unwrap();
        let c = TensorCompartment::from_eigen(1.0, [1.7e-3, 0.4e-3, 0.2e-3], [20.0, 40.0, 60.0]).unwrap();
        let s: Vec<f64> = (0..scheme.len())
            .map(|m| multi_tensor_signal(&[c], scheme.bval(m), scheme.bvec(m)).unwrap())
            .collect();
        let t = fit_tensor_wlls(&scheme, &s).unwrap();
        assert!((t.matrix() - c.d).amax() < 1e-8);
        assert!(t.log_s0.abs() < 1e-8);
    }

    #[test]
    fn isotropic_tensor_has_equal_eigenvalues() {
        let scheme = multi_shell_scheme(&[(1000.0, 12)], 1).unwrap();
        let s: Vec<f64> = (0..scheme.len()).map(|m| (-scheme.bval(m) * 0.9e-3).exp()).collect();
        let e = fit_tensor_wlls(&scheme, &s).unwrap().eigenvalues();
        assert!((e[0] - e[2]).abs() < 1e-8);
        assert!((e[1] - 0.9e-3).abs() < 1e-8);
    }

    #[test]
    fn coplanar_directions_are_unidentifiable() {
        let bvecs: Vec<[f64; 3]> = (0..6)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / 6.0;
                [a.cos(), a.sin(), 0.0]
            })
            .collect();
        let mut bvals = vec![1000.0; 6];
        let mut vecs = bvecs;
        bvals.push(0.0);
        vecs.push([0.0; 3]);
        let scheme = GradientScheme::new(bvals, vecs).unwrap();
        assert!(matches!(
            TensorFitter::new(&scheme),
            Err(Error::UnidentifiableTensor { .. })
        ));
    }
}
