//! Spherical radial basis: Fibonacci centers, tapered Gaussian kernels,
//! bandwidth selection and the folded Poly-RBF design matrix.
//!
//! The model for the log of a b0-normalized signal is
//!
//! ```text
//! f(b, p) = Σ_{k=1..K} (b / b_scale)^k Σ_{ℓ=1..2N} β_{k,ℓ} G_ℓ(p)
//! G_ℓ(p)  = exp(-‖p - c_ℓ‖² / 2h²) · 1{‖p - c_ℓ‖ < taper·h}
//! ```
//!
//! with antipodal centers `c_{ℓ+N} = -c_ℓ` and tied coefficients
//! `β_{k,ℓ+N} = β_{k,ℓ}`. Folding the tied pairs gives a row of length `N·K`
//! whose entry `(k, ℓ)` is `(b/b_scale)^k (G_ℓ(p) + G_{ℓ+N}(p))`, ordered with
//! `ℓ` varying fastest.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::scheme::{hex_digest, GradientScheme};

/// Default number of distinct centers.
pub const DEFAULT_N: usize = 10;
/// Default polynomial order in b.
pub const DEFAULT_K: usize = 4;
/// Kernels are cut off at this multiple of the bandwidth.
pub const DEFAULT_TAPER_MULT: f64 = 3.0;
/// Default ridge, relative to the mean diagonal of XᵀX.
pub const DEFAULT_RELATIVE_RIDGE: f64 = 1e-8;

const UNIT_TOLERANCE: f64 = 1e-12;
const COLLISION_NUDGE: f64 = 1e-4;

/// A point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitDirection {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitDirection {
    /// Checks that `(x, y, z)` already has unit norm (within 1e-12).
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!(
                "({x}, {y}, {z}) is not a unit vector (norm {n})"
            )));
        }
        Ok(UnitDirection { x, y, z })
    }

    /// Scales a nonzero vector to unit length.
    pub fn normalize(v: [f64; 3]) -> Result<Self> {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid(format!("cannot normalize {v:?}")));
        }
        Ok(UnitDirection {
            x: v[0] / n,
            y: v[1] / n,
            z: v[2] / n,
        })
    }

    pub(crate) fn from_normalized(v: [f64; 3]) -> Self {
        debug_assert!(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs() < 1e-9);
        UnitDirection {
            x: v[0],
            y: v[1],
            z: v[2],
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &UnitDirection) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Rotates about the z axis by `angle` radians.
    pub fn rotate_azimuth(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        UnitDirection {
            x: c * self.x - s * self.y,
            y: s * self.x + c * self.y,
            z: self.z,
        }
    }
}

impl std::ops::Neg for UnitDirection {
    type Output = UnitDirection;

    fn neg(self) -> UnitDirection {
        UnitDirection {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

/// Builds `N` points of the spherical Fibonacci lattice:
/// `z_i = 1 - (2i+1)/N`, azimuth `2πi/φ²` with `φ` the golden ratio.
///
/// If a point collides with an earlier point or its antipode, it is nudged in
/// azimuth until the mirrored set is free of duplicates.
pub fn fibonacci_centers(n: usize) -> Result<Vec<UnitDirection>> {
    if n == 0 {
        return Err(Error::invalid("number of centers must be at least 1"));
    }
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let mut pts: Vec<UnitDirection> = (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let (s, c) = (2.0 * PI * i as f64 / (golden * golden)).sin_cos();
            UnitDirection { x: r * c, y: r * s, z }
        })
        .collect();

    for j in 1..n {
        let mut nudges = 0;
        while pts[..j].iter().any(|q| {
            let d = q.dot(&pts[j]);
            d >= 1.0 || d <= -1.0
        }) {
            nudges += 1;
            if nudges > 1000 {
                return Err(Error::invalid(format!(
                    "cannot separate Fibonacci point {j} from its neighbours"
                )));
            }
            pts[j] = pts[j].rotate_azimuth(COLLISION_NUDGE);
        }
        if nudges > 0 {
            log::warn!("Fibonacci center {j} collided with an earlier center; nudged {nudges} time(s)");
        }
    }
    Ok(pts)
}

/// Appends the antipode of every center: `c_{i+N} = -c_i`.
pub fn mirror_centers(centers: &[UnitDirection]) -> Vec<UnitDirection> {
    centers.iter().copied().chain(centers.iter().map(|&c| -c)).collect()
}

/// Tapered Gaussian kernel. The chord distance comes from
/// `‖p - c‖² = 2(1 - p·c)`; the cut-off is strict.
#[inline]
pub fn kernel(p: &UnitDirection, center: &UnitDirection, h: f64, taper_mult: f64) -> f64 {
    let chord2 = (2.0 * (1.0 - p.dot(center))).max(0.0);
    if chord2.sqrt() < taper_mult * h {
        (-chord2 / (2.0 * h * h)).exp()
    } else {
        0.0
    }
}

/// Mean of the nonzero `a_ij = √2‖c_i - c_j‖` over ordered pairs of all
/// supplied centers.
pub fn default_bandwidth(centers: &[UnitDirection]) -> Result<f64> {
    if centers.len() < 2 {
        return Err(Error::invalid("bandwidth needs at least 2 centers"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, a) in centers.iter().enumerate() {
        for (j, b) in centers.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
            let a_ij = std::f64::consts::SQRT_2 * d;
            if a_ij != 0.0 {
                sum += a_ij;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("bandwidth needs at least 2 distinct centers"));
    }
    Ok(sum / count as f64)
}

/// Ridge penalty added to the diagonal of XᵀX.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Ridge {
    /// `d` itself.
    Absolute(f64),
    /// `d = factor · mean(diag(XᵀX))`.
    Relative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(DEFAULT_RELATIVE_RIDGE)
    }
}

impl Ridge {
    pub fn resolve(&self, mean_diag: f64) -> f64 {
        match *self {
            Ridge::Absolute(d) => d,
            Ridge::Relative(f) => f * mean_diag,
        }
    }
}

/// Hyperparameters of a Poly-RBF(K, N) basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    n: usize,
    k: usize,
    centers: Vec<UnitDirection>,
    h: f64,
    taper_mult: f64,
    ridge: Ridge,
    b_scale: f64,
}

impl BasisConfig {
    /// Fibonacci centers, the default bandwidth, a taper of 3h and the default
    /// relative ridge. `b_scale` is normally the largest training b-value.
    pub fn new(n: usize, k: usize, b_scale: f64) -> Result<Self> {
        let centers = mirror_centers(&fibonacci_centers(n)?);
        let h = default_bandwidth(&centers)?;
        let cfg = BasisConfig {
            n,
            k,
            centers,
            h,
            taper_mult: DEFAULT_TAPER_MULT,
            ridge: Ridge::default(),
            b_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults for `scheme`: N = 10, K = 4, b_scale = max b.
    pub fn for_scheme(scheme: &GradientScheme) -> Result<Self> {
        BasisConfig::new(DEFAULT_N, DEFAULT_K, scheme.max_b())
    }

    /// Assembles a configuration from explicit parts (e.g. a stored artifact).
    pub fn from_parts(
        k: usize,
        centers: Vec<UnitDirection>,
        h: f64,
        taper_mult: f64,
        ridge: Ridge,
        b_scale: f64,
    ) -> Result<Self> {
        let cfg = BasisConfig {
            n: centers.len() / 2,
            k,
            centers,
            h,
            taper_mult,
            ridge,
            b_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_order(mut self, k: usize) -> Result<Self> {
        self.k = k;
        self.validate()?;
        Ok(self)
    }

    pub fn with_bandwidth(mut self, h: f64) -> Result<Self> {
        self.h = h;
        self.validate()?;
        Ok(self)
    }

    pub fn with_taper(mut self, taper_mult: f64) -> Result<Self> {
        self.taper_mult = taper_mult;
        self.validate()?;
        Ok(self)
    }

    pub fn with_ridge(mut self, ridge: Ridge) -> Result<Self> {
        self.ridge = ridge;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 || self.centers.len() != 2 * n {
            return Err(Error::invalid(format!(
                "need 2N > 0 centers, got {} for N = {n}",
                self.centers.len()
            )));
        }
        if self.k == 0 {
            return Err(Error::invalid("polynomial order K must be at least 1"));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {}", self.h)));
        }
        if !(self.taper_mult > 0.0) {
            return Err(Error::invalid(format!(
                "taper multiplier must be positive, got {}",
                self.taper_mult
            )));
        }
        if !(self.b_scale > 0.0 && self.b_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "b_scale must be positive, got {}",
                self.b_scale
            )));
        }
        let d = match self.ridge {
            Ridge::Absolute(d) | Ridge::Relative(d) => d,
        };
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::invalid(format!("ridge must be a finite value >= 0, got {d}")));
        }
        for i in 0..n {
            if self.centers[i + n] != -self.centers[i] {
                return Err(Error::invalid(format!(
                    "center {} is not the antipode of center {i}",
                    i + n
                )));
            }
            let c = &self.centers[i];
            if ((c.x * c.x + c.y * c.y + c.z * c.z).sqrt() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::invalid(format!("center {i} is not a unit vector")));
            }
            for j in (i + 1)..n {
                let dot = c.dot(&self.centers[j]);
                if dot.abs() >= 1.0 - 1e-12 {
                    return Err(Error::invalid(format!("centers {i} and {j} coincide up to sign")));
                }
            }
        }
        Ok(())
    }

    /// Number of distinct centers `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Polynomial order `K`.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of folded coefficients, `N·K`.
    pub fn n_coef(&self) -> usize {
        self.n * self.k
    }

    /// All `2N` centers.
    pub fn centers(&self) -> &[UnitDirection] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn taper_mult(&self) -> f64 {
        self.taper_mult
    }

    pub fn ridge(&self) -> Ridge {
        self.ridge
    }

    pub fn b_scale(&self) -> f64 {
        self.b_scale
    }

    /// Hash of everything that determines a design row (the ridge is excluded).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"basis");
        for v in [self.n as u64, self.k as u64] {
            h.update(v.to_le_bytes());
        }
        for v in [self.h, self.taper_mult, self.b_scale] {
            h.update(v.to_le_bytes());
        }
        for c in &self.centers {
            for v in c.to_array() {
                h.update(v.to_le_bytes());
            }
        }
        hex_digest(h)
    }

    /// Folded kernel sums `G_ℓ(p) + G_{ℓ+N}(p)` for `ℓ = 0..N`.
    pub fn folded_kernels(&self, p: &UnitDirection) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|l| {
                kernel(p, &self.centers[l], self.h, self.taper_mult)
                    + kernel(p, &self.centers[l + n], self.h, self.taper_mult)
            })
            .collect()
    }
}

/// Folded design row for one (b, p) pair; length `N·K`.
pub fn design_row(b: f64, p: &UnitDirection, cfg: &BasisConfig) -> Result<Vec<f64>> {
    let mut row = vec![0.0; cfg.n_coef()];
    fill_design_row(b, Some(p), cfg, &mut row)?;
    Ok(row)
}

pub(crate) fn fill_design_row(b: f64, p: Option<&UnitDirection>, cfg: &BasisConfig, row: &mut [f64]) -> Result<()> {
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::invalid(format!("b-value must be a finite value >= 0, got {b}")));
    }
    debug_assert_eq!(row.len(), cfg.n_coef());
    if b == 0.0 {
        row.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    let p = p.ok_or_else(|| Error::invalid(format!("b = {b} requires a gradient direction")))?;
    let g = cfg.folded_kernels(p);
    let x = b / cfg.b_scale;
    let mut power = 1.0;
    for k in 0..cfg.k {
        power *= x;
        for (l, gl) in g.iter().enumerate() {
            row[k * cfg.n + l] = power * gl;
        }
    }
    Ok(())
}

/// The `M × N·K` matrix of folded design rows for a scheme.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    scheme_fingerprint: String,
    fingerprint: String,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn scheme_fingerprint(&self) -> &str {
        &self.scheme_fingerprint
    }

    /// Combined hash of the scheme and basis configuration.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Wraps an arbitrary matrix; mostly useful for exercising the estimator.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let mut h = Sha256::new();
        h.update(b"raw-design");
        h.update((matrix.nrows() as u64).to_le_bytes());
        h.update((matrix.ncols() as u64).to_le_bytes());
        for v in matrix.iter() {
            h.update(v.to_le_bytes());
        }
        let fp = hex_digest(h);
        DesignMatrix {
            matrix,
            scheme_fingerprint: fp.clone(),
            fingerprint: fp,
        }
    }
}

pub fn design_matrix(scheme: &GradientScheme, cfg: &BasisConfig) -> Result<DesignMatrix> {
    let m = scheme.len();
    let cols = cfg.n_coef();
    let mut matrix = DMatrix::zeros(m, cols);
    let mut row = vec![0.0; cols];
    for i in 0..m {
        let dir = scheme.direction(i);
        fill_design_row(scheme.bval(i), dir.as_ref(), cfg, &mut row)?;
        for (j, v) in row.iter().enumerate() {
            matrix[(i, j)] = *v;
        }
    }
    let scheme_fingerprint = scheme.fingerprint();
    let mut h = Sha256::new();
    h.update(scheme_fingerprint.as_bytes());
    h.update(cfg.fingerprint().as_bytes());
    Ok(DesignMatrix {
        matrix,
        scheme_fingerprint,
        fingerprint: hex_digest(h),
    })
}
