//! Acquisition schemes and the FSL `bvals`/`bvecs` text convention.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::UnitDirection;
use crate::error::{Error, Result};

/// Directions of diffusion-weighted frames may deviate from unit length by at
/// most this much before they are rejected (text files are often rounded).
pub const DIRECTION_NORM_TOLERANCE: f64 = 1e-3;
/// Directions this close to unit length are stored unchanged, so normalizing
/// is idempotent and text round trips are exact.
const UNIT_NORM_SLACK: f64 = 1e-12;

/// b-values closer than this (s/mm²) are grouped into the same shell.
pub const SHELL_TOLERANCE: f64 = 50.0;

/// Paired b-values and gradient directions of an acquisition.
///
/// Directions of frames with `b > 0` are unit vectors; `b = 0` frames may carry
/// a zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientScheme {
    bvals: Vec<f64>,
    bvecs: Vec<[f64; 3]>,
}

/// A group of frames sharing (approximately) one b-value.
#[derive(Debug, Clone, PartialEq)]
pub struct Shell {
    pub bval: f64,
    pub frames: Vec<usize>,
}

impl GradientScheme {
    /// Validates a scheme and renormalizes directions that are not already
    /// unit length.
    pub fn new(bvals: Vec<f64>, bvecs: Vec<[f64; 3]>) -> Result<Self> {
        if bvals.len() != bvecs.len() {
            return Err(Error::LengthMismatch {
                what: "bvals vs bvecs entries".into(),
                left: bvals.len(),
                right: bvecs.len(),
            });
        }
        if bvals.is_empty() {
            return Err(Error::invalid("gradient scheme has no frames"));
        }
        let mut out = Vec::with_capacity(bvecs.len());
        for (m, (&b, v)) in bvals.iter().zip(&bvecs).enumerate() {
            if !b.is_finite() || b < 0.0 {
                return Err(Error::invalid(format!(
                    "frame {m}: b-value {b} is not a finite value >= 0"
                )));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("frame {m}: direction {v:?} is not finite")));
            }
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm == 0.0 {
                if b > 0.0 {
                    return Err(Error::ZeroDirection { frame: m, b });
                }
                out.push([0.0; 3]);
                continue;
            }
            if b > 0.0 && (norm - 1.0).abs() > DIRECTION_NORM_TOLERANCE {
                return Err(Error::NonUnitDirection { frame: m, norm });
            }
            if (norm - 1.0).abs() <= UNIT_NORM_SLACK {
                out.push(*v);
            } else {
                out.push([v[0] / norm, v[1] / norm, v[2] / norm]);
            }
        }
        Ok(GradientScheme { bvals, bvecs: out })
    }

    /// Parses the FSL text pair and validates it jointly.
    pub fn from_fsl(bvals_text: &str, bvecs_text: &str) -> Result<Self> {
        let bvals = parse_bvals(bvals_text)?;
        let bvecs = parse_bvecs(bvecs_text)?;
        GradientScheme::new(bvals, bvecs)
    }

    pub fn read_fsl(bvals_path: &Path, bvecs_path: &Path) -> Result<Self> {
        let bvals = std::fs::read_to_string(bvals_path).map_err(|e| Error::file(bvals_path, e))?;
        let bvecs = std::fs::read_to_string(bvecs_path).map_err(|e| Error::file(bvecs_path, e))?;
        GradientScheme::from_fsl(&bvals, &bvecs)
    }

    pub fn write_fsl(&self, bvals_path: &Path, bvecs_path: &Path) -> Result<()> {
        let (bvals, bvecs) = self.to_fsl();
        std::fs::write(bvals_path, bvals).map_err(|e| Error::file(bvals_path, e))?;
        std::fs::write(bvecs_path, bvecs).map_err(|e| Error::file(bvecs_path, e))?;
        Ok(())
    }

    /// Formats as FSL text: one bvals row, three bvecs rows. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn to_fsl(&self) -> (String, String) {
        let mut bvals = String::new();
        for (m, b) in self.bvals.iter().enumerate() {
            if m > 0 {
                bvals.push(' ');
            }
            write!(bvals, "{b}").unwrap();
        }
        bvals.push('\n');
        let mut bvecs = String::new();
        for axis in 0..3 {
            for (m, v) in self.bvecs.iter().enumerate() {
                if m > 0 {
                    bvecs.push(' ');
                }
                write!(bvecs, "{}", v[axis]).unwrap();
            }
            bvecs.push('\n');
        }
        (bvals, bvecs)
    }

    pub fn len(&self) -> usize {
        self.bvals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bvals.is_empty()
    }

    pub fn bvals(&self) -> &[f64] {
        &self.bvals
    }

    pub fn bvecs(&self) -> &[[f64; 3]] {
        &self.bvecs
    }

    pub fn bval(&self, m: usize) -> f64 {
        self.bvals[m]
    }

    pub fn bvec(&self, m: usize) -> [f64; 3] {
        self.bvecs[m]
    }

    /// Unit direction of frame `m`, or `None` for a zero-vector b0 frame.
    pub fn direction(&self, m: usize) -> Option<UnitDirection> {
        let v = self.bvecs[m];
        if v == [0.0; 3] {
            None
        } else {
            Some(UnitDirection::from_normalized(v))
        }
    }

    pub fn is_b0(&self, m: usize) -> bool {
        self.bvals[m] == 0.0
    }

    pub fn b0_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&m| self.is_b0(m)).collect()
    }

    pub fn dw_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&m| !self.is_b0(m)).collect()
    }

    pub fn max_b(&self) -> f64 {
        self.bvals.iter().copied().fold(0.0, f64::max)
    }

    /// Diffusion-weighted frames grouped into shells, ordered by b-value.
    /// Each shell's value is the mean of its members.
    pub fn shells(&self) -> Vec<Shell> {
        let mut order = self.dw_indices();
        order.sort_by(|&a, &b| self.bvals[a].total_cmp(&self.bvals[b]).then(a.cmp(&b)));
        let mut shells: Vec<Shell> = Vec::new();
        let mut last = f64::NEG_INFINITY;
        for m in order {
            let b = self.bvals[m];
            match shells.last_mut() {
                Some(shell) if b - last <= SHELL_TOLERANCE => shell.frames.push(m),
                _ => shells.push(Shell {
                    bval: 0.0,
                    frames: vec![m],
                }),
            }
            last = b;
        }
        for shell in &mut shells {
            shell.frames.sort_unstable();
            shell.bval = shell.frames.iter().map(|&m| self.bvals[m]).sum::<f64>() / shell.frames.len() as f64;
        }
        shells
    }

    /// New scheme made of the given frames, in the given order.
    pub fn subset(&self, frames: &[usize]) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("frame subset is empty"));
        }
        if let Some(&bad) = frames.iter().find(|&&m| m >= self.len()) {
            return Err(Error::invalid(format!(
                "frame index {bad} out of range for {} frames",
                self.len()
            )));
        }
        Ok(GradientScheme {
            bvals: frames.iter().map(|&m| self.bvals[m]).collect(),
            bvecs: frames.iter().map(|&m| self.bvecs[m]).collect(),
        })
    }

    /// Concatenates two schemes.
    pub fn concat(&self, other: &GradientScheme) -> GradientScheme {
        let mut bvals = self.bvals.clone();
        bvals.extend_from_slice(&other.bvals);
        let mut bvecs = self.bvecs.clone();
        bvecs.extend_from_slice(&other.bvecs);
        GradientScheme { bvals, bvecs }
    }

    /// SHA-256 over the little-endian bytes of every (b, direction) entry.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"scheme");
        h.update((self.len() as u64).to_le_bytes());
        for (b, v) in self.bvals.iter().zip(&self.bvecs) {
            h.update(b.to_le_bytes());
            for c in v {
                h.update(c.to_le_bytes());
            }
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().fold(String::with_capacity(64), |mut s, byte| {
        write!(s, "{byte:02x}").unwrap();
        s
    })
}

fn numeric_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let mut row = Vec::new();
        for (ci, token) in line.split_whitespace().enumerate() {
            let v: f64 = token.parse().map_err(|_| Error::Parse {
                line: li + 1,
                column: ci + 1,
                token: token.to_string(),
            })?;
            row.push(v);
        }
        if !row.is_empty() {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Parses a bvals file: a single row, or a single column, of numbers.
pub fn parse_bvals(text: &str) -> Result<Vec<f64>> {
    let rows = numeric_rows(text)?;
    if rows.len() > 1 && rows.iter().any(|r| r.len() != 1) {
        return Err(Error::invalid(format!(
            "bvals must be a single row or a single column, found {} rows",
            rows.len()
        )));
    }
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    if values.is_empty() {
        return Err(Error::invalid("bvals file is empty"));
    }
    Ok(values)
}

/// Parses a bvecs file: three rows of M columns (FSL layout). An M×3 layout
/// (one direction per line) is accepted when the file does not have three rows.
pub fn parse_bvecs(text: &str) -> Result<Vec<[f64; 3]>> {
    let rows = numeric_rows(text)?;
    if rows.len() == 3 {
        let m = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != m {
                return Err(Error::LengthMismatch {
                    what: format!("bvecs row {} vs row 1 length", i + 1),
                    left: r.len(),
                    right: m,
                });
            }
        }
        return Ok((0..m).map(|j| [rows[0][j], rows[1][j], rows[2][j]]).collect());
    }
    if !rows.is_empty() && rows.iter().all(|r| r.len() == 3) {
        return Ok(rows.into_iter().map(|r| [r[0], r[1], r[2]]).collect());
    }
    Err(Error::invalid(format!(
        "bvecs must have 3 rows (or 3 columns), found {} rows",
        rows.len()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_fsl_pair() {
        let s = GradientScheme::from_fsl("0 1000 1000\n", "0 1 0\n0 0 1\n0 0 0\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.b0_indices(), vec![0]);
        assert_eq!(s.bvec(1), [1.0, 0.0, 0.0]);
        assert_eq!(s.bvec(2), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn accepts_unit_direction_unchanged() {
        let s = GradientScheme::from_fsl("1000", "0.6\n0.8\n0").unwrap();
        assert_eq!(s.bvec(0), [0.6, 0.8, 0.0]);
    }

    #[test]
    fn column_bvals_and_row_per_direction_bvecs() {
        let s = GradientScheme::from_fsl("0\n1000\n", "0 0 0\n0 0 1\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.bvec(1), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn length_mismatch_is_reported() {
        let err = GradientScheme::from_fsl("0 1000", "1 0 0\n0 1 0\n0 0 1").unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { left: 2, right: 3, .. }), "{err}");
    }

    #[test]
    fn non_numeric_token_has_position() {
        let err = parse_bvecs("1 0\n0 x\n0 0\n").unwrap_err();
        match err {
            Error::Parse { line, column, token } => {
                assert_eq!((line, column), (2, 2));
                assert_eq!(token, "x");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn zero_vector_needs_b0() {
        let err = GradientScheme::from_fsl("1000", "0\n0\n0").unwrap_err();
        assert!(matches!(err, Error::ZeroDirection { frame: 0, .. }));
    }

    #[test]
    fn rounded_directions_are_renormalized() {
        let s = GradientScheme::from_fsl("1000", "0.5774\n0.5774\n0.5774").unwrap();
        let v = s.bvec(0);
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        assert!((n - 1.0).abs() < 1e-15);
        assert!(GradientScheme::from_fsl("1000", "0.9\n0\n0").is_err());
    }

    #[test]
    fn shells_group_nearby_values() {
        let s = GradientScheme::new(
            vec![0.0, 995.0, 1005.0, 2000.0, 1020.0],
            vec![
                [0.0; 3],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [1.0, 0.0, 0.0],
            ],
        )
        .unwrap();
        let shells = s.shells();
        assert_eq!(shells.len(), 2);
        assert_eq!(shells[0].frames, vec![1, 2, 4]);
        assert_eq!(shells[1].frames, vec![3]);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let third = 1.0 / 3f64.sqrt();
        let s = GradientScheme::new(
            vec![0.0, 995.0, 2000.0],
            vec![[0.0; 3], [third, third, third], [0.6, -0.8, 0.0]],
        )
        .unwrap();
        let (bvals, bvecs) = s.to_fsl();
        let back = GradientScheme::from_fsl(&bvals, &bvecs).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.fingerprint(), s.fingerprint());
    }
}
