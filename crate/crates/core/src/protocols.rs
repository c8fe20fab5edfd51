//! Reference acquisition designs and the train/test subsampling used by the
//! prediction benchmark.

use rand::seq::{IndexedRandom, SliceRandom};

use crate::basis::fibonacci_centers;
use crate::error::{Error, Result};
use crate::io::scheme::GradientScheme;
use crate::rng;

/// b-values of the dense reference design.
pub const HCP_SHELLS: [f64; 3] = [1000.0, 2000.0, 3000.0];
/// Directions per shell of the dense reference design.
pub const HCP_DIRECTIONS: usize = 90;
/// b0 frames of the dense reference design.
pub const HCP_B0: usize = 18;

/// Directions drawn per shell (b = 1000, 2000, 3000) by the six benchmark
/// protocols.
pub const TABLE1_PROTOCOLS: [[usize; 3]; 6] = [
    [60, 30, 15],
    [60, 15, 30],
    [30, 60, 15],
    [30, 15, 60],
    [15, 30, 60],
    [15, 60, 30],
];

/// Paper default number of subsamples per protocol.
pub const DEFAULT_REPLICATIONS: usize = 50;

/// Share of diffusion-weighted frames used for training.
pub const TRAIN_FRACTION: f64 = 0.75;

/// `count` directions from a Fibonacci lattice turned by `azimuth` radians.
pub fn shell_directions(count: usize, azimuth: f64) -> Result<Vec<[f64; 3]>> {
    Ok(fibonacci_centers(count)?
        .into_iter()
        .map(|p| p.rotate_azimuth(azimuth).to_array())
        .collect())
}

/// Multi-shell scheme with `b0` unweighted frames spread evenly among the
/// diffusion-weighted ones. Each shell gets its own rotated lattice.
pub fn multi_shell_scheme(shells: &[(f64, usize)], b0: usize) -> Result<GradientScheme> {
    let mut dw = Vec::new();
    for (i, &(b, count)) in shells.iter().enumerate() {
        for v in shell_directions(count, 0.7 * i as f64)? {
            dw.push((b, v));
        }
    }
    let n_dw = dw.len();
    let mut bvals = Vec::with_capacity(n_dw + b0);
    let mut bvecs = Vec::with_capacity(n_dw + b0);
    let stride = if b0 > 0 { n_dw.div_ceil(b0) } else { usize::MAX };
    let mut placed = 0;
    for (j, (b, v)) in dw.into_iter().enumerate() {
        if placed < b0 && j % stride == 0 {
            bvals.push(0.0);
            bvecs.push([0.0; 3]);
            placed += 1;
        }
        bvals.push(b);
        bvecs.push(v);
    }
    for _ in placed..b0 {
        bvals.push(0.0);
        bvecs.push([0.0; 3]);
    }
    GradientScheme::new(bvals, bvecs)
}

/// The dense reference design: 3 shells × 90 directions plus 18 b0 frames.
pub fn hcp_like_scheme() -> Result<GradientScheme> {
    let shells: Vec<(f64, usize)> = HCP_SHELLS.iter().map(|&b| (b, HCP_DIRECTIONS)).collect();
    multi_shell_scheme(&shells, HCP_B0)
}

/// Frame indices of a train/test split of the diffusion-weighted frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub b0: Vec<usize>,
}

/// Shell-stratified split with `round(fraction · M_dw)` training frames; the
/// test quota is shared among shells by largest remainder.
pub fn train_test_split(scheme: &GradientScheme, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let shells = scheme.shells();
    let n_dw: usize = shells.iter().map(|s| s.frames.len()).sum();
    if n_dw < 2 {
        return Err(Error::invalid("need at least 2 diffusion-weighted frames to split"));
    }
    let n_train = (train_fraction * n_dw as f64).round() as usize;
    let n_test = n_dw - n_train.clamp(1, n_dw - 1);

    let exact: Vec<f64> = shells
        .iter()
        .map(|s| n_test as f64 * s.frames.len() as f64 / n_dw as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shells.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n_test - quota.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if quota[i] < shells[i].frames.len() {
            quota[i] += 1;
            left -= 1;
        }
    }

    let mut r = rng::rng(rng::substream(seed, "split"));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (shell, &q) in shells.iter().zip(&quota) {
        let mut frames = shell.frames.clone();
        frames.shuffle(&mut r);
        test.extend_from_slice(&frames[..q]);
        train.extend_from_slice(&frames[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        test,
        b0: scheme.b0_indices(),
    })
}

/// Draws `counts[i]` training frames from the i-th shell (ascending b) and
/// appends every b0 frame. Returned indices are sorted.
pub fn subsample_protocol<R: rand::Rng + ?Sized>(
    scheme: &GradientScheme,
    split: &Split,
    counts: &[usize],
    rng: &mut R,
) -> Result<Vec<usize>> {
    let train_scheme_shells = scheme.subset(&split.train)?.shells();
    if train_scheme_shells.len() != counts.len() {
        return Err(Error::invalid(format!(
            "protocol lists {} shells but the training data has {}",
            counts.len(),
            train_scheme_shells.len()
        )));
    }
    let mut frames = split.b0.clone();
    for (shell, &count) in train_scheme_shells.iter().zip(counts) {
        let pool: Vec<usize> = shell.frames.iter().map(|&i| split.train[i]).collect();
        if pool.len() < count {
            return Err(Error::invalid(format!(
                "shell b={} has {} training frames, protocol needs {count}",
                shell.bval,
                pool.len()
            )));
        }
        frames.extend(pool.choose_multiple(rng, count).copied());
    }
    frames.sort_unstable();
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_scheme_layout() {
        let s = hcp_like_scheme().unwrap();
        assert_eq!(s.len(), 288);
        assert_eq!(s.b0_indices().len(), 18);
        let shells = s.shells();
        assert_eq!(shells.len(), 3);
        assert!(shells.iter().all(|sh| sh.frames.len() == 90));
    }

    #[test]
    fn split_is_75_25() {
        let s = hcp_like_scheme().unwrap();
        let split = train_test_split(&s, TRAIN_FRACTION, 3).unwrap();
        assert_eq!(split.train.len(), 203);
        assert_eq!(split.test.len(), 67);
        assert_eq!(split, train_test_split(&s, TRAIN_FRACTION, 3).unwrap());
        for sh in s.subset(&split.train).unwrap().shells() {
            assert!(sh.frames.len() >= 60);
        }
    }

    #[test]
    fn protocol_one_has_105_weighted_frames() {
        let s = hcp_like_scheme().unwrap();
        let split = train_test_split(&s, TRAIN_FRACTION, 3).unwrap();
        let mut r = rng::rng(9);
        let frames = subsample_protocol(&s, &split, &TABLE1_PROTOCOLS[0], &mut r).unwrap();
        let sub = s.subset(&frames).unwrap();
        assert_eq!(sub.dw_indices().len(), 105);
        assert_eq!(sub.b0_indices().len(), 18);
        let counts: Vec<usize> = sub.shells().iter().map(|sh| sh.frames.len()).collect();
        assert_eq!(counts, vec![60, 30, 15]);
        assert!(frames.iter().all(|f| split.train.contains(f) || split.b0.contains(f)));
    }

    #[test]
    fn protocol_five_shell_counts() {
        let s = multi_shell_scheme(&[(1000.0, 15), (2000.0, 30), (3000.0, 60)], 6).unwrap();
        let counts: Vec<usize> = s.shells().iter().map(|sh| sh.frames.len()).collect();
        assert_eq!(counts, vec![15, 30, 60]);
        assert_eq!(s.b0_indices().len(), 6);
    }
}
