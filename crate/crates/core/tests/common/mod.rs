//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use squash::SparseFeatureGrid;

pub type Entries = BTreeMap<[i32; 3], Vec<f32>>;

pub fn entries(grid: &SparseFeatureGrid) -> Entries {
    grid.iter().map(|(c, f)| ([c.i, c.j, c.k], f.to_vec())).collect()
}

/// Materializes the full convolution `F = theta * Q` on the bounding box of
/// `q` padded by `k/2`, accumulating in f64, then reads `F` at `voxels`.
/// Voxels outside the padded box read zero.
pub fn dense_conv_then_index(
    q: &Entries,
    d_in: usize,
    k: usize,
    d_out: usize,
    weights: &[f32],
    voxels: &[[i32; 3]],
) -> Vec<Vec<f64>> {
    let zero = || vec![0.0; d_out];
    let Some(first) = q.keys().next() else {
        return voxels.iter().map(|_| zero()).collect();
    };
    let r = (k / 2) as i32;
    let mut lo = *first;
    let mut hi = *first;
    for c in q.keys() {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let lo = lo.map(|v| v - r);
    let hi = hi.map(|v| v + r);
    let shape = [0, 1, 2].map(|a| (hi[a] - lo[a] + 1) as usize);
    let idx = |c: [i32; 3]| -> Option<usize> {
        (0..3).all(|a| c[a] >= lo[a] && c[a] <= hi[a]).then(|| {
            let p = [0, 1, 2].map(|a| (c[a] - lo[a]) as usize);
            (p[0] * shape[1] + p[1]) * shape[2] + p[2]
        })
    };
    let cells = shape[0] * shape[1] * shape[2];
    let mut input = vec![0.0f64; cells * d_in];
    for (c, f) in q {
        let at = idx(*c).expect("inside box");
        for (x, &v) in input[at * d_in..(at + 1) * d_in].iter_mut().zip(f) {
            *x = f64::from(v);
        }
    }
    let mut out = vec![0.0f64; cells * d_out];
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            for kk in lo[2]..=hi[2] {
                let at = idx([i, j, kk]).expect("inside box");
                let mut o = 0;
                for di in -r..=r {
                    for dj in -r..=r {
                        for dk in -r..=r {
                            if let Some(src) = idx([i + di, j + dj, kk + dk]) {
                                for ci in 0..d_in {
                                    let x = input[src * d_in + ci];
                                    if x != 0.0 {
                                        for co in 0..d_out {
                                            out[at * d_out + co] += x * f64::from(weights[(o * d_in + ci) * d_out + co]);
                                        }
                                    }
                                }
                            }
                            o += 1;
                        }
                    }
                }
            }
        }
    }
    voxels
        .iter()
        .map(|&v| idx(v).map_or_else(zero, |at| out[at * d_out..(at + 1) * d_out].to_vec()))
        .collect()
}

/// Element-wise max over every grid containing the voxel.
pub fn max_oracle(grids: &[Entries]) -> Entries {
    let mut out: Entries = BTreeMap::new();
    for g in grids {
        for (c, f) in g {
            out.entry(*c)
                .and_modify(|acc| {
                    for (a, &b) in acc.iter_mut().zip(f) {
                        *a = a.max(b);
                    }
                })
                .or_insert_with(|| f.clone());
        }
    }
    out
}

pub fn support(grids: &[Entries]) -> BTreeSet<[i32; 3]> {
    grids.iter().flat_map(|g| g.keys().copied()).collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Mean of `|X|` for `X ~ N(0, sigma^2)`.
pub fn half_normal_mean(sigma: f64) -> f64 {
    sigma * (2.0 / std::f64::consts::PI).sqrt()
}

/// Fraction of (positive, negative) pairs ranked correctly, ties one half.
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| p).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| !p).map(|(&s, _)| s).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}
