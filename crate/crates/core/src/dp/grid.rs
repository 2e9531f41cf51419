//! Regular simplex mesh with simplicial (Freudenthal) interpolation.
//!
//! Nodes are the distributions over `D` outcomes whose entries are multiples
//! of `1/m`. A belief is located in the mesh through its suffix sums
//! `x_i = m · Σ_{j ≥ i} b_j`, which turn the simplex into a monotone cone
//! where the Freudenthal triangulation applies: sorting the fractional parts
//! of `x` in decreasing order gives the `D` vertices of the enclosing cell
//! and the barycentric weights.

use serde::{Deserialize, Serialize};

/// Upper bound on mesh size used when choosing a default resolution.
pub const DEFAULT_MAX_NODES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    dim: usize,
    resolution: usize,
    /// `binom[a][b] = C(a, b)` for `a ≤ m + D`, `b < D`.
    #[serde(skip)]
    binom: Vec<Vec<u128>>,
    #[serde(skip)]
    len: usize,
}

/// Number of nodes of the mesh with `dim` coordinates and resolution `m`,
/// `C(m + D − 1, D − 1)`, or `None` on overflow.
pub fn mesh_size(dim: usize, resolution: usize) -> Option<u128> {
    let k = dim.checked_sub(1)? as u128;
    let mut c: u128 = 1;
    for i in 1..=k {
        c = c.checked_mul(resolution as u128 + i)? / i;
    }
    Some(c)
}

/// Largest resolution whose mesh has at most `max_nodes` nodes (at least 1).
pub fn default_resolution(dim: usize, max_nodes: usize) -> usize {
    let mut m = 1;
    while mesh_size(dim, m + 1).is_some_and(|s| s <= max_nodes as u128) && m < 4096 {
        m += 1;
    }
    m
}

impl Mesh {
    /// `None` when the mesh would exceed `max_nodes`.
    pub fn new(dim: usize, resolution: usize, max_nodes: usize) -> Option<Self> {
        if dim == 0 || resolution == 0 {
            return None;
        }
        let size = mesh_size(dim, resolution)?;
        if size > max_nodes as u128 {
            return None;
        }
        let rows = resolution + dim + 1;
        let mut binom = vec![vec![0u128; dim + 1]; rows];
        for a in 0..rows {
            binom[a][0] = 1;
            for b in 1..=dim.min(a) {
                binom[a][b] = binom[a - 1][b - 1].saturating_add(binom[a - 1][b]);
            }
        }
        Some(Self {
            dim,
            resolution,
            binom,
            len: size as usize,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Compositions of `r` into `k` nonnegative parts.
    fn count(&self, r: usize, k: usize) -> u128 {
        if k == 0 {
            return u128::from(r == 0);
        }
        self.binom[r + k - 1][k - 1]
    }

    /// Lexicographic rank of a composition of `m` into `D` parts.
    pub fn rank(&self, counts: &[usize]) -> usize {
        debug_assert_eq!(counts.len(), self.dim);
        let mut idx: u128 = 0;
        let mut r = self.resolution;
        for (i, &c) in counts.iter().enumerate().take(self.dim - 1) {
            let k = self.dim - 1 - i;
            // Σ_{v<c} C(r − v + k − 1, k − 1) = C(r + k, k) − C(r − c + k, k)
            idx += self.binom[r + k][k] - self.binom[r - c + k][k];
            r -= c;
        }
        idx as usize
    }

    pub fn unrank(&self, mut index: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim);
        let mut r = self.resolution;
        for i in 0..self.dim - 1 {
            let k = self.dim - 1 - i;
            let mut c = 0;
            loop {
                let block = self.count(r - c, k) as usize;
                if index < block {
                    break;
                }
                index -= block;
                c += 1;
            }
            out.push(c);
            r -= c;
        }
        out.push(r);
        out
    }

    pub fn node_belief(&self, index: usize) -> Vec<f64> {
        let m = self.resolution as f64;
        self.unrank(index).into_iter().map(|c| c as f64 / m).collect()
    }

    /// Vertices of the cell containing `belief` with their positive
    /// barycentric weights. `belief` must be a probability vector.
    pub fn locate(&self, belief: &[f64]) -> Vec<(usize, f64)> {
        let d = self.dim;
        let m = self.resolution;
        let mf = m as f64;
        // suffix sums x_1..x_{D-1}; x_0 = m and x_D = 0 are fixed
        let mut x = vec![0.0; d + 1];
        x[0] = mf;
        for i in (1..d).rev() {
            x[i] = (x[i + 1] + mf * belief[i]).min(mf);
        }
        let mut base = vec![0usize; d + 1];
        base[0] = m;
        let mut frac = vec![0.0; d];
        for i in 1..d {
            let f = x[i].floor();
            base[i] = (f as usize).min(m);
            frac[i] = (x[i] - base[i] as f64).clamp(0.0, 1.0);
        }
        let mut order: Vec<usize> = (1..d).collect();
        order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));

        let mut out = Vec::with_capacity(d);
        let mut vertex = base;
        let composition = |v: &[usize]| -> Option<Vec<usize>> {
            (0..d).map(|i| v[i].checked_sub(v[i + 1])).collect()
        };
        let first = if order.is_empty() { 1.0 } else { 1.0 - frac[order[0]] };
        if first > 0.0 {
            let c = composition(&vertex).expect("base vertex is monotone");
            out.push((self.rank(&c), first));
        }
        for (k, &i) in order.iter().enumerate() {
            vertex[i] += 1;
            let next = order.get(k + 1).map_or(0.0, |&j| frac[j]);
            let w = frac[i] - next;
            if w > 0.0 {
                let c = composition(&vertex).expect("positive-weight vertex is monotone");
                out.push((self.rank(&c), w));
            }
        }
        out
    }

    /// Piecewise-linear interpolation of node `values` at `belief`.
    pub fn interpolate(&self, belief: &[f64], values: &[f64]) -> f64 {
        self.locate(belief).into_iter().map(|(i, w)| w * values[i]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes_and_default_resolution() {
        assert_eq!(mesh_size(4, 20), Some(1771));
        assert_eq!(mesh_size(9, 10), Some(43758));
        assert_eq!(mesh_size(1, 7), Some(1));
        let m = default_resolution(4, DEFAULT_MAX_NODES);
        assert!(mesh_size(4, m).unwrap() <= 100_000);
        assert!(mesh_size(4, m + 1).unwrap() > 100_000);
        assert!(Mesh::new(4, 200, 1000).is_none());
    }

    #[test]
    fn rank_unrank_round_trip() {
        for (d, m) in [(2, 5), (3, 4), (4, 6), (9, 3)] {
            let mesh = Mesh::new(d, m, 1_000_000).unwrap();
            for i in 0..mesh.len() {
                let c = mesh.unrank(i);
                assert_eq!(c.iter().sum::<usize>(), m);
                assert_eq!(mesh.rank(&c), i);
            }
        }
    }

    #[test]
    fn nodes_interpolate_to_themselves() {
        let mesh = Mesh::new(4, 5, 10_000).unwrap();
        let values: Vec<f64> = (0..mesh.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        for i in 0..mesh.len() {
            let b = mesh.node_belief(i);
            assert!((mesh.interpolate(&b, &values) - values[i]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn linear_functions_are_reproduced(
            raw in proptest::collection::vec(0.0f64..1.0, 4),
            coef in proptest::collection::vec(-3.0f64..3.0, 4),
            m in 1usize..12,
        ) {
            let z: f64 = raw.iter().sum::<f64>() + 1e-9;
            let b: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / 4.0) / z).collect();
            let mesh = Mesh::new(4, m, 100_000).unwrap();
            let values: Vec<f64> = (0..mesh.len())
                .map(|i| mesh.node_belief(i).iter().zip(&coef).map(|(p, c)| p * c).sum())
                .collect();
            let exact: f64 = b.iter().zip(&coef).map(|(p, c)| p * c).sum();
            prop_assert!((mesh.interpolate(&b, &values) - exact).abs() < 1e-9);
            let cell = mesh.locate(&b);
            let wsum: f64 = cell.iter().map(|c| c.1).sum();
            prop_assert!((wsum - 1.0).abs() < 1e-12);
            prop_assert!(cell.len() <= 4);
        }
    }
}
