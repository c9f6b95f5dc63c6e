//! Neighbor averages over periodic boxes with cell lists.

use rayon::prelude::*;

/// Minimum-image squared distance between two points of an `extents` box.
pub fn min_image_dist2(a: &[f64], b: &[f64], extents: &[f64]) -> f64 {
    let mut s = 0.0;
    for d in 0..extents.len() {
        let l = extents[d];
        let mut dx = a[d] - b[d];
        dx -= l * (dx / l).round();
        s += dx * dx;
    }
    s
}

/// Uniform grid of cells with edge at least `radius`.
#[derive(Clone, Debug)]
pub struct CellList {
    dim: usize,
    ncell: [usize; 2],
    edge: [f64; 2],
    cells: Vec<Vec<usize>>,
}

impl CellList {
    pub fn build(positions: &[f64], dim: usize, extents: &[f64], radius: f64) -> Self {
        let mut ncell = [1usize; 2];
        let mut edge = [1.0; 2];
        let n = positions.len() / dim;
        // coarser cells than L/R keep the edge >= R and bound memory for tiny radii
        let cap = ((4 * n.max(1)) as f64).powf(1.0 / dim as f64).ceil() as usize;
        for d in 0..dim {
            ncell[d] = ((extents[d] / radius).floor().min(cap as f64) as usize).max(1);
            edge[d] = extents[d] / ncell[d] as f64;
        }
        let mut cells = vec![Vec::new(); ncell[0] * ncell[1]];
        for i in 0..n {
            let c = Self::cell_of(&positions[i * dim..(i + 1) * dim], dim, &ncell, &edge);
            cells[c].push(i);
        }
        CellList { dim, ncell, edge, cells }
    }

    fn cell_of(x: &[f64], dim: usize, ncell: &[usize; 2], edge: &[f64; 2]) -> usize {
        let mut idx = [0usize; 2];
        for d in 0..dim {
            idx[d] = ((x[d] / edge[d]).floor() as isize).rem_euclid(ncell[d] as isize) as usize;
        }
        idx[0] * ncell[1] + idx[1]
    }

    /// Distinct cells within one cell of the cell containing `x`, in a fixed order.
    pub fn neighbor_cells(&self, x: &[f64]) -> Vec<usize> {
        let c = Self::cell_of(x, self.dim, &self.ncell, &self.edge);
        let (c0, c1) = (c / self.ncell[1], c % self.ncell[1]);
        let span = |d: usize| -> Vec<isize> { if d < self.dim { vec![-1, 0, 1] } else { vec![0] } };
        let mut out = Vec::with_capacity(9);
        for a in span(0) {
            for b in span(1) {
                let i0 = (c0 as isize + a).rem_euclid(self.ncell[0] as isize) as usize;
                let i1 = (c1 as isize + b).rem_euclid(self.ncell[1] as isize) as usize;
                let id = i0 * self.ncell[1] + i1;
                if !out.contains(&id) {
                    out.push(id);
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn cell(&self, id: usize) -> &[usize] {
        &self.cells[id]
    }
}

/// For each particle i, the mean of `feats` (N×B row-major) over {j : |q_i - q_j| ≤ R},
/// self included, and the neighbor counts.
pub fn neighbor_means(positions: &[f64], dim: usize, extents: &[f64], radius: f64, feats: &[f64], b: usize) -> (Vec<f64>, Vec<usize>) {
    let n = positions.len() / dim;
    let half_diag2: f64 = extents.iter().map(|l| 0.25 * l * l).sum();
    if !radius.is_finite() || radius * radius >= half_diag2 {
        let mut mean = vec![0.0; b];
        for i in 0..n {
            for (m, f) in mean.iter_mut().zip(&feats[i * b..(i + 1) * b]) {
                *m += f;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut out = Vec::with_capacity(n * b);
        for _ in 0..n {
            out.extend_from_slice(&mean);
        }
        return (out, vec![n; n]);
    }
    let cells = CellList::build(positions, dim, extents, radius);
    let r2 = radius * radius;
    let rows: Vec<(Vec<f64>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &positions[i * dim..(i + 1) * dim];
            let mut acc = vec![0.0; b];
            let mut count = 0usize;
            for c in cells.neighbor_cells(xi) {
                for &j in cells.cell(c) {
                    if min_image_dist2(xi, &positions[j * dim..(j + 1) * dim], extents) <= r2 {
                        count += 1;
                        for (a, f) in acc.iter_mut().zip(&feats[j * b..(j + 1) * b]) {
                            *a += f;
                        }
                    }
                }
            }
            acc.iter_mut().for_each(|a| *a /= count as f64);
            (acc, count)
        })
        .collect();
    let mut out = Vec::with_capacity(n * b);
    let mut counts = Vec::with_capacity(n);
    for (r, c) in rows {
        out.extend(r);
        counts.push(c);
    }
    (out, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cell_lists_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (dim, ext, r) in [(1, vec![3.0], 0.4), (2, vec![1.0, 2.0], 0.3), (2, vec![1.0, 1.0], 0.45)] {
            let n = 300;
            let pos: Vec<f64> = (0..n * dim).map(|k| rng.random::<f64>() * ext[k % dim]).collect();
            let feats: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let (m, c) = neighbor_means(&pos, dim, &ext, r, &feats, 1);
            for i in 0..n {
                let nb: Vec<usize> = (0..n)
                    .filter(|&j| min_image_dist2(&pos[i * dim..(i + 1) * dim], &pos[j * dim..(j + 1) * dim], &ext) <= r * r)
                    .collect();
                assert_eq!(nb.len(), c[i]);
                let mean = nb.iter().map(|&j| j as f64).sum::<f64>() / nb.len() as f64;
                assert!((mean - m[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn min_image_wraps() {
        assert!((min_image_dist2(&[0.05], &[0.95], &[1.0]) - 0.01).abs() < 1e-15);
    }
}
