//! Symmetric block-sparse matrices with 6x6 blocks and their Cholesky
//! factorization.
//!
//! The ordering is a minimum-degree elimination on the block graph; the
//! elimination also yields the block column structure of the factor, so the
//! symbolic phase is a single pass. Numeric factorization is right-looking
//! over block columns.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::error::{Error, Result};

/// Symmetric matrix stored as diagonal blocks plus one copy of each
/// off-diagonal block: `off[k]` is block `(pairs[k].0, pairs[k].1)` with
/// `pairs[k].0 < pairs[k].1`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockMatrix {
    pub diag: Vec<Matrix6<f64>>,
    pub pairs: Vec<(usize, usize)>,
    pub off: Vec<Matrix6<f64>>,
}

impl BlockMatrix {
    pub fn block_count(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        6 * self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, d) in self.diag.iter().enumerate() {
            m.fixed_view_mut::<6, 6>(6 * i, 6 * i).copy_from(d);
        }
        for (&(i, j), b) in self.pairs.iter().zip(&self.off) {
            m.fixed_view_mut::<6, 6>(6 * i, 6 * j).copy_from(b);
            m.fixed_view_mut::<6, 6>(6 * j, 6 * i)
                .copy_from(&b.transpose());
        }
        m
    }

    /// `(H + lambda * diag(H)) x`
    pub fn mul_damped(&self, x: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim());
        let seg =
            |v: &DVector<f64>, i: usize| -> Vector6<f64> { v.fixed_rows::<6>(6 * i).into_owned() };
        for (i, d) in self.diag.iter().enumerate() {
            let mut damped = *d;
            for k in 0..6 {
                damped[(k, k)] *= 1.0 + lambda;
            }
            let mut dst = y.fixed_rows_mut::<6>(6 * i);
            dst += damped * seg(x, i);
        }
        for (&(i, j), b) in self.pairs.iter().zip(&self.off) {
            let ri = b * seg(x, j);
            let rj = b.transpose() * seg(x, i);
            let mut dst = y.fixed_rows_mut::<6>(6 * i);
            dst += ri;
            let mut dst = y.fixed_rows_mut::<6>(6 * j);
            dst += rj;
        }
        y
    }
}

/// Elimination order and block structure of the Cholesky factor.
#[derive(Clone, Debug)]
pub struct Symbolic {
    /// `order[k]` is the block eliminated at position `k`.
    order: Vec<usize>,
    position: Vec<usize>,
    /// Row positions (ascending, all `> k`) of the blocks in column `k`.
    cols: Vec<Vec<usize>>,
    /// For each off-diagonal pair: (column position, slot in that column,
    /// whether the stored block must be transposed).
    scatter: Vec<(usize, usize, bool)>,
}

fn merge_without(a: &[usize], b: &[usize], skip_a: usize, skip_b: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = a.get(i).copied();
        let y = b.get(j).copied();
        let next = match (x, y) {
            (None, None) => break,
            (Some(x), None) => {
                i += 1;
                x
            }
            (None, Some(y)) => {
                j += 1;
                y
            }
            (Some(x), Some(y)) => {
                if x < y {
                    i += 1;
                    x
                } else if y < x {
                    j += 1;
                    y
                } else {
                    i += 1;
                    j += 1;
                    x
                }
            }
        };
        if next != skip_a && next != skip_b {
            out.push(next);
        }
    }
    out
}

impl Symbolic {
    /// Minimum-degree ordering on the block graph, ties broken by block index.
    pub fn analyze(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in pairs {
            adj[i].push(j);
            adj[j].push(i);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }

        let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
            (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
        let mut eliminated = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut structure: Vec<Vec<usize>> = vec![Vec::new(); n];

        while let Some(Reverse((deg, v))) = heap.pop() {
            if eliminated[v] || deg != adj[v].len() {
                continue;
            }
            eliminated[v] = true;
            order.push(v);
            let clique = std::mem::take(&mut adj[v]);
            for &u in &clique {
                let merged = merge_without(&adj[u], &clique, v, u);
                adj[u] = merged;
                heap.push(Reverse((adj[u].len(), u)));
            }
            structure[v] = clique;
        }

        let mut position = vec![0; n];
        for (k, &v) in order.iter().enumerate() {
            position[v] = k;
        }
        let cols: Vec<Vec<usize>> = order
            .iter()
            .map(|&v| {
                let mut c: Vec<usize> = structure[v].iter().map(|&u| position[u]).collect();
                c.sort_unstable();
                c
            })
            .collect();
        let scatter = pairs
            .iter()
            .map(|&(i, j)| {
                let (pi, pj) = (position[i], position[j]);
                let (col, row, transpose) = if pi < pj {
                    (pi, pj, true)
                } else {
                    (pj, pi, false)
                };
                let slot = cols[col]
                    .binary_search(&row)
                    .expect("factor structure contains every matrix entry");
                (col, slot, transpose)
            })
            .collect();
        Self {
            order,
            position,
            cols,
            scatter,
        }
    }

    pub fn block_count(&self) -> usize {
        self.order.len()
    }

    /// Number of off-diagonal blocks in the factor.
    pub fn factor_blocks(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    /// Factors `H + lambda * diag(H)`. `h` must have the pattern this
    /// symbolic structure was analyzed with.
    pub fn factor(&self, h: &BlockMatrix, lambda: f64) -> Result<Factor<'_>> {
        let n = self.order.len();
        debug_assert_eq!(h.block_count(), n);
        let mut diag: Vec<Matrix6<f64>> = self
            .order
            .iter()
            .map(|&b| {
                let mut d = h.diag[b];
                for k in 0..6 {
                    d[(k, k)] *= 1.0 + lambda;
                }
                d
            })
            .collect();
        let mut lower: Vec<Vec<Matrix6<f64>>> = self
            .cols
            .iter()
            .map(|c| vec![Matrix6::zeros(); c.len()])
            .collect();
        for (&(col, slot, transpose), b) in self.scatter.iter().zip(&h.off) {
            lower[col][slot] += if transpose { b.transpose() } else { *b };
        }

        let mut chol_diag = Vec::with_capacity(n);
        for k in 0..n {
            let l_kk = diag[k].cholesky().ok_or(Error::NotPositiveDefinite)?.l();
            // L_ik = A_ik L_kk^-T
            let mut column = std::mem::take(&mut lower[k]);
            for blk in column.iter_mut() {
                let mut t = blk.transpose();
                if !l_kk.solve_lower_triangular_mut(&mut t) {
                    return Err(Error::NotPositiveDefinite);
                }
                *blk = t.transpose();
            }
            let rows = &self.cols[k];
            for (a, &rj) in rows.iter().enumerate() {
                let l_jk_t = column[a].transpose();
                diag[rj] -= column[a] * l_jk_t;
                let target = &self.cols[rj];
                let dest = &mut lower[rj];
                let mut cursor = 0;
                for (bidx, &ri) in rows.iter().enumerate().skip(a + 1) {
                    while target[cursor] < ri {
                        cursor += 1;
                    }
                    dest[cursor] -= column[bidx] * l_jk_t;
                }
            }
            lower[k] = column;
            chol_diag.push(l_kk);
        }
        Ok(Factor {
            symbolic: self,
            diag: chol_diag,
            lower,
        })
    }
}

/// Numeric block Cholesky factor `P (H + lambda D) P^T = L L^T`.
pub struct Factor<'a> {
    symbolic: &'a Symbolic,
    diag: Vec<Matrix6<f64>>,
    lower: Vec<Vec<Matrix6<f64>>>,
}

impl Factor<'_> {
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let sym = self.symbolic;
        let n = sym.order.len();
        let mut y: Vec<Vector6<f64>> = sym
            .order
            .iter()
            .map(|&b| rhs.fixed_rows::<6>(6 * b).into_owned())
            .collect();
        for k in 0..n {
            let mut yk = y[k];
            self.diag[k].solve_lower_triangular_mut(&mut yk);
            y[k] = yk;
            for (&r, l) in sym.cols[k].iter().zip(&self.lower[k]) {
                y[r] -= l * yk;
            }
        }
        for k in (0..n).rev() {
            let mut t = y[k];
            for (&r, l) in sym.cols[k].iter().zip(&self.lower[k]) {
                t -= l.transpose() * y[r];
            }
            self.diag[k].tr_solve_lower_triangular_mut(&mut t);
            y[k] = t;
        }
        let mut out = DVector::zeros(6 * n);
        for (b, &p) in sym.position.iter().enumerate() {
            out.fixed_rows_mut::<6>(6 * b).copy_from(&y[p]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut impl Rng, n: usize, density: f64) -> BlockMatrix {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || rng.random_bool(density) {
                    pairs.push((i, j));
                }
            }
        }
        let off: Vec<Matrix6<f64>> = pairs
            .iter()
            .map(|_| Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        // diagonal dominance: each row sum of |off| is at most 6 per neighbor
        let mut deg = vec![0usize; n];
        for &(i, j) in &pairs {
            deg[i] += 1;
            deg[j] += 1;
        }
        let diag = (0..n)
            .map(|i| {
                let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
                a * a.transpose() + Matrix6::identity() * (6.0 * deg[i] as f64 + 1.0)
            })
            .collect();
        BlockMatrix { diag, pairs, off }
    }

    #[test]
    fn matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let n = 2 + trial;
            let h = random_spd(&mut rng, n, 0.2);
            let b = DVector::from_fn(6 * n, |_, _| rng.random_range(-1.0..1.0));
            let sym = Symbolic::analyze(n, &h.pairs);
            let x = sym.factor(&h, 0.0).unwrap().solve(&b);
            let dense = h.to_dense().lu().solve(&b).unwrap();
            let rel = (&x - &dense).amax() / dense.amax();
            assert!(rel <= 1e-9, "relative error {rel}");
        }
    }

    #[test]
    fn damping_scales_the_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_spd(&mut rng, 6, 0.5);
        let b = DVector::from_fn(36, |_, _| rng.random_range(-1.0..1.0));
        let sym = Symbolic::analyze(6, &h.pairs);
        let x = sym.factor(&h, 0.3).unwrap().solve(&b);
        let resid = (h.mul_damped(&x, 0.3) - &b).amax();
        assert!(resid <= 1e-10);
    }

    #[test]
    fn indefinite_is_rejected() {
        let h = BlockMatrix {
            diag: vec![-Matrix6::identity()],
            pairs: vec![],
            off: vec![],
        };
        let sym = Symbolic::analyze(1, &[]);
        assert!(matches!(
            sym.factor(&h, 0.0),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn chain_has_no_fill() {
        let pairs: Vec<_> = (0..99).map(|i| (i, i + 1)).collect();
        let sym = Symbolic::analyze(100, &pairs);
        assert_eq!(sym.factor_blocks(), 99);
    }

    #[test]
    fn cycle_fill_is_linear() {
        let mut pairs: Vec<_> = (0..99).map(|i| (i, i + 1)).collect();
        pairs.push((0, 99));
        let sym = Symbolic::analyze(100, &pairs);
        assert!(sym.factor_blocks() <= 2 * 100);
    }
}
