//! Sparse Cholesky factorization of symmetric positive definite matrices.
//!
//! Up-looking LL^T with an elimination-tree symbolic phase, applied after a
//! reverse Cuthill-McKee fill-reducing permutation. Only desk-scale exactness
//! is contractual; the permutation is an implementation choice.

use crate::sparse::CsrMatrix;

const NONE: usize = usize::MAX;

/// Permuted sparse Cholesky factor of a symmetric positive definite matrix.
///
/// Stores `L` column-compressed with the diagonal entry first in each column,
/// such that `L L^T = P M P^T` where `P` picks `perm[i]` as permuted row `i`.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    perm: Vec<usize>,
    colptr: Vec<usize>,
    rowind: Vec<usize>,
    values: Vec<f64>,
    log_det: f64,
}

/// Pivot index (in original ordering) at which the factorization broke down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
}

impl SparseCholesky {
    /// Factorizes a symmetric matrix given in full (both triangles) CSR form.
    pub fn factor(m: &CsrMatrix) -> Result<Self, NotPositiveDefinite> {
        assert_eq!(m.nrows(), m.ncols(), "matrix must be square");
        let n = m.nrows();
        let perm = reverse_cuthill_mckee(m);
        let mut inv = vec![0usize; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }

        // lower triangle of the permuted matrix, CSR, sorted columns
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in m.iter_entries() {
            let (pi, pj) = (inv[i], inv[j]);
            if pj <= pi {
                rows[pi].push((pj, v));
            }
        }
        for r in rows.iter_mut() {
            r.sort_unstable_by_key(|e| e.0);
        }

        let parent = elimination_tree(&rows, n);

        // columns of L; diagonal entry first, rows strictly increasing after
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut x = vec![0.0f64; n];
        let mut stamp = vec![NONE; n];
        let mut reach: Vec<usize> = Vec::with_capacity(n);
        let mut path: Vec<usize> = Vec::with_capacity(n);
        let mut log_det = 0.0;

        for k in 0..n {
            // scatter row k of the lower triangle; collect reach via etree
            reach.clear();
            stamp[k] = k;
            let mut d = 0.0;
            for &(j, v) in &rows[k] {
                if j == k {
                    d = v;
                    continue;
                }
                x[j] = v;
                path.clear();
                let mut t = j;
                while t != NONE && stamp[t] != k {
                    path.push(t);
                    stamp[t] = k;
                    t = parent[t];
                }
                // ancestors first when reversed below; reach stays topological
                for &p in path.iter().rev() {
                    reach.push(p);
                }
            }
            reach.sort_unstable();

            for &j in &reach {
                let col = &cols[j];
                let ljj = col[0].1;
                let lkj = x[j] / ljj;
                x[j] = 0.0;
                for &(r, v) in &col[1..] {
                    x[r] -= v * lkj;
                }
                d -= lkj * lkj;
                cols[j].push((k, lkj));
            }

            if d <= 0.0 || !d.is_finite() {
                return Err(NotPositiveDefinite { pivot: perm[k] });
            }
            let lkk = d.sqrt();
            log_det += 2.0 * lkk.ln();
            cols[k].push((k, lkk));
        }

        let nnz: usize = cols.iter().map(|c| c.len()).sum();
        let mut colptr = Vec::with_capacity(n + 1);
        let mut rowind = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        colptr.push(0);
        for col in &cols {
            for &(r, v) in col {
                rowind.push(r);
                values.push(v);
            }
            colptr.push(rowind.len());
        }

        Ok(Self {
            n,
            perm,
            colptr,
            rowind,
            values,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `log det M` of the factored matrix.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Factor entries as (row, col, value) triplets in the permuted ordering.
    pub fn factor_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.values.len());
        for j in 0..self.n {
            for p in self.colptr[j]..self.colptr[j + 1] {
                out.push((self.rowind[p], j, self.values[p]));
            }
        }
        out
    }

    /// Rebuilds a factor from serialized parts (triplets must describe a
    /// lower-triangular matrix with positive diagonal).
    pub fn from_parts(n: usize, perm: Vec<usize>, triplets: &[(usize, usize, f64)]) -> Self {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(r, c, v) in triplets {
            assert!(r >= c, "factor must be lower triangular");
            cols[c].push((r, v));
        }
        let mut log_det = 0.0;
        for (j, col) in cols.iter_mut().enumerate() {
            col.sort_unstable_by_key(|e| e.0);
            assert!(col.first().map(|e| e.0) == Some(j), "missing diagonal");
            log_det += 2.0 * col[0].1.ln();
        }
        let mut colptr = vec![0usize];
        let mut rowind = Vec::new();
        let mut values = Vec::new();
        for col in &cols {
            for &(r, v) in col {
                rowind.push(r);
                values.push(v);
            }
            colptr.push(rowind.len());
        }
        Self {
            n,
            perm,
            colptr,
            rowind,
            values,
            log_det,
        }
    }

    /// Solves `M x = b` for the factored matrix `M`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut w: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        self.solve_l(&mut w);
        self.solve_lt(&mut w);
        let mut x = vec![0.0; self.n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = w[i];
        }
        x
    }

    /// Forward solve `L w = w` in permuted coordinates.
    fn solve_l(&self, w: &mut [f64]) {
        for j in 0..self.n {
            let lo = self.colptr[j];
            let hi = self.colptr[j + 1];
            w[j] /= self.values[lo];
            let wj = w[j];
            for p in lo + 1..hi {
                w[self.rowind[p]] -= self.values[p] * wj;
            }
        }
    }

    /// Backward solve `L^T w = w` in permuted coordinates.
    fn solve_lt(&self, w: &mut [f64]) {
        for j in (0..self.n).rev() {
            let lo = self.colptr[j];
            let hi = self.colptr[j + 1];
            let mut acc = w[j];
            for p in lo + 1..hi {
                acc -= self.values[p] * w[self.rowind[p]];
            }
            w[j] = acc / self.values[lo];
        }
    }

    /// Maps `z -> L^{-T} z` followed by un-permutation: the linear map that
    /// turns a standard normal vector into a draw with covariance `M^{-1}`.
    pub fn half_solve_unpermute(&self, z: &[f64]) -> Vec<f64> {
        let mut w = z.to_vec();
        self.solve_lt(&mut w);
        let mut x = vec![0.0; self.n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = w[i];
        }
        x
    }

    /// Reconstructs the factored matrix `P^T (L L^T) P` densely (test support).
    pub fn reconstruct_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n;
        let mut l = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            for p in self.colptr[j]..self.colptr[j + 1] {
                l[(self.rowind[p], j)] = self.values[p];
            }
        }
        let llt = &l * l.transpose();
        let mut out = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(self.perm[i], self.perm[j])] = llt[(i, j)];
            }
        }
        out
    }
}

/// Computes the elimination tree from the sorted lower-triangular rows.
fn elimination_tree(rows: &[Vec<(usize, f64)>], n: usize) -> Vec<usize> {
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for (k, row) in rows.iter().enumerate() {
        for &(i, _) in row {
            if i >= k {
                continue;
            }
            let mut j = i;
            while j != NONE && j < k {
                let next = ancestor[j];
                ancestor[j] = k;
                if next == NONE {
                    parent[j] = k;
                    break;
                }
                j = next;
            }
        }
    }
    parent
}

/// Reverse Cuthill-McKee ordering on the symmetric sparsity pattern.
///
/// Returns `perm` with `perm[new] = old`. Falls back to natural order for
/// empty patterns; handles disconnected components.
pub fn reverse_cuthill_mckee(m: &CsrMatrix) -> Vec<usize> {
    let n = m.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in m.iter_entries() {
        if i != j {
            adj[i].push(j);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();

    let mut visited = vec![false; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut frontier: Vec<usize> = Vec::new();

    loop {
        let start = match (0..n).filter(|&i| !visited[i]).min_by_key(|&i| degree[i]) {
            Some(s) => s,
            None => break,
        };
        let start = pseudo_peripheral(start, &adj, &visited);
        visited[start] = true;
        order.push(start);
        let mut head = order.len() - 1;
        while head < order.len() {
            let u = order[head];
            head += 1;
            frontier.clear();
            for &v in &adj[u] {
                if !visited[v] {
                    visited[v] = true;
                    frontier.push(v);
                }
            }
            frontier.sort_unstable_by_key(|&v| degree[v]);
            order.extend_from_slice(&frontier);
        }
    }
    order.reverse();
    order
}

/// Double-sweep BFS heuristic for a low-eccentricity-complement start node.
fn pseudo_peripheral(start: usize, adj: &[Vec<usize>], visited: &[bool]) -> usize {
    let mut current = start;
    for _ in 0..2 {
        let far = bfs_farthest(current, adj, visited);
        if far == current {
            break;
        }
        current = far;
    }
    current
}

fn bfs_farthest(start: usize, adj: &[Vec<usize>], visited: &[bool]) -> usize {
    let n = adj.len();
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut level = vec![start];
    let mut last = vec![start];
    while !level.is_empty() {
        last = level.clone();
        let mut next = Vec::new();
        for &u in &level {
            for &v in &adj[u] {
                if !seen[v] && !visited[v] {
                    seen[v] = true;
                    next.push(v);
                }
            }
        }
        level = next;
    }
    // min-degree node of the last level
    *last
        .iter()
        .min_by_key(|&&v| adj[v].len())
        .expect("last level nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::TripletBuilder;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_spd(n: usize, density: f64, rng: &mut ChaCha12Rng) -> CsrMatrix {
        // A^T A + n * I pattern, assembled densely then sparsified
        let mut t = TripletBuilder::new();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if rng.random::<f64>() < density {
                    dense[(i, j)] = rng.random::<f64>() - 0.5;
                }
            }
        }
        let spd = dense.transpose() * &dense + nalgebra::DMatrix::identity(n, n) * n as f64;
        for i in 0..n {
            for j in 0..n {
                if spd[(i, j)] != 0.0 {
                    t.push(i, j, spd[(i, j)]);
                }
            }
        }
        t.build(n, n).unwrap()
    }

    #[test]
    fn factor_reconstructs_matrix() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 17, 40] {
            let m = random_spd(n, 0.2, &mut rng);
            let f = SparseCholesky::factor(&m).unwrap();
            let rec = f.reconstruct_dense();
            let orig = m.to_dense();
            let rel = (rec - &orig).norm() / orig.norm();
            assert!(rel < 1e-10, "n={n} relative error {rel}");
        }
    }

    #[test]
    fn solve_matches_dense() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for n in [3usize, 10, 30] {
            let m = random_spd(n, 0.3, &mut rng);
            let f = SparseCholesky::factor(&m).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let x = f.solve(&b);
            let want = m
                .to_dense()
                .lu()
                .solve(&nalgebra::DVector::from_column_slice(&b))
                .unwrap();
            for i in 0..n {
                assert!((x[i] - want[i]).abs() < 1e-9, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn log_det_matches_dense() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let m = random_spd(20, 0.25, &mut rng);
        let f = SparseCholesky::factor(&m).unwrap();
        let dense_det = m.to_dense().determinant();
        assert!((f.log_det() - dense_det.ln()).abs() < 1e-8);
    }

    #[test]
    fn indefinite_matrix_reports_pivot() {
        let m = CsrMatrix::from_triplets(2, 2, &[0, 1], &[0, 1], &[1.0, -1.0]).unwrap();
        let err = SparseCholesky::factor(&m).unwrap_err();
        assert_eq!(err.pivot, 1);
    }

    #[test]
    fn singular_matrix_fails() {
        // rank-1: [1 1; 1 1]
        let m = CsrMatrix::from_triplets(2, 2, &[0, 0, 1, 1], &[0, 1, 0, 1], &[1.0; 4]).unwrap();
        assert!(SparseCholesky::factor(&m).is_err());
    }

    #[test]
    fn from_parts_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let m = random_spd(12, 0.3, &mut rng);
        let f = SparseCholesky::factor(&m).unwrap();
        let g = SparseCholesky::from_parts(f.dim(), f.perm().to_vec(), &f.factor_triplets());
        let b: Vec<f64> = (0..12).map(|i| i as f64 - 5.0).collect();
        assert_eq!(f.solve(&b), g.solve(&b));
        assert!((f.log_det() - g.log_det()).abs() < 1e-12);
    }

    #[test]
    fn rcm_reduces_fill_on_banded_problem() {
        // an arrow matrix ordered badly: RCM should not blow up fill
        let n = 50;
        let mut t = TripletBuilder::new();
        for i in 0..n {
            t.push(i, i, 4.0);
        }
        for i in 1..n {
            t.push(0, i, 0.1);
            t.push(i, 0, 0.1);
        }
        let m = t.build(n, n).unwrap();
        let f = SparseCholesky::factor(&m).unwrap();
        let rec = f.reconstruct_dense();
        assert!((rec - m.to_dense()).norm() < 1e-10);
    }
}
