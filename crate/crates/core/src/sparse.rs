// SPDX-License-Identifier: Apache-2.0
//! Sparse symmetric matrices and a left-to-right (up-looking) Cholesky
//! factorization with a minimum-degree fill-reducing ordering.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Compressed sparse row storage of a square matrix. Column indices are
/// sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets. Duplicates are summed in the
    /// order they appear, so identical triplet streams give bit-identical
    /// matrices.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let p = next[r];
            cols[p] = c;
            vals[p] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..n {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|p| (cols[p], vals[p])));
            // stable: duplicates keep insertion order for summation
            row.sort_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut s = row[i].1;
                i += 1;
                while i < row.len() && row[i].0 == c {
                    s += row[i].1;
                    i += 1;
                }
                indices.push(c);
                values.push(s);
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |p| (self.indices[p], self.values[p]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        match cols.binary_search(&j) {
            Ok(p) => self.values[self.indptr[i] + p],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    /// Off-diagonal adjacency lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
            .collect()
    }
}

/// Minimum-degree elimination order on an explicit elimination graph.
/// Ties go to the lowest vertex index. Returns `perm` with `perm[k]` the
/// vertex eliminated k-th.
pub fn minimum_degree(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut nbrs: Vec<Vec<usize>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut v: Vec<usize> = a.iter().copied().filter(|&j| j != i).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    let mut eliminated = vec![false; n];
    let mut mark = vec![usize::MAX; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((nbrs[v].len(), v))).collect();
    let mut order = Vec::with_capacity(n);
    let mut stamp = 0usize;

    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != nbrs[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let clique = std::mem::take(&mut nbrs[v]);
        for &u in &clique {
            stamp += 1;
            let list = &mut nbrs[u];
            list.retain(|&w| w != v);
            for &w in list.iter() {
                mark[w] = stamp;
            }
            for &w in &clique {
                if w != u && mark[w] != stamp {
                    mark[w] = stamp;
                    list.push(w);
                }
            }
            heap.push(Reverse((list.len(), u)));
        }
    }
    debug_assert_eq!(order.len(), n);
    order
}

/// Smallest accepted pivot relative to the original diagonal entry.
const PIVOT_TOL: f64 = 1e-12;

/// Cholesky factor L of P A P^T, stored column-wise with the diagonal first
/// in each column.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &CsrMatrix, perm: &[usize]) -> Result<Self, String> {
        let n = a.n;
        if perm.len() != n {
            return Err(format!("permutation length {} != {}", perm.len(), n));
        }
        let mut pinv = vec![usize::MAX; n];
        for (k, &p) in perm.iter().enumerate() {
            if p >= n || pinv[p] != usize::MAX {
                return Err("invalid permutation".into());
            }
            pinv[p] = k;
        }
        // upper triangle of C = P A P^T, column k holds rows i <= k
        let upper_col = |k: usize| {
            a.row(perm[k])
                .map(|(j, v)| (pinv[j], v))
                .filter(move |&(i, _)| i <= k)
        };

        let mut parent = vec![usize::MAX; n];
        let mut ancestor = vec![usize::MAX; n];
        for k in 0..n {
            for (mut i, _) in upper_col(k) {
                while i != usize::MAX && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == usize::MAX {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        let mut mark = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        let mut path = vec![0usize; n];
        let ereach = |k: usize, mark: &mut [usize], stack: &mut [usize], path: &mut [usize]| {
            let mut top = n;
            mark[k] = k;
            for (mut i, _) in upper_col(k) {
                let mut len = 0;
                while mark[i] != k {
                    path[len] = i;
                    len += 1;
                    mark[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    stack[top] = path[len];
                }
            }
            top
        };

        let mut counts = vec![1usize; n];
        for k in 0..n {
            let top = ereach(k, &mut mark, &mut stack, &mut path);
            for &i in &stack[top..n] {
                counts[i] += 1;
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + counts[k];
        }
        let nnz = lp[n];
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0; nnz];
        let mut next = lp.clone();
        let mut x = vec![0.0; n];
        mark.fill(usize::MAX);

        for k in 0..n {
            let top = ereach(k, &mut mark, &mut stack, &mut path);
            let mut akk = 0.0;
            for (i, v) in upper_col(k) {
                x[i] += v;
                if i == k {
                    akk += v;
                }
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..n] {
                let lki = x[i] / lx[lp[i]];
                x[i] = 0.0;
                for q in lp[i] + 1..next[i] {
                    x[li[q]] -= lx[q] * lki;
                }
                d -= lki * lki;
                let q = next[i];
                next[i] += 1;
                li[q] = k;
                lx[q] = lki;
            }
            // a pivot lost to roundoff means A is singular or indefinite
            if !(d > PIVOT_TOL * akk) || !d.is_finite() {
                return Err(format!(
                    "matrix is not positive definite (pivot {d:e} at original row {})",
                    perm[k]
                ));
            }
            let q = next[k];
            next[k] += 1;
            li[q] = k;
            lx[q] = d.sqrt();
        }

        Ok(Self {
            n,
            perm: perm.to_vec(),
            lp,
            li,
            lx,
        })
    }

    pub fn nnz(&self) -> usize {
        self.lx.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for j in 0..n {
            y[j] /= self.lx[self.lp[j]];
            let yj = y[j];
            for p in self.lp[j] + 1..self.lp[j + 1] {
                y[self.li[p]] -= self.lx[p] * yj;
            }
        }
        for j in (0..n).rev() {
            let mut s = y[j];
            for p in self.lp[j] + 1..self.lp[j + 1] {
                s -= self.lx[p] * y[self.li[p]];
            }
            y[j] = s / self.lx[self.lp[j]];
        }
        let mut out = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            out[p] = y[k];
        }
        out
    }
}

/// Order with minimum degree, factor and solve `a x = b`.
pub fn solve_spd(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, String> {
    let perm = minimum_degree(&a.adjacency());
    Ok(Cholesky::factor(a, &perm)?.solve(b))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
