//! Symmetric positive definite matrices and their Cholesky factorizations.

use crate::error::{Error, Result};

/// Symmetric matrix in CSR form with both triangles stored; column indices
/// are sorted within each row.
#[derive(Clone, Debug)]
pub struct SymCsr {
    pub n: usize,
    pub rowptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl SymCsr {
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let n = rows.len();
        let mut rowptr = Vec::with_capacity(n + 1);
        rowptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for mut r in rows {
            r.sort_unstable_by_key(|e| e.0);
            for (c, v) in r {
                cols.push(c);
                vals.push(v);
            }
            rowptr.push(cols.len());
        }
        SymCsr {
            n,
            rowptr,
            cols,
            vals,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.rowptr[i]..self.rowptr[i + 1]).map(move |p| (self.cols[p] as usize, self.vals[p]))
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.row(i).find(|&(j, _)| j == i).map_or(0.0, |e| e.1)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.rowptr[i]..self.rowptr[i + 1] {
                s += self.vals[p] * x[self.cols[p] as usize];
            }
            *yi = s;
        }
    }
}

/// Dense symmetric matrix, row-major.
#[derive(Clone, Debug)]
pub struct DenseSym {
    pub n: usize,
    pub a: Vec<f64>,
}

impl DenseSym {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

#[derive(Clone, Debug)]
pub enum Matrix {
    Sparse(SymCsr),
    Dense(DenseSym),
}

impl Matrix {
    pub fn n(&self) -> usize {
        match self {
            Matrix::Sparse(m) => m.n,
            Matrix::Dense(m) => m.n,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Matrix::Sparse(m) => m.matvec(x, y),
            Matrix::Dense(m) => m.matvec(x, y),
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        match self {
            Matrix::Sparse(m) => m.diag(i),
            Matrix::Dense(m) => m.a[i * m.n + i],
        }
    }

    /// Off-diagonal entries of row i (column, value).
    pub fn for_each_offdiag(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            Matrix::Sparse(m) => {
                for (j, v) in m.row(i) {
                    if j != i {
                        f(j, v);
                    }
                }
            }
            Matrix::Dense(m) => {
                for j in 0..m.n {
                    if j != i {
                        f(j, m.a[i * m.n + j]);
                    }
                }
            }
        }
    }
}

/// Nested-dissection ordering for nodes on an integer lattice coupled by a
/// nearest-neighbor stencil. Returns `perm` with `perm[new] = old`.
pub fn nested_dissection(coords: &[[i32; 3]], dim: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..coords.len()).collect();
    let mut out = Vec::with_capacity(coords.len());
    dissect(coords, dim, &mut ids, &mut out);
    out
}

fn dissect(coords: &[[i32; 3]], dim: usize, ids: &mut [usize], out: &mut Vec<usize>) {
    const LEAF: usize = 64;
    if ids.len() <= LEAF {
        out.extend_from_slice(ids);
        return;
    }
    let mut lo = [i32::MAX; 3];
    let mut hi = [i32::MIN; 3];
    for &i in ids.iter() {
        for k in 0..dim {
            lo[k] = lo[k].min(coords[i][k]);
            hi[k] = hi[k].max(coords[i][k]);
        }
    }
    let axis = (0..dim).max_by_key(|&k| hi[k] - lo[k]).unwrap();
    if hi[axis] - lo[axis] < 2 {
        out.extend_from_slice(ids);
        return;
    }
    let mid = ids.len() / 2;
    ids.select_nth_unstable_by_key(mid, |&i| coords[i][axis]);
    let mut m = coords[ids[mid]][axis];
    if m == lo[axis] {
        m += 1;
    } else if m == hi[axis] {
        m -= 1;
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut sep = Vec::new();
    for &i in ids.iter() {
        let c = coords[i][axis];
        if c < m {
            left.push(i);
        } else if c > m {
            right.push(i);
        } else {
            sep.push(i);
        }
    }
    dissect(coords, dim, &mut left, out);
    dissect(coords, dim, &mut right, out);
    out.extend_from_slice(&sep);
}

/// Sparse Cholesky factor L (lower triangular, CSC with the diagonal first
/// in each column) of P A P^T.
#[derive(Debug)]
pub struct SparseCholesky {
    n: usize,
    perm: Vec<usize>,
    colptr: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseCholesky {
    /// Factor the principal submatrix of `a` on `nodes` (given in the
    /// ordering `perm`, which lists positions into `nodes`).
    pub fn factor(a: &SymCsr, nodes: &[usize], perm: &[usize]) -> Result<Self> {
        let n = nodes.len();
        // position of each original index in the new ordering
        let mut newpos = vec![u32::MAX; a.n];
        for (k, &p) in perm.iter().enumerate() {
            newpos[nodes[p]] = k as u32;
        }
        // upper triangle of the permuted matrix by columns: column k holds
        // rows i < k together with the diagonal
        let mut ucolptr = vec![0usize; n + 1];
        for (k, &p) in perm.iter().enumerate() {
            let old = nodes[p];
            let cnt = a
                .row(old)
                .filter(|&(j, _)| {
                    let q = newpos[j];
                    q != u32::MAX && (q as usize) <= k
                })
                .count();
            ucolptr[k + 1] = ucolptr[k] + cnt;
        }
        let mut urows = vec![0u32; ucolptr[n]];
        let mut uvals = vec![0.0; ucolptr[n]];
        for (k, &p) in perm.iter().enumerate() {
            let old = nodes[p];
            let mut q = ucolptr[k];
            for (j, v) in a.row(old) {
                let r = newpos[j];
                if r != u32::MAX && (r as usize) <= k {
                    urows[q] = r;
                    uvals[q] = v;
                    q += 1;
                }
            }
        }

        // elimination tree
        let mut parent = vec![usize::MAX; n];
        let mut ancestor = vec![usize::MAX; n];
        for k in 0..n {
            for &i in &urows[ucolptr[k]..ucolptr[k + 1]] {
                let mut i = i as usize;
                while i != usize::MAX && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == usize::MAX {
                        parent[i] = k;
                        break;
                    }
                    i = next;
                }
            }
        }

        // column counts from the row patterns
        let mut mark = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        let mut counts = vec![1usize; n];
        for k in 0..n {
            let top = ereach(
                &urows[ucolptr[k]..ucolptr[k + 1]],
                k,
                &parent,
                &mut mark,
                &mut stack,
            );
            for &i in &stack[top..n] {
                counts[i] += 1;
            }
        }
        let mut colptr = vec![0usize; n + 1];
        for k in 0..n {
            colptr[k + 1] = colptr[k] + counts[k];
        }
        let nnz = colptr[n];
        let mut rows = vec![0u32; nnz];
        let mut vals = vec![0.0; nnz];
        let mut next: Vec<usize> = colptr[..n].iter().map(|&p| p + 1).collect();

        // numeric up-looking factorization
        mark.iter_mut().for_each(|m| *m = usize::MAX);
        let mut x = vec![0.0; n];
        for k in 0..n {
            let col = ucolptr[k]..ucolptr[k + 1];
            let top = ereach(&urows[col.clone()], k, &parent, &mut mark, &mut stack);
            for q in col {
                x[urows[q] as usize] = uvals[q];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..n] {
                let lki = x[i] / vals[colptr[i]];
                x[i] = 0.0;
                for p in colptr[i] + 1..next[i] {
                    x[rows[p] as usize] -= vals[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                rows[p] = k as u32;
                vals[p] = lki;
                next[i] += 1;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    column: k,
                    pivot: d,
                });
            }
            rows[colptr[k]] = k as u32;
            vals[colptr[k]] = d.sqrt();
        }

        let perm_nodes = perm.to_vec();
        Ok(SparseCholesky {
            n,
            perm: perm_nodes,
            colptr,
            rows,
            vals,
        })
    }

    /// Solve in place; `b` is indexed by position in the factored node list.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // L y = b
        for j in 0..n {
            let p0 = self.colptr[j];
            let yj = y[j] / self.vals[p0];
            y[j] = yj;
            for p in p0 + 1..self.colptr[j + 1] {
                y[self.rows[p] as usize] -= self.vals[p] * yj;
            }
        }
        // L^T x = y
        for j in (0..n).rev() {
            let p0 = self.colptr[j];
            let mut s = y[j];
            for p in p0 + 1..self.colptr[j + 1] {
                s -= self.vals[p] * y[self.rows[p] as usize];
            }
            y[j] = s / self.vals[p0];
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = y[k];
        }
    }
}

/// Nonzero pattern of row k of L, written to `stack[top..]` in topological
/// order; returns `top`.
fn ereach(
    col: &[u32],
    k: usize,
    parent: &[usize],
    mark: &mut [usize],
    stack: &mut [usize],
) -> usize {
    let n = stack.len();
    let mut top = n;
    mark[k] = k;
    for &i in col {
        let mut i = i as usize;
        if i > k {
            continue;
        }
        let mut len = 0;
        // climb until a marked node; the path is recorded then reversed
        // onto the stack
        let start = top;
        while mark[i] != k {
            stack[start - 1 - len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
            if i == usize::MAX {
                break;
            }
        }
        // path occupies stack[start-len..start] in climb order (deepest first
        // at the highest index); move it so the final list is topological
        stack[start - len..start].reverse();
        top -= len;
    }
    top
}

/// Dense Cholesky factor (lower triangle, row-major) of a principal submatrix.
#[derive(Debug)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn factor(a: &DenseSym, nodes: &[usize]) -> Result<Self> {
        let n = nodes.len();
        let mut l = vec![0.0; n * n];
        for (i, &oi) in nodes.iter().enumerate() {
            for (j, &oj) in nodes.iter().enumerate().take(i + 1) {
                l[i * n + j] = a.a[oi * a.n + oj];
            }
        }
        for j in 0..n {
            let (done, rest) = l.split_at_mut((j + 1) * n);
            let rowj = &mut done[j * n..];
            let d = rowj[j] - rowj[..j].iter().map(|v| v * v).sum::<f64>();
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    column: j,
                    pivot: d,
                });
            }
            let d = d.sqrt();
            rowj[j] = d;
            for row in rest.chunks_exact_mut(n) {
                let s: f64 = row[..j].iter().zip(&rowj[..j]).map(|(a, b)| a * b).sum();
                row[j] = (row[j] - s) / d;
            }
        }
        Ok(DenseCholesky { n, l })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }
}

#[derive(Debug)]
pub enum Factor {
    Sparse(SparseCholesky),
    Dense(DenseCholesky),
}

impl Factor {
    /// Factor the principal submatrix of `m` on `nodes`; `coords` are the
    /// lattice indices of all nodes (used for the fill-reducing ordering).
    pub fn new(m: &Matrix, nodes: &[usize], coords: &[[i32; 3]], dim: usize) -> Result<Self> {
        match m {
            Matrix::Sparse(a) => {
                let sub: Vec<[i32; 3]> = nodes.iter().map(|&i| coords[i]).collect();
                let perm = nested_dissection(&sub, dim);
                Ok(Factor::Sparse(SparseCholesky::factor(a, nodes, &perm)?))
            }
            Matrix::Dense(a) => Ok(Factor::Dense(DenseCholesky::factor(a, nodes)?)),
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        match self {
            Factor::Sparse(f) => f.solve_in_place(b),
            Factor::Dense(f) => f.solve_in_place(b),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_2d(m: usize) -> (SymCsr, Vec<[i32; 3]>) {
        let idx = |i: usize, j: usize| (i * m + j) as u32;
        let mut rows = Vec::new();
        let mut coords = Vec::new();
        for i in 0..m {
            for j in 0..m {
                let mut r = vec![(idx(i, j), 4.0)];
                if i > 0 {
                    r.push((idx(i - 1, j), -1.0));
                }
                if i + 1 < m {
                    r.push((idx(i + 1, j), -1.0));
                }
                if j > 0 {
                    r.push((idx(i, j - 1), -1.0));
                }
                if j + 1 < m {
                    r.push((idx(i, j + 1), -1.0));
                }
                rows.push(r);
                coords.push([i as i32, j as i32, 0]);
            }
        }
        (SymCsr::from_rows(rows), coords)
    }

    #[test]
    fn nested_dissection_is_permutation() {
        let (_, coords) = laplacian_2d(37);
        let mut p = nested_dissection(&coords, 2);
        p.sort_unstable();
        assert_eq!(p, (0..37 * 37).collect::<Vec<_>>());
    }

    #[test]
    fn sparse_cholesky_solves() {
        let (a, coords) = laplacian_2d(40);
        let nodes: Vec<usize> = (0..a.n).collect();
        let f = Factor::new(&Matrix::Sparse(a.clone()), &nodes, &coords, 2).unwrap();
        let x: Vec<f64> = (0..a.n).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let mut b = vec![0.0; a.n];
        a.matvec(&x, &mut b);
        f.solve_in_place(&mut b);
        let err = b
            .iter()
            .zip(&x)
            .fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        assert!(err < 1e-11, "error {err}");
    }

    #[test]
    fn sparse_cholesky_submatrix() {
        let (a, coords) = laplacian_2d(20);
        let nodes: Vec<usize> = (0..a.n).filter(|i| i % 3 != 0).collect();
        let f = Factor::new(&Matrix::Sparse(a.clone()), &nodes, &coords, 2).unwrap();
        let mut b = vec![1.0; nodes.len()];
        f.solve_in_place(&mut b);
        // check A_SS x = 1
        let mut full = vec![0.0; a.n];
        for (k, &i) in nodes.iter().enumerate() {
            full[i] = b[k];
        }
        let mut y = vec![0.0; a.n];
        a.matvec(&full, &mut y);
        for &i in &nodes {
            assert!((y[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_cholesky_solves() {
        let n = 30;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = if i == j {
                    n as f64
                } else {
                    1.0 / (1.0 + (i as f64 - j as f64).abs())
                };
            }
        }
        let m = DenseSym { n, a };
        let nodes: Vec<usize> = (0..n).collect();
        let f = DenseCholesky::factor(&m, &nodes).unwrap();
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut b = vec![0.0; n];
        m.matvec(&x, &mut b);
        f.solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-11);
        }
    }

    #[test]
    fn indefinite_rejected() {
        let a = SymCsr::from_rows(vec![vec![(0, 1.0), (1, 2.0)], vec![(0, 2.0), (1, 1.0)]]);
        let f = Factor::new(&Matrix::Sparse(a), &[0, 1], &[[0, 0, 0], [1, 0, 0]], 1);
        assert!(matches!(f, Err(Error::NotPositiveDefinite { .. })));
    }
}
