//! Real linear solves for the power-flow Jacobian and the DC susceptance
//! matrix.
//!
//! Both solvers take the same compressed-row input. [`DenseLu`] does
//! Gaussian elimination with partial pivoting; [`SparseLu`] orders the
//! unknowns by minimum degree on the symmetric pattern and eliminates in
//! sparse rows with diagonal pivots, which suits the structurally symmetric,
//! diagonally strong matrices that admittance-based systems produce.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinalgError {
    Singular { pivot: usize },
    Dimension { expected: usize, found: usize },
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinalgError::Singular { pivot } => write!(f, "matrix is singular at pivot {pivot}"),
            LinalgError::Dimension { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
        }
    }
}

impl core::error::Error for LinalgError {}

/// Square real matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed and
    /// explicit zeros are kept so the pattern stays fixed across refills.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                row_ptr[r + 1] += 1;
                cols.push(c);
                vals.push(v);
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix { n, row_ptr, cols, vals }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut t = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, t)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, a)| a * x[j]).sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, a) in self.row(i) {
                row[j] = a;
            }
        }
        d
    }
}

pub trait LinearSolver {
    /// Solves `a x = b`, overwriting `b` with `x`.
    fn solve(&self, a: &SparseMatrix, b: &mut [f64]) -> Result<(), LinalgError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DenseLu;

impl LinearSolver for DenseLu {
    fn solve(&self, a: &SparseMatrix, b: &mut [f64]) -> Result<(), LinalgError> {
        let n = a.dim();
        if b.len() != n {
            return Err(LinalgError::Dimension { expected: n, found: b.len() });
        }
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for (j, v) in a.row(i) {
                m[i * n + j] = v;
            }
        }
        dense_lu_solve(&mut m, n, b)
    }
}

/// In-place LU with partial pivoting on a row-major `n x n` buffer.
pub fn dense_lu_solve(m: &mut [f64], n: usize, b: &mut [f64]) -> Result<(), LinalgError> {
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (p, pmax) = (k..n)
            .map(|i| (i, m[i * n + k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax <= scale * 1e-14 {
            return Err(LinalgError::Singular { pivot: k });
        }
        if p != k {
            for j in 0..n {
                m.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let piv = m[k * n + k];
        for i in k + 1..n {
            let l = m[i * n + k] / piv;
            if l == 0.0 {
                continue;
            }
            m[i * n + k] = l;
            for j in k + 1..n {
                m[i * n + j] -= l * m[k * n + j];
            }
            b[i] -= l * b[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= m[k * n + j] * b[j];
        }
        b[k] = s / m[k * n + k];
    }
    Ok(())
}

/// Elimination order from greedy minimum degree on the pattern of `A + Aᵀ`.
pub fn minimum_degree_order(a: &SparseMatrix) -> Vec<usize> {
    let n = a.dim();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for i in 0..n {
        for (j, _) in a.row(i) {
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
    }
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| !eliminated[v])
            .min_by_key(|&v| (adj[v].len(), v))
            .unwrap();
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &u in &nbrs {
            adj[u].remove(&v);
        }
        for (k, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[k + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        adj[v].clear();
    }
    order
}

/// Sparse LU factors of a symmetrically permuted matrix.
#[derive(Debug, Clone)]
pub struct SparseLuFactors {
    perm: Vec<usize>,
    // strictly lower part of L (unit diagonal), per row, ascending columns
    lower: Vec<Vec<(usize, f64)>>,
    // U rows: diagonal first, then strictly upper entries
    upper: Vec<Vec<(usize, f64)>>,
}

impl SparseLuFactors {
    pub fn factor(a: &SparseMatrix, perm: &[usize]) -> Result<Self, LinalgError> {
        let n = a.dim();
        if perm.len() != n {
            return Err(LinalgError::Dimension { expected: n, found: perm.len() });
        }
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut work = vec![0.0f64; n];
        let mut filled = vec![false; n];
        let mut lower: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut upper: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut pattern: BTreeSet<usize> = BTreeSet::new();
            let mut row_scale = 0.0f64;
            for (j, v) in a.row(perm[i]) {
                let jj = inv[j];
                work[jj] = v;
                filled[jj] = true;
                pattern.insert(jj);
                row_scale = row_scale.max(v.abs());
            }
            let mut l_row = Vec::new();
            let mut cursor = 0usize;
            loop {
                let next = pattern.range(cursor..i).next().copied();
                let Some(k) = next else { break };
                cursor = k + 1;
                let wk = work[k];
                if wk == 0.0 {
                    continue;
                }
                let u_row = &upper[k];
                let l = wk / u_row[0].1;
                l_row.push((k, l));
                for &(j, u) in &u_row[1..] {
                    if !filled[j] {
                        filled[j] = true;
                        pattern.insert(j);
                    }
                    work[j] -= l * u;
                }
            }
            let diag = work[i];
            if !filled[i] || diag.abs() <= row_scale.max(f64::MIN_POSITIVE) * 1e-14 {
                return Err(LinalgError::Singular { pivot: i });
            }
            let mut u_row = vec![(i, diag)];
            for &j in pattern.range(i + 1..) {
                u_row.push((j, work[j]));
            }
            for &j in &pattern {
                work[j] = 0.0;
                filled[j] = false;
            }
            lower.push(l_row);
            upper.push(u_row);
        }
        Ok(SparseLuFactors { perm: perm.to_vec(), lower, upper })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = self.lower[i].iter().map(|&(k, l)| l * y[k]).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.upper[i];
            let s: f64 = row[1..].iter().map(|&(j, u)| u * y[j]).sum();
            y[i] = (y[i] - s) / row[0].1;
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }

    /// Entries in L and U, a measure of fill.
    pub fn nnz(&self) -> usize {
        self.lower.iter().map(Vec::len).sum::<usize>() + self.upper.iter().map(Vec::len).sum::<usize>()
    }
}

/// Sparse LU with an optional precomputed ordering; falls back to dense
/// partial pivoting when a diagonal pivot vanishes.
#[derive(Debug, Clone, Default)]
pub struct SparseLu {
    ordering: Option<Vec<usize>>,
}

impl SparseLu {
    pub fn with_ordering(ordering: Vec<usize>) -> Self {
        SparseLu { ordering: Some(ordering) }
    }
}

impl LinearSolver for SparseLu {
    fn solve(&self, a: &SparseMatrix, b: &mut [f64]) -> Result<(), LinalgError> {
        if b.len() != a.dim() {
            return Err(LinalgError::Dimension { expected: a.dim(), found: b.len() });
        }
        let computed;
        let perm = match &self.ordering {
            Some(p) => p.as_slice(),
            None => {
                computed = minimum_degree_order(a);
                computed.as_slice()
            }
        };
        match SparseLuFactors::factor(a, perm) {
            Ok(f) => {
                f.solve_in_place(b);
                Ok(())
            }
            Err(LinalgError::Singular { .. }) => DenseLu.solve(a, b),
            Err(e) => Err(e),
        }
    }
}

/// Systems up to this size go to [`DenseLu`], larger ones to [`SparseLu`].
pub const DENSE_LIMIT: usize = 64;

/// Solves with the solver appropriate for the system size.
pub fn solve(a: &SparseMatrix, b: &mut [f64]) -> Result<(), LinalgError> {
    if a.dim() <= DENSE_LIMIT {
        DenseLu.solve(a, b)
    } else {
        SparseLu::default().solve(a, b)
    }
}
