//! Sparse symmetric quasi-definite factorization for equality-constrained
//! quadratic minimization.
//!
//! A [`SaddlePoint`] holds a symmetric positive semidefinite primal block `A`
//! and sparse constraint rows `C`. It is factored as the permuted KKT matrix
//! `[A + δI, Cᵀ; C, −δI]` with an up-looking LDLᵀ, and solutions are refined
//! against the unregularized system. Constraint rows are normalized
//! internally; multipliers are returned in the caller's scaling.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Accumulates entries of a symmetric matrix.
///
/// Entries with `i > j` are ignored, so a full symmetric element matrix can be
/// pushed entry by entry and each off-diagonal pair is kept once. Exact zeros
/// are dropped.
#[derive(Debug, Clone)]
pub struct SymmetricBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SymmetricBuilder {
    pub fn new(n: usize) -> Self {
        SymmetricBuilder { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        SymmetricBuilder { n, entries: Vec::with_capacity(cap) }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        if i <= j && v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    /// Adds `v` to both `(i, j)` and `(j, i)` (once on the diagonal).
    #[inline]
    pub fn push_sym(&mut self, i: usize, j: usize, v: f64) {
        if i <= j {
            self.push(i, j, v)
        } else {
            self.push(j, i, v)
        }
    }

    pub fn build(self) -> UpperCsc {
        UpperCsc::from_triplets(self.n, self.entries)
    }
}

/// Upper triangle (row ≤ column) of a symmetric matrix in compressed columns.
#[derive(Debug, Clone)]
pub struct UpperCsc {
    pub n: usize,
    pub colptr: Vec<usize>,
    pub rowind: Vec<usize>,
    pub values: Vec<f64>,
}

impl UpperCsc {
    fn from_triplets(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_unstable_by_key(|&(i, j, _)| (j, i));
        let mut colptr = vec![0; n + 1];
        let mut rowind = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last = (NONE, NONE);
        for (i, j, v) in entries {
            if (i, j) == last {
                *values.last_mut().unwrap() += v;
            } else {
                rowind.push(i);
                values.push(v);
                colptr[j + 1] += 1;
                last = (i, j);
            }
        }
        for j in 0..n {
            colptr[j + 1] += colptr[j];
        }
        UpperCsc { n, colptr, rowind, values }
    }

    /// `y = A x` for the full symmetric matrix.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            for p in self.colptr[j]..self.colptr[j + 1] {
                let i = self.rowind[p];
                let v = self.values[p];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for j in 0..self.n {
            for p in self.colptr[j]..self.colptr[j + 1] {
                if self.rowind[p] == j {
                    d[j] += self.values[p];
                }
            }
        }
        d
    }
}

/// One sparse constraint row `Σ val[k] x[idx[k]]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn new() -> Self {
        SparseRow::default()
    }

    pub fn unit(i: usize) -> Self {
        SparseRow { idx: vec![i], val: vec![1.0] }
    }

    pub fn push(&mut self, i: usize, v: f64) {
        if v != 0.0 {
            self.idx.push(i);
            self.val.push(v);
        }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, v)| v * x[i]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.val.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Equality-constrained quadratic problem data:
/// minimize `½xᵀAx − fᵀx` subject to `Cx = g`.
#[derive(Debug, Clone)]
pub struct SaddlePoint {
    pub a: UpperCsc,
    pub rows: Vec<SparseRow>,
}

/// Outcome of a refined solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    /// Normwise backward error `‖b − Kx‖∞ / (‖K‖∞‖x‖∞ + ‖b‖∞)` of the
    /// unregularized KKT system.
    pub residual: f64,
    pub refinement_steps: usize,
    /// Pivots replaced by dynamic regularization during factorization.
    pub regularized_pivots: usize,
}

/// Solution of a [`SaddlePoint`] solve.
#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub x: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub report: SolveReport,
}

impl SaddlePoint {
    pub fn new(a: UpperCsc, rows: Vec<SparseRow>) -> Self {
        SaddlePoint { a, rows }
    }

    pub fn n_primal(&self) -> usize {
        self.a.n
    }

    /// Factors the KKT matrix. `order` is an optional elimination order of the
    /// primal unknowns (a permutation of `0..n`); every constraint row is
    /// eliminated right after the last primal unknown it touches.
    pub fn factor(&self, order: Option<&[usize]>) -> Result<SaddleFactor> {
        let n = self.a.n;
        let m = self.rows.len();
        let natural: Vec<usize>;
        let order = match order {
            Some(o) => {
                if o.len() != n {
                    return Err(Error::InvalidArgument("ordering has wrong length".into()));
                }
                o
            }
            None => {
                natural = (0..n).collect();
                &natural
            }
        };
        let mut pos = vec![NONE; n];
        for (k, &i) in order.iter().enumerate() {
            if i >= n || pos[i] != NONE {
                return Err(Error::InvalidArgument("ordering is not a permutation".into()));
            }
            pos[i] = k;
        }

        // Rows are scaled to the size of `A` so that a small normwise
        // backward error also means small constraint residuals.
        let amax = self.a.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let row_size = if amax > 0.0 { amax } else { 1.0 };
        let mut scale = Vec::with_capacity(m);
        let mut anchored: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, row) in self.rows.iter().enumerate() {
            let nrm = row.norm();
            if row.idx.is_empty() || nrm == 0.0 {
                return Err(Error::Solver(format!("constraint row {r} is empty")));
            }
            scale.push(row_size / nrm);
            let last = row.idx.iter().map(|&i| pos[i]).max().unwrap();
            anchored[last].push(r);
        }
        let total = n + m;
        let mut perm = Vec::with_capacity(total);
        for k in 0..n {
            perm.push(order[k]);
            for &r in &anchored[k] {
                perm.push(n + r);
            }
        }
        let mut iperm = vec![0; total];
        for (k, &g) in perm.iter().enumerate() {
            iperm[g] = k;
        }

        let delta = 1e-10 * amax.max(1.0);
        let mut trip = Vec::with_capacity(self.a.values.len() + total);
        for j in 0..n {
            for p in self.a.colptr[j]..self.a.colptr[j + 1] {
                let (pi, pj) = (iperm[self.a.rowind[p]], iperm[j]);
                trip.push((pi.min(pj), pi.max(pj), self.a.values[p]));
            }
        }
        let mut signs = vec![1i8; total];
        for (r, row) in self.rows.iter().enumerate() {
            let pr = iperm[n + r];
            signs[pr] = -1;
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                trip.push((iperm[i], pr, v * scale[r]));
            }
        }
        for k in 0..total {
            trip.push((k, k, signs[k] as f64 * delta));
        }
        let kkt = UpperCsc::from_triplets(total, trip);
        let ldl = Ldl::factor(&kkt, &signs, delta)?;
        let mut rowsum = vec![0.0; total];
        for j in 0..n {
            for p in self.a.colptr[j]..self.a.colptr[j + 1] {
                let (i, v) = (self.a.rowind[p], self.a.values[p].abs());
                rowsum[i] += v;
                if i != j {
                    rowsum[j] += v;
                }
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                rowsum[i] += (v * scale[r]).abs();
                rowsum[n + r] += (v * scale[r]).abs();
            }
        }
        let knorm = inf_norm(&rowsum);
        Ok(SaddleFactor { problem: self.clone(), scale, iperm, ldl, knorm })
    }
}

/// A factored [`SaddlePoint`]; reusable for many right-hand sides.
#[derive(Debug, Clone)]
pub struct SaddleFactor {
    problem: SaddlePoint,
    scale: Vec<f64>,
    iperm: Vec<usize>,
    ldl: Ldl,
    knorm: f64,
}

impl SaddleFactor {
    pub fn regularized_pivots(&self) -> usize {
        self.ldl.regularized
    }

    fn apply_scaled(&self, x: &[f64]) -> Vec<f64> {
        let n = self.problem.a.n;
        let mut out = self.problem.a.mul_vec(&x[..n]);
        out.resize(x.len(), 0.0);
        for (r, row) in self.problem.rows.iter().enumerate() {
            let s = self.scale[r];
            let lam = x[n + r];
            out[n + r] = s * row.dot(&x[..n]);
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                out[i] += s * v * lam;
            }
        }
        out
    }

    fn ldl_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; rhs.len()];
        for (g, &v) in rhs.iter().enumerate() {
            y[self.iperm[g]] = v;
        }
        self.ldl.solve_in_place(&mut y);
        let mut out = vec![0.0; rhs.len()];
        for (g, o) in out.iter_mut().enumerate() {
            *o = y[self.iperm[g]];
        }
        out
    }

    /// Solves `A x + Cᵀλ = f`, `C x = g`.
    pub fn solve(&self, f: &[f64], g: &[f64]) -> Result<SaddleSolution> {
        let n = self.problem.a.n;
        let m = self.problem.rows.len();
        if f.len() != n || g.len() != m {
            return Err(Error::InvalidArgument("right-hand side has wrong length".into()));
        }
        let mut b = f.to_vec();
        b.extend(g.iter().zip(&self.scale).map(|(v, s)| v * s));
        let bnorm = inf_norm(&b);
        let mut x = self.ldl_solve(&b);
        let mut residual = f64::INFINITY;
        let mut steps = 0;
        if bnorm == 0.0 {
            residual = 0.0;
        } else {
            let backward = |x: &[f64], r: &[f64]| inf_norm(r) / (self.knorm * inf_norm(x) + bnorm);
            loop {
                let ax = self.apply_scaled(&x);
                let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
                let rel = backward(&x, &r);
                if !(rel < residual) {
                    break;
                }
                residual = rel;
                if rel < 1e-15 || steps >= 20 {
                    break;
                }
                let dx = self.ldl_solve(&r);
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
                let at = self.apply_scaled(&trial);
                let rtv: Vec<f64> = b.iter().zip(&at).map(|(bi, ai)| bi - ai).collect();
                let rt = backward(&trial, &rtv);
                if rt < rel {
                    x = trial;
                    steps += 1;
                } else {
                    break;
                }
            }
        }
        if !residual.is_finite() {
            return Err(Error::Solver("non-finite solution".into()));
        }
        let multipliers = x[n..].iter().zip(&self.scale).map(|(l, s)| l * s).collect();
        x.truncate(n);
        Ok(SaddleSolution {
            x,
            multipliers,
            report: SolveReport {
                residual,
                refinement_steps: steps,
                regularized_pivots: self.ldl.regularized,
            },
        })
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Up-looking LDLᵀ of a quasi-definite matrix given by its upper triangle.
#[derive(Debug, Clone)]
struct Ldl {
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    dinv: Vec<f64>,
    regularized: usize,
}

impl Ldl {
    fn factor(a: &UpperCsc, signs: &[i8], delta: f64) -> Result<Ldl> {
        let n = a.n;
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in a.colptr[j]..a.colptr[j + 1] {
                let mut i = a.rowind[p];
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let nnz = lp[n];
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0; nnz];
        let mut d = vec![0.0; n];
        let mut dinv = vec![0.0; n];
        let mut next_space: Vec<usize> = lp[..n].to_vec();
        let mut used = vec![false; n];
        let mut yvals = vec![0.0; n];
        let mut yidx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let dyn_eps = 1e-3 * delta;
        let mut regularized = 0;

        for k in 0..n {
            let mut nnzy = 0;
            for p in a.colptr[k]..a.colptr[k + 1] {
                let b = a.rowind[p];
                if b == k {
                    d[k] = a.values[p];
                    continue;
                }
                yvals[b] = a.values[p];
                if !used[b] {
                    used[b] = true;
                    elim[0] = b;
                    let mut ne = 1;
                    let mut next = etree[b];
                    while next != NONE && next < k {
                        if used[next] {
                            break;
                        }
                        used[next] = true;
                        elim[ne] = next;
                        ne += 1;
                        next = etree[next];
                    }
                    while ne > 0 {
                        ne -= 1;
                        yidx[nnzy] = elim[ne];
                        nnzy += 1;
                    }
                }
            }
            for t in (0..nnzy).rev() {
                let c = yidx[t];
                let end = next_space[c];
                let yc = yvals[c];
                for q in lp[c]..end {
                    yvals[li[q]] -= lx[q] * yc;
                }
                li[end] = k;
                lx[end] = yc * dinv[c];
                d[k] -= yc * lx[end];
                next_space[c] += 1;
                yvals[c] = 0.0;
                used[c] = false;
            }
            if !d[k].is_finite() {
                return Err(Error::Solver(format!("non-finite pivot at {k}")));
            }
            if (signs[k] as f64) * d[k] <= dyn_eps {
                d[k] = signs[k] as f64 * delta;
                regularized += 1;
            }
            dinv[k] = 1.0 / d[k];
        }
        Ok(Ldl { lp, li, lx, dinv, regularized })
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dinv.len();
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for q in self.lp[i]..self.lp[i + 1] {
                    x[self.li[q]] -= self.lx[q] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for q in self.lp[i]..self.lp[i + 1] {
                s -= self.lx[q] * x[self.li[q]];
            }
            x[i] = s;
        }
    }
}

/// Geometric nested-dissection order of mesh nodes.
///
/// Splits recursively at the median of the longer bounding-box axis; the
/// separator is the set of nodes on the upper side adjacent to the lower side
/// and is numbered after both halves.
pub fn nested_dissection(coords: &[[f64; 2]], adjacency: &[Vec<usize>], leaf: usize) -> Vec<usize> {
    let n = coords.len();
    let mut group = vec![0usize; n];
    let mut next_group = 1;
    let mut out = Vec::with_capacity(n);
    let mut stack = vec![Task::Split((0..n).collect())];
    // Explicit stack: Split pushes Emit(separator), right, left so halves are
    // numbered before their separator.
    enum Task {
        Split(Vec<usize>),
        Emit(Vec<usize>),
    }
    while let Some(task) = stack.pop() {
        let mut nodes = match task {
            Task::Emit(sep) => {
                out.extend(sep);
                continue;
            }
            Task::Split(nodes) => nodes,
        };
        if nodes.len() <= leaf.max(1) {
            out.extend(nodes);
            continue;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for &v in &nodes {
            for a in 0..2 {
                lo[a] = lo[a].min(coords[v][a]);
                hi[a] = hi[a].max(coords[v][a]);
            }
        }
        let axis = if hi[0] - lo[0] >= hi[1] - lo[1] { 0 } else { 1 };
        nodes.sort_by(|&a, &b| {
            coords[a][axis]
                .total_cmp(&coords[b][axis])
                .then(coords[a][1 - axis].total_cmp(&coords[b][1 - axis]))
                .then(a.cmp(&b))
        });
        let mid = nodes.len() / 2;
        let right = nodes.split_off(mid);
        let left = nodes;
        let gl = next_group;
        next_group += 1;
        for &v in &left {
            group[v] = gl;
        }
        let (sep, rest): (Vec<usize>, Vec<usize>) =
            right.into_iter().partition(|&v| adjacency[v].iter().any(|&w| group[w] == gl));
        stack.push(Task::Emit(sep));
        stack.push(Task::Split(rest));
        stack.push(Task::Split(left));
    }
    out
}
