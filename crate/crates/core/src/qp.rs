//! Dense convex QP solver.
//!
//! Solves
//!
//! ```text
//!     minimize    ½ Uᵀ H U + mᵀ U
//!     subject to  c_min ≤ C U ≤ c_max
//! ```
//!
//! for positive definite `H` with the Goldfarb–Idnani dual active-set method.
//! Rows whose two bounds coincide are equalities; a row that touches a single
//! variable with coinciding bounds pins that variable and is eliminated
//! before the active-set iterations start. Bounds with magnitude at or above
//! [`INFINITE_BOUND`] are treated as absent.
//!
//! A [`QpSolver`] remembers the active set of its previous solve and, while
//! choosing which violated constraint to add next, prefers constraints that
//! were active last time.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Bounds at or beyond this magnitude are infinite.
pub const INFINITE_BOUND: f64 = 1e18;

/// Value used by problem builders for an absent bound.
pub const NO_BOUND: f64 = 1e20;

pub fn is_finite_bound(b: f64) -> bool {
    b.abs() < INFINITE_BOUND
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub m: DVector<f64>,
    pub c: DMatrix<f64>,
    pub c_min: DVector<f64>,
    pub c_max: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        h: DMatrix<f64>,
        m: DVector<f64>,
        c: DMatrix<f64>,
        c_min: DVector<f64>,
        c_max: DVector<f64>,
    ) -> Result<Self> {
        let p = Self { h, m, c, c_min, c_max };
        p.check_dimensions()?;
        Ok(p)
    }

    pub fn unconstrained(h: DMatrix<f64>, m: DVector<f64>) -> Result<Self> {
        let n = m.len();
        Self::new(h, m, DMatrix::zeros(0, n), DVector::zeros(0), DVector::zeros(0))
    }

    pub fn n(&self) -> usize {
        self.m.len()
    }

    pub fn k(&self) -> usize {
        self.c.nrows()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + self.m.dot(u)
    }

    fn check_dimensions(&self) -> Result<()> {
        let n = self.m.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(Error::DimensionMismatch("H must be n×n"));
        }
        if self.c.ncols() != n && self.c.nrows() > 0 {
            return Err(Error::DimensionMismatch("C must have n columns"));
        }
        let k = self.c.nrows();
        if self.c_min.len() != k || self.c_max.len() != k {
            return Err(Error::DimensionMismatch("bounds must have one entry per row of C"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub objective: f64,
    /// Multipliers of the `c_min` and `c_max` sides; both non-negative.
    pub lambda_lower: DVector<f64>,
    pub lambda_upper: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Wall-clock seconds; zero without the `std` feature.
    pub solve_time: f64,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct QpSettings {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iter: 200 }
    }
}

/// Max-norm KKT residuals of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

pub fn kkt_residual(problem: &QpProblem, solution: &QpSolution) -> KktResidual {
    let u = &solution.u;
    let lambda = &solution.lambda_upper - &solution.lambda_lower;
    let mut grad = &problem.h * u + &problem.m;
    if problem.k() > 0 {
        grad += problem.c.transpose() * &lambda;
    }
    let stationarity = grad.amax();

    let cu = &problem.c * u;
    let mut feasibility: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for r in 0..problem.k() {
        let (lo, hi) = (problem.c_min[r], problem.c_max[r]);
        if is_finite_bound(lo) {
            feasibility = feasibility.max(lo - cu[r]);
            complementarity = complementarity.max(solution.lambda_lower[r] * (cu[r] - lo).abs());
        }
        if is_finite_bound(hi) {
            feasibility = feasibility.max(cu[r] - hi);
            complementarity = complementarity.max(solution.lambda_upper[r] * (hi - cu[r]).abs());
        }
    }
    KktResidual { stationarity, feasibility, complementarity }
}

/// Cold-start solve.
pub fn solve_qp(problem: &QpProblem, tolerance: f64, max_iter: usize) -> Result<QpSolution> {
    QpSolver::new(QpSettings { tolerance, max_iter }).solve(problem)
}

/// A constraint side as seen by the caller: row of `C` and which bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct RowSide {
    row: usize,
    upper: bool,
}

/// Solver with warm-start memory. Single owner; cheap to clone.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
    warm: Vec<RowSide>,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings, warm: Vec::new() }
    }

    pub fn reset_warm_start(&mut self) {
        self.warm.clear();
    }

    pub fn solve(&mut self, problem: &QpProblem) -> Result<QpSolution> {
        problem.check_dimensions()?;
        #[cfg(feature = "std")]
        let start = std::time::Instant::now();
        let solution = self.solve_inner(problem)?;
        #[cfg(feature = "std")]
        let solution = QpSolution { solve_time: start.elapsed().as_secs_f64(), ..solution };
        Ok(solution)
    }

    fn solve_inner(&mut self, problem: &QpProblem) -> Result<QpSolution> {
        let n = problem.n();
        let k = problem.k();
        let tol = self.settings.tolerance;
        let infeasible = |u: DVector<f64>| QpSolution {
            objective: problem.objective(&u),
            u,
            lambda_lower: DVector::zeros(k),
            lambda_upper: DVector::zeros(k),
            status: QpStatus::Infeasible,
            iterations: 0,
            solve_time: 0.0,
        };

        for r in 0..k {
            let (lo, hi) = (problem.c_min[r], problem.c_max[r]);
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Ok(infeasible(DVector::zeros(n)));
            }
        }
        // `v * 0` is zero for finite `v` and NaN otherwise.
        let finite = |m: &[f64]| m.iter().fold(0.0, |acc, v| acc + v * 0.0) == 0.0;
        if !(finite(problem.h.as_slice()) && finite(problem.m.as_slice()) && finite(problem.c.as_slice())) {
            return Err(Error::NonFinite("QP data"));
        }

        let Some(reduced) = Reduced::build(problem, tol) else {
            return Ok(infeasible(DVector::zeros(n)));
        };

        let warm: Vec<usize> = self
            .warm
            .iter()
            .filter_map(|rs| reduced.cons.iter().position(|c| c.origin == *rs && !c.equality))
            .collect();

        let (inner, elim) = eliminate_unconstrained(&reduced)?;
        let gi = goldfarb_idnani(inner.as_ref().unwrap_or(&reduced), &warm, tol, self.settings.max_iter)?;
        let x = match &elim {
            Some(e) => e.recover(&gi.x, reduced.nf),
            None => gi.x.clone(),
        };

        let mut u = DVector::zeros(n);
        for &(j, v, _) in &reduced.fixed {
            u[j] = v;
        }
        for (i, &j) in reduced.free.iter().enumerate() {
            u[j] = x[i];
        }

        let mut lambda_lower = DVector::zeros(k);
        let mut lambda_upper = DVector::zeros(k);
        for (&ci, &mult) in gi.active.iter().zip(&gi.multipliers) {
            let origin = reduced.cons[ci].origin;
            // Equalities may carry either sign; they were entered as lower
            // sides with `n = C_r`.
            let signed = if origin.upper { mult } else { -mult };
            if signed >= 0.0 {
                lambda_upper[origin.row] += signed;
            } else {
                lambda_lower[origin.row] -= signed;
            }
        }
        // Multipliers of the eliminated pinning rows from stationarity.
        if !reduced.fixed.is_empty() {
            let lambda = &lambda_upper - &lambda_lower;
            let grad = &problem.h * &u + &problem.m + problem.c.transpose() * &lambda;
            for &(j, _, row) in &reduced.fixed {
                let l = -grad[j] / problem.c[(row, j)];
                if l >= 0.0 {
                    lambda_upper[row] = l;
                } else {
                    lambda_lower[row] = -l;
                }
            }
        }

        if gi.status == QpStatus::Optimal {
            self.warm = gi
                .active
                .iter()
                .filter(|&&ci| !reduced.cons[ci].equality)
                .map(|&ci| reduced.cons[ci].origin)
                .collect();
        }

        Ok(QpSolution {
            objective: problem.objective(&u),
            u,
            lambda_lower,
            lambda_upper,
            status: gi.status,
            iterations: gi.iterations,
            solve_time: 0.0,
        })
    }
}

/// One inequality `normal·x ≥ rhs` (or equality) in the reduced variables.
#[derive(Debug, Clone)]
struct Constraint {
    /// Range of the nonzero entries in `Reduced::entries`.
    start: usize,
    end: usize,
    rhs: f64,
    equality: bool,
    origin: RowSide,
}

/// Problem after eliminating pinned variables. Dense column-major storage.
struct Reduced {
    nf: usize,
    free: Vec<usize>,
    /// (variable, value, pinning row)
    fixed: Vec<(usize, f64, usize)>,
    g: Vec<f64>,
    a: Vec<f64>,
    /// Sparse constraint normals as `(variable, coefficient)`.
    entries: Vec<(usize, f64)>,
    cons: Vec<Constraint>,
}

impl Reduced {
    fn normal(&self, c: &Constraint) -> &[(usize, f64)] {
        &self.entries[c.start..c.end]
    }

    /// `None` when the constraints are trivially inconsistent.
    fn build(p: &QpProblem, tol: f64) -> Option<Self> {
        let n = p.n();
        let k = p.k();
        // Row-major copy of C for contiguous row access.
        let ct = p.c.transpose();
        let c_row = |r: usize| &ct.as_slice()[r * n..(r + 1) * n];
        let mut pinned: Vec<Option<(f64, usize)>> = vec![None; n];
        let mut pinning_row = vec![false; k];
        for r in 0..k {
            let (lo, hi) = (p.c_min[r], p.c_max[r]);
            if lo != hi || !is_finite_bound(lo) {
                continue;
            }
            let row = c_row(r);
            let mut nonzero = row.iter().enumerate().filter(|(_, v)| **v != 0.0);
            let (Some((j, &cj)), None) = (nonzero.next(), nonzero.next()) else {
                continue;
            };
            let value = lo / cj;
            match pinned[j] {
                None => {
                    pinned[j] = Some((value, r));
                    pinning_row[r] = true;
                }
                Some((v, _)) if (v - value).abs() <= tol => pinning_row[r] = true,
                Some(_) => return None,
            }
        }

        let free: Vec<usize> = (0..n).filter(|&j| pinned[j].is_none()).collect();
        let fixed: Vec<(usize, f64, usize)> = (0..n)
            .filter_map(|j| pinned[j].map(|(v, r)| (j, v, r)))
            .collect();
        let nf = free.len();

        let mut g = vec![0.0; nf * nf];
        for (cj, &j) in free.iter().enumerate() {
            let h_col = &p.h.as_slice()[j * n..(j + 1) * n];
            for (ci, &i) in free.iter().enumerate() {
                g[ci + cj * nf] = h_col[i];
            }
        }
        let mut a: Vec<f64> = free.iter().map(|&i| p.m[i]).collect();
        for (ci, &i) in free.iter().enumerate() {
            for &(j, v, _) in &fixed {
                a[ci] += p.h[(i, j)] * v;
            }
        }

        let mut entries = Vec::new();
        let mut cons = Vec::new();
        let mut row = vec![0.0; nf];
        for r in 0..k {
            if pinning_row[r] {
                continue;
            }
            let full = c_row(r);
            let shift: f64 = fixed.iter().map(|&(j, v, _)| full[j] * v).sum();
            let mut any = false;
            for (ci, &j) in free.iter().enumerate() {
                row[ci] = full[j];
                any |= row[ci] != 0.0;
            }
            let (lo, hi) = (p.c_min[r], p.c_max[r]);
            if !any {
                if (is_finite_bound(lo) && shift < lo - tol) || (is_finite_bound(hi) && shift > hi + tol) {
                    return None;
                }
                continue;
            }
            let mut push = |sign: f64, rhs: f64, equality: bool, upper: bool| {
                let start = entries.len();
                entries.extend(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, sign * v)));
                cons.push(Constraint { start, end: entries.len(), rhs, equality, origin: RowSide { row: r, upper } });
            };
            if lo == hi && is_finite_bound(lo) {
                push(1.0, lo - shift, true, false);
                continue;
            }
            if is_finite_bound(lo) {
                push(1.0, lo - shift, false, false);
            }
            if is_finite_bound(hi) {
                push(-1.0, -(hi - shift), false, true);
            }
        }
        Some(Self { nf, free, fixed, g, a, entries, cons })
    }
}

/// Closed-form minimization over the free variables that appear in no
/// constraint row. With `U` those variables and `C` the rest,
/// `x_U = −G_UU⁻¹ (G_UC x_C + a_U)`, leaving the Schur complement
/// `G_CC − G_CU G_UU⁻¹ G_UC` for the active-set iterations.
///
/// With the Hessian permuted to `[U, C]` order, the leading `u` columns of
/// its Cholesky factor are `[L_UU; L_CU]` and the trailing block left after
/// eliminating them is exactly the Schur complement.
struct Elimination {
    kept: Vec<usize>,
    dropped: Vec<usize>,
    /// Permuted matrix; its first `u` columns hold `[L_UU; L_CU]`.
    factor: Vec<f64>,
    /// `L_UU⁻¹ a_U`.
    w_a: Vec<f64>,
}

impl Elimination {
    fn recover(&self, x_kept: &[f64], nf: usize) -> Vec<f64> {
        let (n, u) = (nf, self.dropped.len());
        let l = |i: usize, k: usize| self.factor[i + k * n];
        // Solve L_UUᵀ y = L_CUᵀ x_C + L_UU⁻¹ a_U; then x_U = −y.
        let mut y: Vec<f64> = (0..u)
            .map(|k| self.w_a[k] + dot(&self.factor[k * n + u..(k + 1) * n], x_kept))
            .collect();
        for k in (0..u).rev() {
            let mut s = y[k];
            for i in k + 1..u {
                s -= l(i, k) * y[i];
            }
            y[k] = s / l(k, k);
        }
        let mut x = vec![0.0; nf];
        for (i, &j) in self.kept.iter().enumerate() {
            x[j] = x_kept[i];
        }
        for (i, &j) in self.dropped.iter().enumerate() {
            x[j] = -y[i];
        }
        x
    }
}

fn eliminate_unconstrained(p: &Reduced) -> Result<(Option<Reduced>, Option<Elimination>)> {
    let n = p.nf;
    let mut used = vec![false; n];
    for &(j, _) in &p.entries {
        used[j] = true;
    }
    let kept: Vec<usize> = (0..n).filter(|&j| used[j]).collect();
    let dropped: Vec<usize> = (0..n).filter(|&j| !used[j]).collect();
    if dropped.is_empty() {
        return Ok((None, None));
    }
    let u = dropped.len();
    let order: Vec<usize> = dropped.iter().chain(&kept).copied().collect();
    let mut m = vec![0.0; n * n];
    for (cj, &j) in order.iter().enumerate() {
        for (ci, &i) in order.iter().enumerate() {
            m[ci + cj * n] = p.g[i + j * n];
        }
    }
    for j in 0..n {
        let (done, rest) = m.split_at_mut(j * n);
        let col = &mut rest[..n];
        for k in 0..j.min(u) {
            let f = done[j + k * n];
            if f != 0.0 {
                for (c, v) in col[j..].iter_mut().zip(&done[k * n + j..(k + 1) * n]) {
                    *c -= f * v;
                }
            }
        }
        if j < u {
            let diag = col[j];
            if !(diag > 0.0) {
                return Err(Error::Singular("QP Hessian is not positive definite"));
            }
            let diag = libm::sqrt(diag);
            col[j] = diag;
            for v in &mut col[j + 1..] {
                *v /= diag;
            }
        }
    }

    let mut w_a: Vec<f64> = dropped.iter().map(|&i| p.a[i]).collect();
    for k in 0..u {
        w_a[k] /= m[k + k * n];
        let f = w_a[k];
        for i in k + 1..u {
            w_a[i] -= f * m[i + k * n];
        }
    }
    let mut a_new: Vec<f64> = kept.iter().map(|&i| p.a[i]).collect();
    for k in 0..u {
        let f = w_a[k];
        for (a, v) in a_new.iter_mut().zip(&m[k * n + u..(k + 1) * n]) {
            *a -= f * v;
        }
    }

    let nk = kept.len();
    let mut g_new = vec![0.0; nk * nk];
    for j in 0..nk {
        for i in j..nk {
            let v = m[(u + i) + (u + j) * n];
            g_new[i + j * nk] = v;
            g_new[j + i * nk] = v;
        }
    }
    let mut position = vec![usize::MAX; n];
    for (ci, &j) in kept.iter().enumerate() {
        position[j] = ci;
    }
    let entries = p.entries.iter().map(|&(j, v)| (position[j], v)).collect();
    let inner = Reduced {
        nf: nk,
        free: Vec::new(),
        fixed: Vec::new(),
        g: g_new,
        a: a_new,
        entries,
        cons: p.cons.clone(),
    };
    Ok((Some(inner), Some(Elimination { kept, dropped, factor: m, w_a })))
}

struct GiResult {
    x: Vec<f64>,
    active: Vec<usize>,
    multipliers: Vec<f64>,
    status: QpStatus,
    iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sparse_dot(a: &[(usize, f64)], b: &[f64]) -> f64 {
    a.iter().map(|&(i, v)| v * b[i]).sum()
}

/// Goldfarb–Idnani dual active-set iterations on the reduced problem.
fn goldfarb_idnani(p: &Reduced, warm: &[usize], tol: f64, max_iter: usize) -> Result<GiResult> {
    let n = p.nf;
    let nc = p.cons.len();

    // Cholesky G = L Lᵀ, in place (lower triangle, column-major), by
    // column updates so the inner loops run over contiguous memory.
    let mut l = p.g.clone();
    for j in 0..n {
        let (done, rest) = l.split_at_mut(j * n);
        let col = &mut rest[..n];
        for k in 0..j {
            let f = done[j + k * n];
            if f != 0.0 {
                let prev = &done[k * n..(k + 1) * n];
                for (c, v) in col[j..].iter_mut().zip(&prev[j..]) {
                    *c -= f * v;
                }
            }
        }
        let diag = col[j];
        if !(diag > 0.0) {
            return Err(Error::Singular("QP Hessian is not positive definite"));
        }
        let diag = libm::sqrt(diag);
        col[j] = diag;
        for v in &mut col[j + 1..] {
            *v /= diag;
        }
    }

    // J = L⁻ᵀ: column c of J is row c of L⁻¹. Solve L y = e_c by forward
    // substitution along the columns of L.
    let mut j_mat = vec![0.0; n * n];
    {
        let mut y = vec![0.0; n];
        for c in 0..n {
            y[c..].iter_mut().for_each(|v| *v = 0.0);
            y[c] = 1.0;
            for k in c..n {
                let lk = &l[k * n..(k + 1) * n];
                let f = y[k] / lk[k];
                y[k] = f;
                if f != 0.0 {
                    for (yi, v) in y[k + 1..].iter_mut().zip(&lk[k + 1..]) {
                        *yi -= f * v;
                    }
                }
            }
            for i in c..n {
                j_mat[c + i * n] = y[i];
            }
        }
    }

    // Unconstrained minimizer x = -J Jᵀ a.
    let mut x = vec![0.0; n];
    {
        let mut jt_a = vec![0.0; n];
        for c in 0..n {
            jt_a[c] = dot(&j_mat[c * n..(c + 1) * n], &p.a);
        }
        for c in 0..n {
            let col = &j_mat[c * n..(c + 1) * n];
            for i in 0..n {
                x[i] -= col[i] * jt_a[c];
            }
        }
    }

    let mut r_mat = vec![0.0; n * n];
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut u: Vec<f64> = Vec::with_capacity(n);
    let mut is_active = vec![false; nc];
    let mut d = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut iterations = 0;

    let finish = |x: Vec<f64>, active: Vec<usize>, u: Vec<f64>, status, iterations| GiResult {
        x,
        active,
        multipliers: u,
        status,
        iterations,
    };

    // Equalities first, then inequalities by violation.
    let equalities: Vec<usize> = (0..nc).filter(|&i| p.cons[i].equality).collect();
    let mut eq_cursor = 0;

    loop {
        let chosen = if eq_cursor < equalities.len() {
            let c = equalities[eq_cursor];
            eq_cursor += 1;
            Some(c)
        } else {
            select_violated(p, &x, &is_active, warm, tol)
        };
        let Some(pc) = chosen else {
            return Ok(finish(x, active, u, QpStatus::Optimal, iterations));
        };
        let con = &p.cons[pc];
        let normal = p.normal(con);
        let mut u_plus = 0.0;

        loop {
            if iterations >= max_iter {
                return Ok(finish(x, active, u, QpStatus::MaxIter, iterations));
            }
            iterations += 1;
            let q = active.len();
            for c in 0..n {
                d[c] = sparse_dot(normal, &j_mat[c * n..(c + 1) * n]);
            }
            z.iter_mut().for_each(|v| *v = 0.0);
            for c in q..n {
                let dc = d[c];
                if dc != 0.0 {
                    for (zi, v) in z.iter_mut().zip(&j_mat[c * n..(c + 1) * n]) {
                        *zi += v * dc;
                    }
                }
            }
            // r = R⁻¹ d[..q]
            for i in (0..q).rev() {
                let mut s = d[i];
                for k in i + 1..q {
                    s -= r_mat[i + k * n] * r[k];
                }
                r[i] = s / r_mat[i + i * n];
            }

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for i in 0..q {
                if !p.cons[active[i]].equality && r[i] > 0.0 {
                    let ratio = u[i] / r[i];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(i);
                    }
                }
            }

            let dd: f64 = d.iter().map(|v| v * v).sum();
            let zn = sparse_dot(normal, &z);
            let slack = sparse_dot(normal, &x) - con.rhs;
            let t2 = if zn > 1e-14 * dd { -slack / zn } else { f64::INFINITY };

            if con.equality {
                if !t2.is_finite() {
                    if slack.abs() <= tol {
                        break;
                    }
                    return Ok(finish(x, active, u, QpStatus::Infeasible, iterations));
                }
                // Equalities are taken with a full step of either sign and
                // are never dropped.
                for i in 0..n {
                    x[i] += t2 * z[i];
                }
                for i in 0..q {
                    u[i] -= t2 * r[i];
                }
                u_plus += t2;
                add_constraint(n, &mut j_mat, &mut r_mat, &mut d, q);
                active.push(pc);
                u.push(u_plus);
                is_active[pc] = true;
                break;
            }

            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(finish(x, active, u, QpStatus::Infeasible, iterations));
            }
            if t2.is_finite() {
                for i in 0..n {
                    x[i] += t * z[i];
                }
            }
            for i in 0..q {
                u[i] -= t * r[i];
            }
            u_plus += t;
            if t2.is_finite() && t2 <= t1 {
                add_constraint(n, &mut j_mat, &mut r_mat, &mut d, q);
                active.push(pc);
                u.push(u_plus);
                is_active[pc] = true;
                break;
            }
            let l = drop_at.expect("finite partial step has a blocking multiplier");
            is_active[active[l]] = false;
            drop_constraint(n, &mut j_mat, &mut r_mat, q, l);
            active.remove(l);
            u.remove(l);
        }
    }
}

fn select_violated(p: &Reduced, x: &[f64], is_active: &[bool], warm: &[usize], tol: f64) -> Option<usize> {
    let slack = |i: usize| sparse_dot(p.normal(&p.cons[i]), x) - p.cons[i].rhs;
    let mut best = None;
    let mut worst = -tol;
    for &i in warm {
        if is_active[i] {
            continue;
        }
        let s = slack(i);
        if s < worst {
            worst = s;
            best = Some(i);
        }
    }
    if best.is_some() {
        return best;
    }
    for i in 0..p.cons.len() {
        if is_active[i] || p.cons[i].equality {
            continue;
        }
        let s = slack(i);
        if s < worst {
            worst = s;
            best = Some(i);
        }
    }
    best
}

/// Reflect the trailing columns of `J` so that `d = Jᵀ n` keeps only its
/// first `q + 1` entries, with `d[q] > 0`, and append it as column `q` of `R`.
fn add_constraint(n: usize, j_mat: &mut [f64], r_mat: &mut [f64], d: &mut [f64], q: usize) {
    let tail_sq: f64 = d[q + 1..n].iter().map(|v| v * v).sum();
    if tail_sq > 0.0 {
        let norm = libm::sqrt(d[q] * d[q] + tail_sq);
        let alpha = if d[q] >= 0.0 { -norm } else { norm };
        let mut v = d[q..n].to_vec();
        v[0] -= alpha;
        let beta = 2.0 / (v[0] * v[0] + tail_sq);
        let mut w = vec![0.0; n];
        for (c, &vc) in v.iter().enumerate() {
            let col = &j_mat[(q + c) * n..(q + c + 1) * n];
            for (wi, x) in w.iter_mut().zip(col) {
                *wi += vc * x;
            }
        }
        for (c, &vc) in v.iter().enumerate() {
            let f = beta * vc;
            let col = &mut j_mat[(q + c) * n..(q + c + 1) * n];
            for (x, wi) in col.iter_mut().zip(&w) {
                *x -= f * wi;
            }
        }
        d[q] = alpha;
        d[q + 1..n].iter_mut().for_each(|v| *v = 0.0);
    }
    if d[q] < 0.0 {
        for x in &mut j_mat[q * n..(q + 1) * n] {
            *x = -*x;
        }
        d[q] = -d[q];
    }
    for i in 0..=q {
        r_mat[i + q * n] = d[i];
    }
}

/// Remove column `l` of the `q`-column `R`, restoring triangularity.
fn drop_constraint(n: usize, j_mat: &mut [f64], r_mat: &mut [f64], q: usize, l: usize) {
    for k in l..q - 1 {
        for i in 0..=k + 1 {
            r_mat[i + k * n] = r_mat[i + (k + 1) * n];
        }
    }
    for i in 0..n {
        r_mat[i + (q - 1) * n] = 0.0;
    }
    for jj in l..q - 1 {
        let (a, b) = (r_mat[jj + jj * n], r_mat[jj + 1 + jj * n]);
        if b == 0.0 {
            continue;
        }
        let h = libm::hypot(a, b);
        let (c, s) = (a / h, b / h);
        for k in jj..q - 1 {
            let (top, bot) = (r_mat[jj + k * n], r_mat[jj + 1 + k * n]);
            r_mat[jj + k * n] = c * top + s * bot;
            r_mat[jj + 1 + k * n] = -s * top + c * bot;
        }
        r_mat[jj + 1 + jj * n] = 0.0;
        rotate_columns(n, j_mat, jj, c, s);
    }
}

/// Givens rotation of columns `j` and `j + 1`.
fn rotate_columns(n: usize, m: &mut [f64], j: usize, c: f64, s: f64) {
    let (left, right) = m.split_at_mut((j + 1) * n);
    let a = &mut left[j * n..];
    let b = &mut right[..n];
    for (ai, bi) in a.iter_mut().zip(b.iter_mut()) {
        let (x, y) = (*ai, *bi);
        *ai = c * x + s * y;
        *bi = -s * x + c * y;
    }
}

const DUMP_MAGIC: &[u8; 8] = b"WBQPDUMP";

/// Serialize a problem into the little-endian debug dump layout: a 16-byte
/// header (8-byte magic, `n: u32`, `k: u32`) followed by `H` (row-major),
/// `m`, `C` (row-major), `c_min` and `c_max` as `f64`.
pub fn encode_dump(p: &QpProblem) -> Vec<u8> {
    let (n, k) = (p.n(), p.k());
    let mut out = Vec::with_capacity(16 + 8 * (n * n + n + k * n + 2 * k));
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    for i in 0..n {
        for j in 0..n {
            put(p.h[(i, j)]);
        }
    }
    p.m.iter().for_each(|&v| put(v));
    for i in 0..k {
        for j in 0..n {
            put(p.c[(i, j)]);
        }
    }
    p.c_min.iter().for_each(|&v| put(v));
    p.c_max.iter().for_each(|&v| put(v));
    out
}

pub fn decode_dump(bytes: &[u8]) -> Result<QpProblem> {
    if bytes.len() < 16 || &bytes[..8] != DUMP_MAGIC {
        return Err(Error::InvalidParameter("not a QP dump"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let count = n * n + n + k * n + 2 * k;
    if bytes.len() != 16 + 8 * count {
        return Err(Error::DimensionMismatch("QP dump length does not match header"));
    }
    let mut vals = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |len: usize| -> Vec<f64> { vals.by_ref().take(len).collect() };
    let h = DMatrix::from_row_slice(n, n, &take(n * n));
    let m = DVector::from_vec(take(n));
    let c = DMatrix::from_row_slice(k, n, &take(k * n));
    let c_min = DVector::from_vec(take(k));
    let c_max = DVector::from_vec(take(k));
    QpProblem::new(h, m, c, c_min, c_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_var(lo: f64, hi: f64) -> QpProblem {
        QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, lo),
            DVector::from_element(1, hi),
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_minimizer() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![-2.0, -2.0])).unwrap();
        let s = solve_qp(&p, 1e-8, 200).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.u[0] - 1.0).abs() < 1e-14 && (s.u[1] - 1.0).abs() < 1e-14);
        assert!(kkt_residual(&p, &s).max() <= 1e-10);
    }

    #[test]
    fn single_active_lower_bound() {
        let p = one_var(1.0, NO_BOUND);
        let s = solve_qp(&p, 1e-8, 200).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.u[0] - 1.0).abs() < 1e-14);
        assert!((s.lambda_lower[0] - 2.0).abs() < 1e-12);
        assert_eq!(s.lambda_upper[0], 0.0);
        assert!(kkt_residual(&p, &s).max() <= 1e-10);
    }

    #[test]
    fn pinned_variable_is_eliminated() {
        // min x² + y² - 2y  s.t. x = 3 (single-variable row), x + y ≤ 3.5
        let p = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::from_vec(vec![0.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]),
            DVector::from_vec(vec![3.0, -NO_BOUND]),
            DVector::from_vec(vec![3.0, 3.5]),
        )
        .unwrap();
        let s = solve_qp(&p, 1e-8, 200).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.u[0] - 3.0).abs() < 1e-14);
        assert!((s.u[1] - 0.5).abs() < 1e-12);
        assert!(kkt_residual(&p, &s).max() <= 1e-10);
    }

    #[test]
    fn general_equality() {
        // min x² + y²  s.t. x + y = 1
        let p = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let s = solve_qp(&p, 1e-8, 200).unwrap();
        assert!((s.u[0] - 0.5).abs() < 1e-14 && (s.u[1] - 0.5).abs() < 1e-14);
        assert!(kkt_residual(&p, &s).max() <= 1e-10);
    }

    #[test]
    fn detects_infeasibility() {
        // x ≥ 1 and x ≤ 0 on two rows.
        let p = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::zeros(1),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DVector::from_vec(vec![1.0, -NO_BOUND]),
            DVector::from_vec(vec![NO_BOUND, 0.0]),
        )
        .unwrap();
        assert_eq!(solve_qp(&p, 1e-8, 200).unwrap().status, QpStatus::Infeasible);
        assert_eq!(solve_qp(&one_var(2.0, 1.0), 1e-8, 200).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let p = QpProblem::unconstrained(DMatrix::from_element(1, 1, -1.0), DVector::zeros(1)).unwrap();
        assert!(solve_qp(&p, 1e-8, 200).is_err());
    }

    #[test]
    fn max_iter_reported() {
        let p = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::from_vec(vec![-10.0, -10.0]),
            DMatrix::identity(2, 2),
            DVector::from_element(2, -NO_BOUND),
            DVector::from_element(2, 1.0),
        )
        .unwrap();
        assert_eq!(solve_qp(&p, 1e-8, 1).unwrap().status, QpStatus::MaxIter);
        assert_eq!(solve_qp(&p, 1e-8, 10).unwrap().status, QpStatus::Optimal);
    }

    #[test]
    fn residual_of_perturbed_and_infeasible_points() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![-2.0, -2.0])).unwrap();
        let mut s = solve_qp(&p, 1e-8, 200).unwrap();
        s.u[0] += 0.1;
        // H·δ = 0.2 in the perturbed coordinate.
        let r = kkt_residual(&p, &s);
        assert!(r.stationarity > 0.01);
        assert!((r.stationarity - 0.2).abs() < 1e-12);

        let p = one_var(1.0, NO_BOUND);
        let mut s = solve_qp(&p, 1e-8, 200).unwrap();
        s.u[0] = 0.25;
        assert!((kkt_residual(&p, &s).feasibility - 0.75).abs() < 1e-15);
    }

    #[test]
    fn warm_start_agrees_with_cold() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut warm = QpSolver::default();
        let base = random_problem(&mut rng, 6, 8);
        for _ in 0..20 {
            let mut p = base.clone();
            for v in p.m.iter_mut() {
                *v += rng.random_range(-0.05..0.05);
            }
            let w = warm.solve(&p).unwrap();
            let c = solve_qp(&p, 1e-8, 200).unwrap();
            assert_eq!(w.status, QpStatus::Optimal);
            assert!((&w.u - &c.u).amax() < 1e-9);
        }
    }

    #[test]
    fn dump_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_problem(&mut rng, 5, 7);
        let bytes = encode_dump(&p);
        assert_eq!(&bytes[..8], b"WBQPDUMP");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 7);
        assert_eq!(decode_dump(&bytes).unwrap(), p);
        assert!(decode_dump(&bytes[..bytes.len() - 1]).is_err());
    }

    pub(crate) fn random_problem(rng: &mut ChaCha8Rng, n: usize, k: usize) -> QpProblem {
        let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &f * f.transpose() + DMatrix::identity(n, n) * 0.5;
        let m = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let c = DMatrix::from_fn(k, n, |_, _| rng.random_range(-1.0..1.0));
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let cx = &c * &x0;
        let mut lo = DVector::zeros(k);
        let mut hi = DVector::zeros(k);
        for r in 0..k {
            lo[r] = cx[r] - rng.random_range(0.0..0.5);
            hi[r] = if rng.random_bool(0.5) { cx[r] + rng.random_range(0.0..0.5) } else { NO_BOUND };
        }
        QpProblem::new(h, m, c, lo, hi).unwrap()
    }

    proptest! {
        #[test]
        fn scaling_invariance(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng, 5, 6);
            let mut q = p.clone();
            q.h *= scale;
            q.m *= scale;
            let a = solve_qp(&p, 1e-8, 200).unwrap();
            let b = solve_qp(&q, 1e-8, 200).unwrap();
            prop_assert_eq!(a.status, QpStatus::Optimal);
            prop_assert!((&a.u - &b.u).amax() < 1e-7);
        }

        #[test]
        fn deterministic(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng, 6, 8);
            let a = solve_qp(&p, 1e-8, 200).unwrap();
            let b = solve_qp(&p, 1e-8, 200).unwrap();
            prop_assert_eq!(a.u.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.u.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn no_feasible_sample_beats_optimum(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng, 3, 4);
            let s = solve_qp(&p, 1e-8, 200).unwrap();
            prop_assert_eq!(s.status, QpStatus::Optimal);
            let mut checked = 0;
            while checked < 1000 {
                let u = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
                let cu = &p.c * &u;
                let feasible = (0..p.k()).all(|r| cu[r] >= p.c_min[r] && (!is_finite_bound(p.c_max[r]) || cu[r] <= p.c_max[r]));
                if !feasible { continue; }
                checked += 1;
                prop_assert!(s.objective <= p.objective(&u) + 1e-9);
            }
        }
    }
}
