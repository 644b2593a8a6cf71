//! Dense convex quadratic programming.
//!
//! Solves strictly convex problems of the form
//!
//! ```text
//! minimize   1/2 x' P x + c' x
//! subject to A_eq x  = b_eq
//!            A_in x <= b_in
//! ```
//!
//! with a primal active-set method: equality-constrained subproblems are
//! solved through a dense KKT factorization, violated inequalities enter the
//! working set one at a time (lowest index on ties), and constraints with
//! negative multipliers leave. A feasible starting point, when not supplied
//! by the caller's warm active set, is produced by a phase-I least-violation
//! QP over slack variables.
//!
//! Problems here are tiny (a handful to a few dozen variables), so all
//! factorizations are dense and re-done per iteration.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Constraint-satisfaction tolerance for reported optima.
pub const FEAS_TOL: f64 = 1e-9;
/// KKT residual bound implied by an `Optimal` status.
pub const KKT_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-11;
const DUAL_TOL: f64 = 1e-9;
const INDEP_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

/// A validated strictly convex QP.
#[derive(Clone, Debug)]
pub struct QpProblem {
    p: DMatrix<f64>,
    c: DVector<f64>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
    regularized: bool,
}

impl QpProblem {
    /// Validate and build a problem.
    ///
    /// `p` must be symmetric within `1e-12`; it is symmetrized exactly. If
    /// its smallest eigenvalue is below `1e-9` the cost is regularized by
    /// `1e-8 I` and the problem is flagged.
    pub fn new(
        p: DMatrix<f64>,
        c: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = c.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(QpError::InvalidProblem(format!(
                "P is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            )));
        }
        if a_eq.nrows() != b_eq.len() || (a_eq.nrows() > 0 && a_eq.ncols() != n) {
            return Err(QpError::InvalidProblem("equality dimensions".into()));
        }
        if a_in.nrows() != b_in.len() || (a_in.nrows() > 0 && a_in.ncols() != n) {
            return Err(QpError::InvalidProblem("inequality dimensions".into()));
        }
        let all = p
            .iter()
            .chain(c.iter())
            .chain(a_eq.iter())
            .chain(b_eq.iter())
            .chain(a_in.iter())
            .chain(b_in.iter());
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(QpError::InvalidProblem("non-finite entry".into()));
        }
        let asym = (&p - p.transpose()).amax();
        if asym > 1e-12 {
            return Err(QpError::InvalidProblem(format!(
                "P asymmetric by {asym:.3e}"
            )));
        }
        let mut p = (&p + p.transpose()) * 0.5;
        let mut regularized = false;
        if n > 0 {
            let lambda_min = p
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if lambda_min < 1e-9 {
                for i in 0..n {
                    p[(i, i)] += 1e-8;
                }
                regularized = true;
            }
        }
        Ok(Self {
            p,
            c,
            a_eq,
            b_eq,
            a_in,
            b_in,
            regularized,
        })
    }

    pub fn unconstrained(p: DMatrix<f64>, c: DVector<f64>) -> Result<Self, QpError> {
        let n = c.len();
        Self::new(
            p,
            c,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn num_eq(&self) -> usize {
        self.a_eq.nrows()
    }

    pub fn num_in(&self) -> usize {
        self.a_in.nrows()
    }

    pub fn regularized(&self) -> bool {
        self.regularized
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.p * x)[0] + self.c.dot(x)
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn a_eq(&self) -> &DMatrix<f64> {
        &self.a_eq
    }

    pub fn b_eq(&self) -> &DVector<f64> {
        &self.b_eq
    }

    pub fn a_in(&self) -> &DMatrix<f64> {
        &self.a_in
    }

    pub fn b_in(&self) -> &DVector<f64> {
        &self.b_in
    }

    fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        if self.num_eq() > 0 {
            v = v.max((&self.a_eq * x - &self.b_eq).amax());
        }
        for i in 0..self.num_in() {
            v = v.max(self.a_in.row(i).transpose().dot(x) - self.b_in[i]);
        }
        v
    }
}

/// Solver result. `status == Optimal` implies all constraints hold within
/// [`FEAS_TOL`] and the KKT residual is below [`KKT_TOL`].
#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Inequality indices active at the returned point.
    pub active_set: Vec<usize>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub objective: f64,
    pub dual_eq: DVector<f64>,
    pub dual_in: DVector<f64>,
    /// Objective after each active-set iteration (monotone non-increasing).
    pub objective_trace: Vec<f64>,
}

/// Max of the stationarity, primal feasibility, dual feasibility, and
/// complementarity residuals at `(x, duals)`.
pub fn kkt_residual(
    problem: &QpProblem,
    x: &DVector<f64>,
    dual_eq: &DVector<f64>,
    dual_in: &DVector<f64>,
) -> f64 {
    let mut grad = &problem.p * x + &problem.c;
    if problem.num_eq() > 0 {
        grad += problem.a_eq.transpose() * dual_eq;
    }
    if problem.num_in() > 0 {
        grad += problem.a_in.transpose() * dual_in;
    }
    let stationarity = grad.amax();
    let primal = problem.max_violation(x);
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in 0..problem.num_in() {
        dual = dual.max(-dual_in[i]);
        let slack = problem.b_in[i] - problem.a_in.row(i).transpose().dot(x);
        comp = comp.max((dual_in[i] * slack).abs());
    }
    stationarity.max(primal).max(dual).max(comp)
}

/// Solve the QP, optionally warm-starting from a previous active set.
pub fn solve(problem: &QpProblem, warm_start: Option<&[usize]>) -> QpSolution {
    let n = problem.n();
    if n == 0 {
        return finish(problem, DVector::zeros(0), vec![], QpStatus::Optimal, 0, vec![]);
    }

    // Independent equality rows; inconsistent systems are infeasible outright.
    let eq_rows = independent_rows(&problem.a_eq);
    let a_eq = select_rows(&problem.a_eq, &eq_rows);
    let b_eq = DVector::from_iterator(eq_rows.len(), eq_rows.iter().map(|&i| problem.b_eq[i]));

    // Warm start: re-solve the equality subproblem of the previous active
    // set; usable only if it lands on a feasible point.
    if let Some(warm) = warm_start {
        let mut w: Vec<usize> = warm.iter().copied().filter(|&i| i < problem.num_in()).collect();
        w.sort_unstable();
        w.dedup();
        let w = prune_dependent_working_set(problem, &a_eq, &w);
        if let Some((x, _)) = eqp_solve(problem, &a_eq, &b_eq, &w) {
            if problem.max_violation(&x) <= FEAS_TOL {
                return active_set_loop(problem, &a_eq, &eq_rows, x, w, 0);
            }
        }
    }

    // Cold start from the equality-constrained minimizer.
    let x0 = match eqp_solve(problem, &a_eq, &b_eq, &[]) {
        Some((x, _)) => x,
        None => return finish(problem, DVector::zeros(n), vec![], QpStatus::MaxIter, 0, vec![]),
    };
    if problem.num_eq() > 0 && (&problem.a_eq * &x0 - &problem.b_eq).amax() > FEAS_TOL {
        // Dependent rows disagree: equality system is inconsistent.
        return finish(problem, x0, vec![], QpStatus::Infeasible, 0, vec![]);
    }
    // Phase I leaves an O(eps * distance) violation from its regularization
    // term; repeating it from the new point shrinks that geometrically for
    // feasible problems, while infeasible ones stagnate at a positive level.
    let mut x0 = x0;
    let mut phase1_iters = 0;
    let mut prev_viol = problem.max_violation(&x0);
    for _ in 0..6 {
        if prev_viol <= FEAS_TOL {
            break;
        }
        match phase_one(problem, &a_eq, &b_eq, &x0) {
            Some((x, iters)) => {
                let viol = problem.max_violation(&x);
                phase1_iters += iters;
                if viol > FEAS_TOL && viol >= 0.5 * prev_viol {
                    return finish(problem, x, vec![], QpStatus::Infeasible, phase1_iters, vec![]);
                }
                x0 = x;
                prev_viol = viol;
            }
            None => return finish(problem, x0, vec![], QpStatus::Infeasible, phase1_iters, vec![]),
        }
    }
    if prev_viol > FEAS_TOL {
        return finish(problem, x0, vec![], QpStatus::Infeasible, phase1_iters, vec![]);
    }
    active_set_loop(problem, &a_eq, &eq_rows, x0, vec![], phase1_iters)
}

/// Primal active-set iterations from a feasible point.
fn active_set_loop(
    problem: &QpProblem,
    a_eq: &DMatrix<f64>,
    eq_rows: &[usize],
    mut x: DVector<f64>,
    mut working: Vec<usize>,
    start_iters: usize,
) -> QpSolution {
    let n = problem.n();
    let max_iters = 50 * (n + problem.num_in());
    let mut iterations = start_iters;
    let mut trace = vec![problem.objective(&x)];

    loop {
        if iterations >= max_iters {
            return finish(problem, x, working, QpStatus::MaxIter, iterations, trace);
        }
        iterations += 1;

        let Some((p_dir, duals)) = eqp_direction(problem, a_eq, &working, &x) else {
            return finish(problem, x, working, QpStatus::MaxIter, iterations, trace);
        };

        if p_dir.amax() <= STEP_TOL * x.amax().max(1.0) {
            // Stationary on the working set: check multipliers.
            let m_e = a_eq.nrows();
            let mut worst = None::<(usize, f64)>;
            for k in 0..working.len() {
                let lam = duals[m_e + k];
                if lam < -DUAL_TOL && worst.map_or(true, |(_, w)| lam < w) {
                    worst = Some((k, lam));
                }
            }
            match worst {
                None => {
                    return finish_optimal(
                        problem, x, working, duals, eq_rows, a_eq, iterations, trace,
                    );
                }
                Some((k, _)) => {
                    working.remove(k);
                }
            }
            continue;
        }

        // Ratio test over constraints outside the working set; the first
        // (lowest-index) minimizer blocks.
        let mut alpha = 1.0_f64;
        let mut blocker = None::<usize>;
        for i in 0..problem.num_in() {
            if working.contains(&i) {
                continue;
            }
            let a_row = problem.a_in.row(i).transpose();
            let d = a_row.dot(&p_dir);
            if d > 1e-12 {
                let slack = problem.b_in[i] - a_row.dot(&x);
                let step = (slack / d).max(0.0);
                if step < alpha {
                    alpha = step;
                    blocker = Some(i);
                }
            }
        }
        x += alpha * &p_dir;
        if let Some(i) = blocker {
            let pos = working.binary_search(&i).unwrap_err();
            working.insert(pos, i);
        }
        trace.push(problem.objective(&x));
    }
}

/// Solve the direction subproblem: minimize the model at `x + p` subject to
/// the working constraints staying tight. Returns `(p, duals)`.
fn eqp_direction(
    problem: &QpProblem,
    a_eq: &DMatrix<f64>,
    working: &[usize],
    x: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = problem.n();
    let m = a_eq.nrows() + working.len();
    let g = &problem.p * x + &problem.c;
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.p);
    for (r, row) in a_eq.row_iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = row[j];
            kkt[(j, n + r)] = row[j];
        }
    }
    for (k, &ci) in working.iter().enumerate() {
        let r = a_eq.nrows() + k;
        for j in 0..n {
            kkt[(n + r, j)] = problem.a_in[(ci, j)];
            kkt[(j, n + r)] = problem.a_in[(ci, j)];
        }
    }
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-&g));
    let sol = kkt.lu().solve(&rhs)?;
    let p = sol.rows(0, n).into_owned();
    let duals = sol.rows(n, m).into_owned();
    if !p.iter().all(|v| v.is_finite()) || !duals.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((p, duals))
}

/// Equality-constrained solve used for cold/warm starting: minimize the
/// objective subject to `a_eq` plus the rows of `working` held as equalities.
fn eqp_solve(
    problem: &QpProblem,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    working: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = problem.n();
    let m = a_eq.nrows() + working.len();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.p);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-&problem.c));
    for r in 0..a_eq.nrows() {
        for j in 0..n {
            kkt[(n + r, j)] = a_eq[(r, j)];
            kkt[(j, n + r)] = a_eq[(r, j)];
        }
        rhs[n + r] = b_eq[r];
    }
    for (k, &ci) in working.iter().enumerate() {
        let r = a_eq.nrows() + k;
        for j in 0..n {
            kkt[(n + r, j)] = problem.a_in[(ci, j)];
            kkt[(j, n + r)] = problem.a_in[(ci, j)];
        }
        rhs[n + r] = problem.b_in[ci];
    }
    let sol = kkt.lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

/// Find a feasible point by minimizing inequality violations with slacks:
/// variables `(x, s)`, cost `eps |x - x0|^2 + |s|^2`, constraints
/// `A_eq x = b_eq`, `A_in x - s <= b_in`, `s >= 0`.
fn phase_one(
    problem: &QpProblem,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    x0: &DVector<f64>,
) -> Option<(DVector<f64>, usize)> {
    let n = problem.n();
    let m_i = problem.num_in();
    let nz = n + m_i;
    const EPS: f64 = 1e-6;

    let mut p = DMatrix::zeros(nz, nz);
    for i in 0..n {
        p[(i, i)] = EPS;
    }
    for i in 0..m_i {
        p[(n + i, n + i)] = 1.0;
    }
    let mut c = DVector::zeros(nz);
    for i in 0..n {
        c[i] = -EPS * x0[i];
    }

    let mut aeq = DMatrix::zeros(a_eq.nrows(), nz);
    aeq.view_mut((0, 0), (a_eq.nrows(), n)).copy_from(a_eq);

    let mut ain = DMatrix::zeros(2 * m_i, nz);
    let mut bin = DVector::zeros(2 * m_i);
    for i in 0..m_i {
        for j in 0..n {
            ain[(i, j)] = problem.a_in[(i, j)];
        }
        ain[(i, n + i)] = -1.0;
        bin[i] = problem.b_in[i];
        ain[(m_i + i, n + i)] = -1.0;
        bin[m_i + i] = 0.0;
    }

    let aux = QpProblem {
        p,
        c,
        a_eq: aeq,
        b_eq: b_eq.clone(),
        a_in: ain,
        b_in: bin,
        regularized: false,
    };

    // Feasible start for the auxiliary problem: slacks cover the violations.
    let mut z0 = DVector::zeros(nz);
    z0.rows_mut(0, n).copy_from(x0);
    for i in 0..m_i {
        let viol = problem.a_in.row(i).transpose().dot(x0) - problem.b_in[i];
        z0[n + i] = viol.max(0.0);
    }
    let aux_eq_rows: Vec<usize> = (0..aux.a_eq.nrows()).collect();
    let sol = active_set_loop(&aux, &aux.a_eq.clone(), &aux_eq_rows, z0, vec![], 0);
    if sol.status != QpStatus::Optimal {
        return None;
    }
    Some((sol.x.rows(0, n).into_owned(), sol.iterations))
}

/// Greedy (lowest-index-first) selection of linearly independent rows.
fn independent_rows(a: &DMatrix<f64>) -> Vec<usize> {
    let mut kept: Vec<DVector<f64>> = Vec::new();
    let mut idx = Vec::new();
    for i in 0..a.nrows() {
        let mut v = a.row(i).transpose().into_owned();
        let scale = v.norm();
        if scale <= INDEP_TOL {
            continue;
        }
        for k in &kept {
            let proj = k.dot(&v);
            v -= proj * k;
        }
        if v.norm() > INDEP_TOL * scale.max(1.0) {
            kept.push(v.normalize());
            idx.push(i);
        }
    }
    idx
}

fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), a.ncols());
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).copy_from(&a.row(i));
    }
    out
}

/// Drop warm-set rows that are dependent on the equalities or earlier rows.
fn prune_dependent_working_set(
    problem: &QpProblem,
    a_eq: &DMatrix<f64>,
    warm: &[usize],
) -> Vec<usize> {
    let mut stacked = a_eq.clone();
    let mut out = Vec::new();
    for &i in warm {
        let mut candidate = stacked.clone().insert_row(stacked.nrows(), 0.0);
        candidate
            .row_mut(stacked.nrows())
            .copy_from(&problem.a_in.row(i));
        let keep = independent_rows(&candidate).len() == candidate.nrows();
        if keep {
            stacked = candidate;
            out.push(i);
        }
    }
    out
}

fn finish(
    problem: &QpProblem,
    x: DVector<f64>,
    working: Vec<usize>,
    status: QpStatus,
    iterations: usize,
    trace: Vec<f64>,
) -> QpSolution {
    let dual_eq = DVector::zeros(problem.num_eq());
    let dual_in = DVector::zeros(problem.num_in());
    let kkt = kkt_residual(problem, &x, &dual_eq, &dual_in);
    let objective = problem.objective(&x);
    QpSolution {
        x,
        status,
        active_set: working,
        kkt_residual: kkt,
        iterations,
        objective,
        dual_eq,
        dual_in,
        objective_trace: trace,
    }
}

#[allow(clippy::too_many_arguments)]
fn finish_optimal(
    problem: &QpProblem,
    x: DVector<f64>,
    working: Vec<usize>,
    duals: DVector<f64>,
    eq_rows: &[usize],
    a_eq: &DMatrix<f64>,
    iterations: usize,
    trace: Vec<f64>,
) -> QpSolution {
    let mut dual_eq = DVector::zeros(problem.num_eq());
    for (r, &i) in eq_rows.iter().enumerate() {
        dual_eq[i] = duals[r];
    }
    let mut dual_in = DVector::zeros(problem.num_in());
    for (k, &ci) in working.iter().enumerate() {
        dual_in[ci] = duals[a_eq.nrows() + k].max(0.0);
    }
    let kkt = kkt_residual(problem, &x, &dual_eq, &dual_in);
    let status = if kkt <= KKT_TOL && problem.max_violation(&x) <= FEAS_TOL {
        QpStatus::Optimal
    } else {
        QpStatus::MaxIter
    };
    let objective = problem.objective(&x);
    QpSolution {
        x,
        status,
        active_set: working,
        kkt_residual: kkt,
        iterations,
        objective,
        dual_eq,
        dual_in,
        objective_trace: trace,
    }
}

/// Serialize a problem to the plain-text debug format: a `n m_e m_i` header
/// followed by `P`, `c`, `A_eq`, `b_eq`, `A_in`, `b_in` row-major,
/// whitespace-separated.
pub fn dump_problem(problem: &QpProblem) -> String {
    let mut out = format!(
        "{} {} {}\n",
        problem.n(),
        problem.num_eq(),
        problem.num_in()
    );
    let push_mat = |out: &mut String, m: &DMatrix<f64>| {
        for r in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(r, c)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    };
    let push_vec = |out: &mut String, v: &DVector<f64>| {
        if v.len() > 0 {
            let row: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    };
    push_mat(&mut out, &problem.p);
    push_vec(&mut out, &problem.c);
    push_mat(&mut out, &problem.a_eq);
    push_vec(&mut out, &problem.b_eq);
    push_mat(&mut out, &problem.a_in);
    push_vec(&mut out, &problem.b_in);
    out
}

/// Parse the format written by [`dump_problem`].
pub fn load_problem(text: &str) -> Result<QpProblem, QpError> {
    let mut tokens = text.split_whitespace();
    let mut next_usize = |name: &str| -> Result<usize, QpError> {
        tokens
            .next()
            .ok_or_else(|| QpError::Parse(format!("missing {name}")))?
            .parse()
            .map_err(|e| QpError::Parse(format!("{name}: {e}")))
    };
    let n = next_usize("n")?;
    let m_e = next_usize("m_e")?;
    let m_i = next_usize("m_i")?;
    let mut next_f64 = |count: usize| -> Result<Vec<f64>, QpError> {
        let mut v = Vec::with_capacity(count);
        for _ in 0..count {
            let tok = tokens
                .next()
                .ok_or_else(|| QpError::Parse("unexpected end of input".into()))?;
            v.push(
                tok.parse()
                    .map_err(|e| QpError::Parse(format!("bad float {tok}: {e}")))?,
            );
        }
        Ok(v)
    };
    let p = DMatrix::from_row_slice(n, n, &next_f64(n * n)?);
    let c = DVector::from_vec(next_f64(n)?);
    let a_eq = DMatrix::from_row_slice(m_e, n, &next_f64(m_e * n)?);
    let b_eq = DVector::from_vec(next_f64(m_e)?);
    let a_in = DMatrix::from_row_slice(m_i, n, &next_f64(m_i * n)?);
    let b_in = DVector::from_vec(next_f64(m_i)?);
    QpProblem::new(p, c, a_eq, b_eq, a_in, b_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eye(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn unconstrained_stationary_point() {
        let problem =
            QpProblem::unconstrained(eye(2), DVector::from_vec(vec![-1.0, -2.0])).unwrap();
        let sol = solve(&problem, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.x[1], 2.0, epsilon = 1e-10);
        assert!(sol.kkt_residual < KKT_TOL);
    }

    #[test]
    fn single_equality_closed_form() {
        let problem = QpProblem::new(
            eye(2),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_vec(vec![2.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve(&problem, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn clamped_minimum_activates_bound() {
        let problem = QpProblem::new(
            eye(1),
            DVector::from_vec(vec![-10.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![3.0]),
        )
        .unwrap();
        let sol = solve(&problem, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 3.0, epsilon = 1e-10);
        assert_eq!(sol.active_set, vec![0]);
        assert!(sol.kkt_residual < KKT_TOL);
    }

    #[test]
    fn box_constrained_corner() {
        // min 1/2|x|^2 - (3, 3) x  with x <= (1, 2): optimum at the corner.
        let problem = QpProblem::new(
            eye(2),
            DVector::from_vec(vec![-3.0, -3.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DVector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap();
        let sol = solve(&problem, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.x[1], 2.0, epsilon = 1e-10);
        assert_eq!(sol.active_set, vec![0, 1]);
    }

    #[test]
    fn infeasible_box_detected() {
        // x <= -1 and -x <= -1 cannot both hold.
        let problem = QpProblem::new(
            eye(1),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
        )
        .unwrap();
        let sol = solve(&problem, None);
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn inconsistent_equalities_detected() {
        let problem = QpProblem::new(
            eye(2),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            DVector::from_vec(vec![1.0, 3.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve(&problem, None);
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn redundant_consistent_equalities_ok() {
        let problem = QpProblem::new(
            eye(2),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            DVector::from_vec(vec![2.0, 4.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve(&problem, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn phase_one_finds_interior_start() {
        // Unconstrained minimum at origin violates x0 + x1 >= 3.
        let problem = QpProblem::new(
            eye(2),
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]),
            DVector::from_vec(vec![-3.0]),
        )
        .unwrap();
        let sol = solve(&problem, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.5, epsilon = 1e-8);
        assert_relative_eq!(sol.x[1], 1.5, epsilon = 1e-8);
    }

    #[test]
    fn warm_start_matches_cold_solve() {
        let problem = QpProblem::new(
            DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]),
            DVector::from_vec(vec![-1.0, 2.0, -3.0]),
            DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
            DVector::from_vec(vec![1.0]),
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0]),
            DVector::from_vec(vec![0.5, 0.3, 2.0]),
        )
        .unwrap();
        let cold = solve(&problem, None);
        assert_eq!(cold.status, QpStatus::Optimal);
        let warm = solve(&problem, Some(&cold.active_set));
        assert_eq!(warm.status, QpStatus::Optimal);
        assert!((cold.x - &warm.x).amax() < 1e-10);
        // A stale warm set must not break anything either.
        let stale = solve(&problem, Some(&[2, 17]));
        assert_eq!(stale.status, QpStatus::Optimal);
    }

    #[test]
    fn objective_trace_monotone() {
        let problem = QpProblem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]),
            DVector::from_vec(vec![-4.0, 1.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0, 0.2, 0.2]),
        )
        .unwrap();
        let sol = solve(&problem, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        for w in sol.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace not monotone: {:?}", sol.objective_trace);
        }
    }

    #[test]
    fn kkt_residual_grows_with_perturbation() {
        let problem =
            QpProblem::unconstrained(eye(2), DVector::from_vec(vec![-1.0, -2.0])).unwrap();
        let sol = solve(&problem, None);
        let mut x = sol.x.clone();
        x[0] += 1e-3;
        let res = kkt_residual(&problem, &x, &sol.dual_eq, &sol.dual_in);
        assert!(res >= 1e-3 - 1e-12, "residual {res}");
        // A feasible non-optimal point has strictly positive residual.
        let random_pt = DVector::from_vec(vec![0.2, -0.4]);
        assert!(kkt_residual(&problem, &random_pt, &sol.dual_eq, &sol.dual_in) > 0.0);
    }

    #[test]
    fn near_singular_cost_is_regularized() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let problem = QpProblem::unconstrained(p, DVector::zeros(2)).unwrap();
        assert!(problem.regularized());
        let sol = solve(&problem, None);
        assert_eq!(sol.status, QpStatus::Optimal);
    }

    #[test]
    fn asymmetric_cost_rejected() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QpProblem::unconstrained(p, DVector::zeros(2)).is_err());
    }

    #[test]
    fn dump_load_roundtrip() {
        let problem = QpProblem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.25, 0.25, 1.0]),
            DVector::from_vec(vec![-0.5, 1.5]),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::from_vec(vec![0.125]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DVector::from_vec(vec![2.0, 3.0]),
        )
        .unwrap();
        let text = dump_problem(&problem);
        let back = load_problem(&text).unwrap();
        assert_eq!(problem.p, back.p);
        assert_eq!(problem.c, back.c);
        assert_eq!(problem.a_eq, back.a_eq);
        assert_eq!(problem.b_eq, back.b_eq);
        assert_eq!(problem.a_in, back.a_in);
        assert_eq!(problem.b_in, back.b_in);
        let s1 = solve(&problem, None);
        let s2 = solve(&back, None);
        assert!((s1.x - s2.x).amax() < 1e-14);
    }
}
