//! Dense convex QP solver for small problems:
//!
//! `min 1/2 x'Hx + c'x  s.t.  A_eq x = b_eq,  A_in x >= b_in`
//!
//! The iteration is operator splitting (ADMM on the constraint set, with
//! over-relaxation and per-row penalties), and optimality is certified
//! by a direct polish step: the active set suggested by the splitting
//! iterate is solved exactly through the KKT system and accepted only if
//! it passes feasibility, multiplier signs, and the final residual
//! checks. Problems here have at most 32 variables and 32 rows, so the
//! dense factorizations are cheap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const FEAS_TOL: f64 = 1e-8;
const KKT_TOL: f64 = 1e-6;
/// Multiplier / activity slack used when reading an active set off an
/// ADMM iterate and when validating polish output.
const ACTIVE_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    /// Multipliers for the inequality rows (nonnegative at optimality),
    /// used by callers to see which constraints bind.
    pub lambda_in: DVector<f64>,
}

impl QpProblem {
    /// Problem without constraints.
    pub fn unconstrained(h: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            h,
            c,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || n > 32 {
            return Err(Error::InvalidDim(format!("qp has {n} variables, limit 32")));
        }
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(Error::InvalidDim("H must be n x n".into()));
        }
        let (me, mi) = (self.a_eq.nrows(), self.a_in.nrows());
        if me + mi > 32 {
            return Err(Error::InvalidDim(format!("{} constraint rows, limit 32", me + mi)));
        }
        if self.a_eq.ncols() != n && me > 0 {
            return Err(Error::InvalidDim("A_eq column count".into()));
        }
        if self.a_in.ncols() != n && mi > 0 {
            return Err(Error::InvalidDim("A_in column count".into()));
        }
        if self.b_eq.len() != me || self.b_in.len() != mi {
            return Err(Error::InvalidDim("constraint vector lengths".into()));
        }
        for r in 0..n {
            for c in 0..r {
                if (self.h[(r, c)] - self.h[(c, r)]).abs() > 1e-10 {
                    return Err(Error::InvalidConfiguration(format!(
                        "H not symmetric at ({r},{c})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Worst-case KKT measure for a primal/multiplier pair: stationarity,
/// primal feasibility, and complementary slackness, all in the inf norm.
fn kkt_residual(
    prob: &QpProblem,
    x: &DVector<f64>,
    nu_eq: &DVector<f64>,
    lambda_in: &DVector<f64>,
) -> f64 {
    let mut grad = &prob.h * x + &prob.c;
    if prob.a_eq.nrows() > 0 {
        grad -= prob.a_eq.transpose() * nu_eq;
    }
    if prob.a_in.nrows() > 0 {
        grad -= prob.a_in.transpose() * lambda_in;
    }
    let mut worst = grad.amax();
    for i in 0..prob.a_eq.nrows() {
        worst = worst.max((prob.a_eq.row(i).transpose().dot(x) - prob.b_eq[i]).abs());
    }
    for i in 0..prob.a_in.nrows() {
        let slack = prob.a_in.row(i).transpose().dot(x) - prob.b_in[i];
        worst = worst.max((-slack).max(0.0));
        worst = worst.max((lambda_in[i] * slack).abs());
        worst = worst.max((-lambda_in[i]).max(0.0));
    }
    worst
}

/// Solves the equality-constrained QP given by treating `active` rows of
/// A_in as equalities. Returns (x, nu_eq, lambda_active) or None if the
/// KKT system is singular.
fn solve_kkt(
    prob: &QpProblem,
    active: &[usize],
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = prob.n();
    let me = prob.a_eq.nrows();
    let ma = active.len();
    let dim = n + me + ma;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prob.h);
    for r in 0..me {
        for c in 0..n {
            let v = prob.a_eq[(r, c)];
            kkt[(n + r, c)] = v;
            kkt[(c, n + r)] = -v;
        }
    }
    for (k, &row) in active.iter().enumerate() {
        for c in 0..n {
            let v = prob.a_in[(row, c)];
            kkt[(n + me + k, c)] = v;
            kkt[(c, n + me + k)] = -v;
        }
    }
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -prob.c[i];
    }
    for r in 0..me {
        rhs[n + r] = prob.b_eq[r];
    }
    for (k, &row) in active.iter().enumerate() {
        rhs[n + me + k] = prob.b_in[row];
    }
    let lu = kkt.full_piv_lu();
    let sol = lu.solve(&rhs)?;
    // Reject solutions from numerically singular systems.
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let nu = sol.rows(n, me).into_owned();
    let lam = sol.rows(n + me, ma).into_owned();
    Some((x, nu, lam))
}

/// Active-set cleanup seeded by a guess: alternately drops the most
/// negative multiplier and adds the most violated row until the KKT
/// solution is primal feasible with nonnegative multipliers. Returns a
/// certified solution or None.
fn polish(prob: &QpProblem, guess: &[usize]) -> Option<QpSolution> {
    let mi = prob.a_in.nrows();
    let mut active: Vec<usize> = guess.to_vec();
    active.sort_unstable();
    active.dedup();
    let max_rounds = 4 * (mi + 1);
    for _ in 0..max_rounds {
        let (x, nu, lam) = solve_kkt(prob, &active)?;
        // Most negative multiplier leaves the set first.
        let mut drop_idx = None;
        let mut worst_lam = -ACTIVE_TOL;
        for (k, l) in lam.iter().enumerate() {
            if *l < worst_lam {
                worst_lam = *l;
                drop_idx = Some(k);
            }
        }
        if let Some(k) = drop_idx {
            active.remove(k);
            continue;
        }
        // Then the most violated inactive row enters.
        let mut add_idx = None;
        let mut worst_violation = ACTIVE_TOL;
        for row in 0..mi {
            if active.contains(&row) {
                continue;
            }
            let violation = prob.b_in[row] - prob.a_in.row(row).transpose().dot(&x);
            if violation > worst_violation {
                worst_violation = violation;
                add_idx = Some(row);
            }
        }
        if let Some(row) = add_idx {
            active.push(row);
            continue;
        }
        let mut lambda_in = DVector::zeros(mi);
        for (k, &row) in active.iter().enumerate() {
            lambda_in[row] = lam[k].max(0.0);
        }
        let res = kkt_residual(prob, &x, &nu, &lambda_in);
        if res < KKT_TOL {
            return Some(QpSolution { x, status: QpStatus::Optimal, kkt_residual: res, lambda_in });
        }
        return None;
    }
    None
}

pub fn solve_qp(prob: &QpProblem, max_iter: usize) -> Result<QpSolution> {
    prob.validate()?;
    let n = prob.n();
    let me = prob.a_eq.nrows();
    let mi = prob.a_in.nrows();

    // Inconsistent equality rows make the problem infeasible regardless
    // of the inequalities.
    if me > 0 {
        let svd = prob.a_eq.clone().svd(true, true);
        let x_ls = svd.solve(&prob.b_eq, 1e-12).map_err(|e| {
            Error::NumericalFailure(format!("equality consistency check: {e}"))
        })?;
        let gap = (&prob.a_eq * &x_ls - &prob.b_eq).amax();
        if gap > FEAS_TOL {
            return Ok(QpSolution {
                x: DVector::zeros(n),
                status: QpStatus::Infeasible,
                kkt_residual: gap,
                lambda_in: DVector::zeros(mi),
            });
        }
    }

    // No inequalities: one KKT solve is the whole job.
    if mi == 0 {
        if let Some((x, nu, lam)) = solve_kkt(prob, &[]) {
            let res = kkt_residual(prob, &x, &nu, &lam);
            if res < KKT_TOL {
                return Ok(QpSolution {
                    x,
                    status: QpStatus::Optimal,
                    kkt_residual: res,
                    lambda_in: DVector::zeros(0),
                });
            }
        }
    }

    let m = me + mi;
    // Stacked constraints as an interval l <= Ax <= u; equalities pin
    // both ends, inequalities leave the upper end open.
    let mut a = DMatrix::zeros(m, n);
    a.view_mut((0, 0), (me, n)).copy_from(&prob.a_eq);
    a.view_mut((me, 0), (mi, n)).copy_from(&prob.a_in);
    let mut lower = DVector::zeros(m);
    let mut upper = DVector::from_element(m, f64::INFINITY);
    for r in 0..me {
        lower[r] = prob.b_eq[r];
        upper[r] = prob.b_eq[r];
    }
    for r in 0..mi {
        lower[me + r] = prob.b_in[r];
    }

    let sigma = 1e-6;
    let alpha = 1.6;
    let mut rho = 0.1_f64;
    let rho_vec = |rho: f64| -> DVector<f64> {
        DVector::from_fn(m, |r, _| if r < me { rho * 1e3 } else { rho })
    };

    let factorize = |rho: f64| -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let rv = rho_vec(rho);
        let mut mat = prob.h.clone();
        for i in 0..n {
            mat[(i, i)] += sigma;
        }
        let mut ata = DMatrix::zeros(n, n);
        for r in 0..m {
            let row = a.row(r);
            for i in 0..n {
                for j in 0..n {
                    ata[(i, j)] += rv[r] * row[i] * row[j];
                }
            }
        }
        (mat + ata).cholesky()
    };

    let mut chol = factorize(rho)
        .ok_or_else(|| Error::NumericalFailure("splitting system not positive definite".into()))?;
    let mut rv = rho_vec(rho);

    let mut x = DVector::zeros(n);
    let mut z = &a * &x;
    for r in 0..m {
        z[r] = z[r].clamp(lower[r], upper[r]);
    }
    let mut y = DVector::zeros(m);

    let mut best: Option<(f64, DVector<f64>, DVector<f64>, DVector<f64>)> = None;

    let read_multipliers = |y: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        // Interval-form dual y maps to nu = -y on equalities and
        // lambda = -y (clamped to >= 0) on lower-bounded rows.
        let nu = DVector::from_fn(me, |r, _| -y[r]);
        let lam = DVector::from_fn(mi, |r, _| (-y[me + r]).max(0.0));
        (nu, lam)
    };

    for iter in 0..max_iter {
        let rhs = &x * sigma - &prob.c + a.transpose() * (z.component_mul(&rv) - &y);
        x = chol.solve(&rhs);
        let ax = &a * &x;
        let z_prev = z.clone();
        let xhat = &ax * alpha + &z_prev * (1.0 - alpha);
        for r in 0..m {
            z[r] = (xhat[r] + y[r] / rv[r]).clamp(lower[r], upper[r]);
            y[r] += rv[r] * (xhat[r] - z[r]);
        }

        let check_now = iter % 25 == 24 || iter == max_iter - 1;
        if !check_now {
            continue;
        }
        let r_prim = (&ax - &z).amax();
        let dual_vec = &prob.h * &x + &prob.c + a.transpose() * &y;
        let r_dual = dual_vec.amax();

        let (nu, lam) = read_multipliers(&y);
        let res_now = kkt_residual(prob, &x, &nu, &lam);
        if best.as_ref().map_or(true, |(b, _, _, _)| res_now < *b) {
            best = Some((res_now, x.clone(), nu.clone(), lam.clone()));
        }

        if r_prim < 1e-6 && r_dual < 1e-6 || iter % 100 == 99 {
            // Read the active set off the iterate and certify directly.
            let mut guess = Vec::new();
            for r in 0..mi {
                let at_bound = (z[me + r] - lower[me + r]).abs() <= ACTIVE_TOL.max(1e-6 * lower[me + r].abs());
                if at_bound || y[me + r] < -ACTIVE_TOL {
                    guess.push(r);
                }
            }
            if let Some(sol) = polish(prob, &guess) {
                return Ok(sol);
            }
        }

        // Slow progress: rebalance the penalty.
        if iter % 200 == 199 && r_prim.max(r_dual) > 1e-7 {
            let ratio = (r_prim.max(1e-16) / r_dual.max(1e-16)).sqrt();
            let new_rho = (rho * ratio).clamp(1e-4, 1e4);
            if (new_rho / rho).ln().abs() > 0.2 {
                rho = new_rho;
                rv = rho_vec(rho);
                chol = factorize(rho).ok_or_else(|| {
                    Error::NumericalFailure("splitting system not positive definite".into())
                })?;
            }
        }
    }

    let (res, x, nu, lam) = best.unwrap_or_else(|| {
        let (nu, lam) = read_multipliers(&y);
        (kkt_residual(prob, &x, &nu, &lam), x, nu, lam)
    });
    let _ = nu;
    Ok(QpSolution { x, status: QpStatus::MaxIter, kkt_residual: res, lambda_in: lam })
}
