//! Inner solvers for `min ½‖A_w x − b‖² + η‖x‖₁`.
//!
//! `GpsrBb` is the working solver: gradient projection on the split
//! `x = u − v` (`u, v ≥ 0`) with Barzilai–Borwein steps and a nonmonotone
//! acceptance test. `IstaOracle` is plain proximal gradient with backtracking,
//! monotone by construction, and serves as the reference.
//!
//! Both stop on the coordinate-wise optimality residual rather than on
//! objective stagnation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::linalg::{self, DenseMatrix};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverVariant {
    GpsrBb,
    IstaOracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig<T> {
    pub tol_inner: T,
    pub max_inner_iters: usize,
    pub variant: SolverVariant,
    /// Clamp for the Barzilai–Borwein step.
    pub bb_step_bounds: (T, T),
}

impl<T: Scalar> SolverConfig<T> {
    pub fn new(tol_inner: T) -> Self {
        Self {
            tol_inner,
            max_inner_iters: 100_000,
            variant: SolverVariant::GpsrBb,
            bb_step_bounds: (T::lit(1e-30), T::lit(1e30)),
        }
    }

    /// Tolerance `1e-9·(1 + ‖Aᵗb‖_∞)`.
    pub fn for_instance(inst: &Instance<T>) -> Self {
        let atb_inf = linalg::norm_inf(&inst.atb());
        Self::new(default_tol_inner(atb_inf))
    }

    pub fn with_variant(mut self, variant: SolverVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_inner > T::zero() && self.tol_inner.is_finite()) {
            return Err(Error::invalid("tol_inner must be positive"));
        }
        if self.max_inner_iters == 0 {
            return Err(Error::invalid("max_inner_iters must be at least 1"));
        }
        let (lo, hi) = self.bb_step_bounds;
        if !(lo > T::zero() && lo < hi) {
            return Err(Error::invalid("BB step bounds must satisfy 0 < min < max"));
        }
        Ok(())
    }
}

pub fn default_tol_inner<T: Scalar>(atb_inf: T) -> T {
    T::lit(1e-9) * (T::one() + atb_inf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictedSolution<T> {
    pub x_w: Vec<T>,
    pub iters_used: usize,
    pub f_value: T,
    pub converged: bool,
}

#[inline]
pub fn soft_threshold<T: Scalar>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

/// Largest violation of the coordinate optimality conditions given `∇f(x)`.
fn kkt_residual<T: Scalar>(grad: &[T], eta: T, x: &[T]) -> T {
    grad.iter().zip(x).fold(T::zero(), |worst, (&g, &xi)| {
        let v = if xi.is_zero() {
            (g.abs() - eta).max(T::zero())
        } else {
            (g + xi.sign0() * eta).abs()
        };
        worst.max(v)
    })
}

/// Residual `Ax − b` and gradient `Aᵗ(Ax − b)`.
fn residual_and_gradient<T: Scalar>(a: &DenseMatrix<T>, b: &[T], x: &[T]) -> (Vec<T>, Vec<T>) {
    let mut r = linalg::matvec(a, x).expect("checked dimensions");
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri -= bi;
    }
    let g = linalg::matvec_transpose(a, &r).expect("checked dimensions");
    (r, g)
}

fn check_finite<T: Scalar>(v: &[T], iteration: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { iteration })
    }
}

pub fn solve_restricted<T: Scalar>(
    a_w: &DenseMatrix<T>,
    b: &[T],
    eta: T,
    warm: &[T],
    cfg: &SolverConfig<T>,
) -> Result<RestrictedSolution<T>> {
    cfg.validate()?;
    if b.len() != a_w.rows() {
        return Err(Error::dim(format!(
            "observation of length {} against {} rows",
            b.len(),
            a_w.rows()
        )));
    }
    if warm.len() != a_w.cols() {
        return Err(Error::dim(format!(
            "warm start of length {} against {} columns",
            warm.len(),
            a_w.cols()
        )));
    }
    linalg::ensure_finite(warm, "warm start")?;
    if a_w.cols() == 0 {
        return Ok(RestrictedSolution {
            x_w: Vec::new(),
            iters_used: 0,
            f_value: T::lit(0.5) * linalg::dot(b, b),
            converged: true,
        });
    }
    match cfg.variant {
        SolverVariant::GpsrBb => gpsr_bb(a_w, b, eta, warm, cfg),
        SolverVariant::IstaOracle => ista(a_w, b, eta, warm, cfg.tol_inner, cfg.max_inner_iters),
    }
}

fn finish<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &[T],
    eta: T,
    x: Vec<T>,
    iters_used: usize,
    tol: T,
) -> Result<RestrictedSolution<T>> {
    let (r, g) = residual_and_gradient(a, b, &x);
    check_finite(&g, iters_used)?;
    let f_value = T::lit(0.5) * linalg::dot(&r, &r) + eta * linalg::norm1(&x);
    let converged = kkt_residual(&g, eta, &x) <= tol;
    Ok(RestrictedSolution {
        x_w: x,
        iters_used,
        f_value,
        converged,
    })
}

const NONMONOTONE_MEMORY: usize = 10;
const SUFFICIENT_DECREASE: f64 = 1e-4;
const REFRESH_EVERY: usize = 50;

fn gpsr_bb<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &[T],
    eta: T,
    warm: &[T],
    cfg: &SolverConfig<T>,
) -> Result<RestrictedSolution<T>> {
    let w = a.cols();
    let half = T::lit(0.5);
    let (alpha_min, alpha_max) = cfg.bb_step_bounds;

    let mut u: Vec<T> = warm.iter().map(|&v| v.max(T::zero())).collect();
    let mut v: Vec<T> = warm.iter().map(|&v| (-v).max(T::zero())).collect();
    let x_of = |u: &[T], v: &[T]| -> Vec<T> { u.iter().zip(v).map(|(&p, &q)| p - q).collect() };

    let mut x = x_of(&u, &v);
    let (mut r, mut g) = residual_and_gradient(a, b, &x);
    check_finite(&g, 0)?;
    let warm_f = half * linalg::dot(&r, &r) + eta * linalg::norm1(warm);

    // Q(u, v) = ½‖r‖² + η·Σ(u + v).
    let q_of = |r: &[T], u: &[T], v: &[T]| -> T {
        half * linalg::dot(r, r) + eta * (u.iter().copied().sum::<T>() + v.iter().copied().sum::<T>())
    };
    let mut history = vec![q_of(&r, &u, &v)];

    // Cauchy step along the projected gradient for the first iteration.
    let mut alpha = {
        let mut px = vec![T::zero(); w];
        let mut pp = T::zero();
        for i in 0..w {
            let gu = g[i] + eta;
            let gv = eta - g[i];
            let du = if u[i] > T::zero() || gu < T::zero() { -gu } else { T::zero() };
            let dv = if v[i] > T::zero() || gv < T::zero() { -gv } else { T::zero() };
            px[i] = du - dv;
            pp += du * du + dv * dv;
        }
        let apx = linalg::matvec(a, &px).expect("checked dimensions");
        let curv = linalg::dot(&apx, &apx);
        if curv > T::zero() {
            (pp / curv).max(alpha_min).min(alpha_max)
        } else {
            T::one()
        }
    };

    let mut du = vec![T::zero(); w];
    let mut dv = vec![T::zero(); w];
    let mut dx = vec![T::zero(); w];
    let mut iter = 0;
    while iter < cfg.max_inner_iters {
        if kkt_residual(&g, eta, &x) <= cfg.tol_inner {
            // Confirm against a fresh residual before accepting.
            let (r_new, g_new) = residual_and_gradient(a, b, &x);
            r = r_new;
            g = g_new;
            if kkt_residual(&g, eta, &x) <= cfg.tol_inner {
                break;
            }
        }
        iter += 1;

        let mut dd = T::zero();
        let mut slope = T::zero();
        for i in 0..w {
            let gu = g[i] + eta;
            let gv = eta - g[i];
            du[i] = (u[i] - alpha * gu).max(T::zero()) - u[i];
            dv[i] = (v[i] - alpha * gv).max(T::zero()) - v[i];
            dx[i] = du[i] - dv[i];
            dd += du[i] * du[i] + dv[i] * dv[i];
            slope += gu * du[i] + gv * dv[i];
        }
        if dd.is_zero() || slope >= T::zero() {
            // Projected gradient vanishes: stationary up to rounding.
            break;
        }
        let adx = linalg::matvec(a, &dx).expect("checked dimensions");
        let curv = linalg::dot(&adx, &adx);
        check_finite(&adx, iter)?;

        let q_now = *history.last().unwrap();
        let q_full = q_now + slope + half * curv;
        let reference = history.iter().copied().fold(T::neg_infinity(), T::max);
        let lambda = if q_full <= reference + T::lit(SUFFICIENT_DECREASE) * slope {
            T::one()
        } else if curv > T::zero() {
            (-slope / curv).min(T::one())
        } else {
            T::one()
        };

        for i in 0..w {
            u[i] += lambda * du[i];
            v[i] += lambda * dv[i];
            // Rounding can leave a tiny negative after a full step.
            if u[i] < T::zero() {
                u[i] = T::zero();
            }
            if v[i] < T::zero() {
                v[i] = T::zero();
            }
        }
        x = x_of(&u, &v);
        if iter % REFRESH_EVERY == 0 {
            let (r_new, g_new) = residual_and_gradient(a, b, &x);
            r = r_new;
            g = g_new;
        } else {
            linalg::axpy(lambda, &adx, &mut r);
            g = linalg::matvec_transpose(a, &r).expect("checked dimensions");
        }
        check_finite(&g, iter)?;

        history.push(q_of(&r, &u, &v));
        if history.len() > NONMONOTONE_MEMORY {
            history.remove(0);
        }

        alpha = if curv > T::zero() {
            (dd / curv).max(alpha_min).min(alpha_max)
        } else {
            alpha_max
        };
    }

    let sol = finish(a, b, eta, x, iter, cfg.tol_inner)?;
    if sol.f_value > warm_f {
        // Only reachable when the warm start was already optimal to rounding.
        return finish(a, b, eta, warm.to_vec(), iter, cfg.tol_inner);
    }
    Ok(sol)
}

/// Largest eigenvalue of `AᵗA` by power iteration, slightly inflated.
fn lipschitz_estimate<T: Scalar>(a: &DenseMatrix<T>) -> T {
    let w = a.cols();
    let mut v: Vec<T> = (0..w).map(|i| T::one() + T::from_usize_lossy(i % 7) * T::lit(0.1)).collect();
    let mut lambda = T::zero();
    for _ in 0..50 {
        let nv = linalg::norm2(&v);
        if nv.is_zero() {
            break;
        }
        for e in v.iter_mut() {
            *e /= nv;
        }
        let av = linalg::matvec(a, &v).expect("checked dimensions");
        lambda = linalg::dot(&av, &av);
        v = linalg::matvec_transpose(a, &av).expect("checked dimensions");
    }
    lambda * T::lit(1.01)
}

/// Proximal gradient with Beck–Teboulle backtracking.
fn ista<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &[T],
    eta: T,
    warm: &[T],
    tol: T,
    max_iters: usize,
) -> Result<RestrictedSolution<T>> {
    let half = T::lit(0.5);
    let l = lipschitz_estimate(a);
    let mut step = if l > T::zero() { T::one() / l } else { T::one() };

    let mut x = warm.to_vec();
    let (mut r, mut g) = residual_and_gradient(a, b, &x);
    check_finite(&g, 0)?;
    let mut f_smooth = half * linalg::dot(&r, &r);

    let mut iter = 0;
    while iter < max_iters && kkt_residual(&g, eta, &x) > tol {
        iter += 1;
        loop {
            let cand: Vec<T> = x
                .iter()
                .zip(&g)
                .map(|(&xi, &gi)| soft_threshold(xi - step * gi, step * eta))
                .collect();
            let diff: Vec<T> = cand.iter().zip(&x).map(|(&c, &xi)| c - xi).collect();
            let mut r_cand = r.clone();
            linalg::axpy(T::one(), &linalg::matvec(a, &diff).expect("checked dimensions"), &mut r_cand);
            let f_cand = half * linalg::dot(&r_cand, &r_cand);
            let model = f_smooth + linalg::dot(&g, &diff) + linalg::dot(&diff, &diff) / (T::lit(2.0) * step);
            check_finite(&r_cand, iter)?;
            // Slack for rounding in the two quadratic evaluations near the optimum.
            let slack = T::lit(16.0) * T::epsilon() * (f_smooth.abs() + f_cand.abs());
            if f_cand <= model + slack || step < T::lit(1e-300).max(T::min_positive_value()) {
                x = cand;
                r = r_cand;
                break;
            }
            step = step * half;
        }
        if iter % REFRESH_EVERY == 0 {
            let (r_new, g_new) = residual_and_gradient(a, b, &x);
            r = r_new;
            g = g_new;
        } else {
            g = linalg::matvec_transpose(a, &r).expect("checked dimensions");
        }
        check_finite(&g, iter)?;
        f_smooth = half * linalg::dot(&r, &r);
    }
    finish(a, b, eta, x, iter, tol)
}

/// Cap on proximal-gradient iterations for the full-problem reference solve.
pub const ORACLE_MAX_ITERS: usize = 10_000_000;

/// Reference optimum over all `n` variables by proximal gradient from zero,
/// stopped at coordinate residual `tol`.
pub fn solve_full_oracle<T: Scalar>(inst: &Instance<T>, tol: T) -> Result<Vec<T>> {
    if !(tol > T::zero()) {
        return Err(Error::invalid("oracle tolerance must be positive"));
    }
    let zero = vec![T::zero(); inst.n()];
    let sol = ista(&inst.a, &inst.b, inst.eta, &zero, tol, ORACLE_MAX_ITERS)?;
    if !sol.converged {
        return Err(Error::IterationCap(ORACLE_MAX_ITERS));
    }
    Ok(sol.x_w)
}
