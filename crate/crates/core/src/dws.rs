//! The dynamic working set outer loop.
//!
//! Each outer iteration solves the problem restricted to the working set
//! `W_r`, evaluates the full gradient, and collects the violating set
//! `E_r = { j ∉ W_r : |∇f(x_r)_j| > η + kkt_eps }`. The loop stops when `E_r`
//! is empty. Otherwise the next working set keeps the support of `x_r` and
//! admits the `τ_{r+1}` heaviest violators, where `τ_{r+1}` grows by factors
//! of `h` only while the support keeps growing quickly.
//!
//! The loop itself is shared with the comparator strategies through
//! [`WorkingSetPolicy`].

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::linalg;
use crate::scalar::Scalar;
use crate::solver::{self, SolverConfig};

pub const DEFAULT_H: f64 = 2.0;
pub const DEFAULT_P0: usize = 10;
pub const DEFAULT_MAX_OUTER: usize = 500;
/// `kkt_eps = KKT_EPS_FACTOR · tol_inner` unless overridden.
pub const KKT_EPS_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwsConfig<T> {
    pub h: T,
    pub tau: usize,
    pub p0: usize,
    pub kkt_eps: T,
    pub max_outer: usize,
    /// Keep a [`Snapshot`] of every outer iterate.
    pub record_history: bool,
}

/// `⌊4 ln² n⌋`, clamped into `[1, k]`.
pub fn default_tau(n: usize, k: usize) -> usize {
    let ln = (n.max(1) as f64).ln();
    let raw = (4.0 * ln * ln).floor() as usize;
    raw.clamp(1, k.max(1))
}

impl<T: Scalar> DwsConfig<T> {
    pub fn defaults(n: usize, k: usize, tol_inner: T) -> Self {
        Self {
            h: T::lit(DEFAULT_H),
            tau: default_tau(n, k),
            p0: DEFAULT_P0.min(n.max(1)),
            kkt_eps: T::lit(KKT_EPS_FACTOR) * tol_inner,
            max_outer: DEFAULT_MAX_OUTER,
            record_history: false,
        }
    }

    pub fn for_instance(inst: &Instance<T>, scfg: &SolverConfig<T>) -> Self {
        Self::defaults(inst.n(), inst.k(), scfg.tol_inner)
    }

    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        if !(self.h > T::one() && self.h <= T::lit(2.0)) {
            return Err(Error::invalid("h must lie in (1, 2]"));
        }
        if self.tau == 0 || self.tau > k {
            return Err(Error::invalid(format!("tau must lie in [1, {k}]")));
        }
        if self.p0 == 0 || self.p0 > n {
            return Err(Error::invalid(format!("p0 must lie in [1, {n}]")));
        }
        if !(self.kkt_eps >= T::zero() && self.kkt_eps.is_finite()) {
            return Err(Error::invalid("kkt_eps must be finite and nonnegative"));
        }
        if self.max_outer == 0 {
            return Err(Error::invalid("max_outer must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedIndex<T> {
    pub index: usize,
    pub weight: T,
}

/// Indices outside `exclude` whose gradient magnitude exceeds `η + kkt_eps`,
/// heaviest first, ties by ascending index.
pub fn violating_set<T: Scalar>(
    grad: &[T],
    eta: T,
    kkt_eps: T,
    exclude: &[usize],
) -> Vec<WeightedIndex<T>> {
    let mut excluded = vec![false; grad.len()];
    for &j in exclude {
        if j < grad.len() {
            excluded[j] = true;
        }
    }
    let threshold = eta + kkt_eps;
    let mut out: Vec<WeightedIndex<T>> = grad
        .iter()
        .enumerate()
        .filter(|&(j, g)| !excluded[j] && g.abs() > threshold)
        .map(|(index, g)| WeightedIndex {
            index,
            weight: g.abs(),
        })
        .collect();
    sort_heaviest_first(&mut out);
    out
}

fn sort_heaviest_first<T: Scalar>(v: &mut [WeightedIndex<T>]) {
    v.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
}

/// The `p0` indices with the largest `|grad0_j|`, returned ascending.
pub fn init_working_set<T: Scalar>(grad0: &[T], p0: usize) -> Vec<usize> {
    let mut all: Vec<WeightedIndex<T>> = grad0
        .iter()
        .enumerate()
        .map(|(index, g)| WeightedIndex {
            index,
            weight: g.abs(),
        })
        .collect();
    sort_heaviest_first(&mut all);
    let mut w: Vec<usize> = all.iter().take(p0).map(|e| e.index).collect();
    w.sort_unstable();
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TauUpdate {
    pub tau_next: usize,
    pub a_now: usize,
}

/// Step-size rule for the next batch of admitted violators.
///
/// `m` is the smallest integer `≥ −1` with `supp_now ≤ h^m·τ + supp_prev`,
/// found by stepping `m` upward; `a_now = min(m + 1, a_prev + 1)` and
/// `τ_next = min(⌊h^{a_now}·τ⌋, k, e_size)`.
pub fn next_tau<T: Scalar>(
    supp_now: usize,
    supp_prev: usize,
    a_prev: usize,
    h: T,
    tau: usize,
    k: usize,
    e_size: usize,
) -> TauUpdate {
    let tau_t = T::from_usize_lossy(tau);
    let now = T::from_usize_lossy(supp_now);
    let prev = T::from_usize_lossy(supp_prev);

    let mut m: i64 = -1;
    let mut h_pow = T::one() / h;
    while now > h_pow * tau_t + prev {
        m += 1;
        h_pow = if m == 0 { T::one() } else { h_pow * h };
    }
    let a_now = ((m + 1) as usize).min(a_prev + 1);

    let mut grow = T::one();
    for _ in 0..a_now {
        grow = grow * h;
    }
    let scaled = (grow * tau_t).floor();
    let scaled = if scaled >= T::from_usize_lossy(k) {
        k
    } else {
        scaled.to_usize().unwrap_or(k)
    };
    TauUpdate {
        tau_next: scaled.min(k).min(e_size),
        a_now,
    }
}

/// One row of the per-iteration trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord<T> {
    pub r: usize,
    pub ws_size: usize,
    pub supp_size: usize,
    pub e_size: usize,
    pub tau_next: usize,
    /// Growth exponent chosen at this iteration (0 for non-DWS policies).
    pub a: usize,
    pub objective: T,
    pub inner_iters: usize,
    pub inner_converged: bool,
    pub cum_seconds: f64,
}

/// Full state of one outer iterate, kept when `record_history` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot<T> {
    pub working_set: Vec<usize>,
    pub x: Vec<T>,
    pub grad: Vec<T>,
    pub violating: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput<T> {
    pub x: Vec<T>,
    pub trace: Vec<TraceRecord<T>>,
    pub history: Vec<Snapshot<T>>,
    /// Stopped because the violating set became empty.
    pub terminated: bool,
    /// Stopped at `max_outer` with violators remaining.
    pub truncated: bool,
}

impl<T: Scalar> RunOutput<T> {
    pub fn outer_iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn tau_sum(&self) -> usize {
        self.trace.iter().map(|t| t.tau_next).sum()
    }

    pub fn max_ws(&self) -> usize {
        self.trace.iter().map(|t| t.ws_size).max().unwrap_or(0)
    }

    pub fn final_support(&self) -> usize {
        linalg::support(&self.x).len()
    }
}

pub struct InitContext<'a, T> {
    pub grad0: &'a [T],
    pub violating: &'a [WeightedIndex<T>],
    pub n: usize,
}

pub struct StepContext<'a, T> {
    pub r: usize,
    pub x: &'a [T],
    pub support: &'a [usize],
    pub working_set: &'a [usize],
    pub violating: &'a [WeightedIndex<T>],
    pub grad: &'a [T],
    pub n: usize,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyStep {
    /// Next working set, ascending.
    pub working_set: Vec<usize>,
    /// Number of violators admitted.
    pub tau_next: usize,
    pub a: usize,
}

/// Decides the working sets of the shared outer loop.
pub trait WorkingSetPolicy<T: Scalar> {
    fn initial(&mut self, ctx: &InitContext<'_, T>) -> Vec<usize>;
    fn next(&mut self, ctx: &StepContext<'_, T>) -> PolicyStep;
}

/// `supp ∪ {first `count` entries of violating}`, ascending. The two sets are
/// disjoint because the violating set excludes the current working set.
pub fn union_with_heaviest<T>(support: &[usize], violating: &[WeightedIndex<T>], count: usize) -> Vec<usize> {
    let mut w: Vec<usize> = support.to_vec();
    w.extend(violating.iter().take(count).map(|e| e.index));
    w.sort_unstable();
    w.dedup();
    w
}

#[derive(Clone, Debug)]
pub struct DwsPolicy<T> {
    h: T,
    tau: usize,
    p0: usize,
    a_prev: usize,
    supp_prev: usize,
}

impl<T: Scalar> DwsPolicy<T> {
    pub fn new(cfg: &DwsConfig<T>) -> Self {
        Self {
            h: cfg.h,
            tau: cfg.tau,
            p0: cfg.p0,
            a_prev: 0,
            supp_prev: 0,
        }
    }

    /// Variant that starts from `p0 = τ` and treats `|supp(x_0)|` as `τ`.
    pub fn modified(cfg: &DwsConfig<T>) -> Self {
        Self {
            h: cfg.h,
            tau: cfg.tau,
            p0: cfg.tau,
            a_prev: 0,
            supp_prev: cfg.tau,
        }
    }
}

impl<T: Scalar> WorkingSetPolicy<T> for DwsPolicy<T> {
    fn initial(&mut self, ctx: &InitContext<'_, T>) -> Vec<usize> {
        init_working_set(ctx.grad0, self.p0.min(ctx.n))
    }

    fn next(&mut self, ctx: &StepContext<'_, T>) -> PolicyStep {
        let upd = next_tau(
            ctx.support.len(),
            self.supp_prev,
            self.a_prev,
            self.h,
            self.tau,
            ctx.k,
            ctx.violating.len(),
        );
        self.a_prev = upd.a_now;
        self.supp_prev = ctx.support.len();
        PolicyStep {
            working_set: union_with_heaviest(ctx.support, ctx.violating, upd.tau_next),
            tau_next: upd.tau_next,
            a: upd.a_now,
        }
    }
}

/// Runs the outer loop with an arbitrary working-set policy.
pub fn run_with_policy<T: Scalar, P: WorkingSetPolicy<T>>(
    inst: &Instance<T>,
    policy: &mut P,
    cfg: &DwsConfig<T>,
    scfg: &SolverConfig<T>,
) -> Result<RunOutput<T>> {
    cfg.validate(inst.n(), inst.k())?;
    scfg.validate()?;
    let start = Instant::now();
    let (n, k) = (inst.n(), inst.k());
    let atb = inst.atb();
    let grad0: Vec<T> = atb.iter().map(|&v| -v).collect();

    let mut x = vec![T::zero(); n];
    let violating0 = violating_set(&grad0, inst.eta, cfg.kkt_eps, &[]);
    let mut out = RunOutput {
        x: x.clone(),
        trace: Vec::new(),
        history: Vec::new(),
        terminated: false,
        truncated: false,
    };
    if violating0.is_empty() {
        out.terminated = true;
        return Ok(out);
    }
    let mut working_set = policy.initial(&InitContext {
        grad0: &grad0,
        violating: &violating0,
        n,
    });

    for r in 1..=cfg.max_outer {
        let a_r = inst.a.extract_columns(&working_set)?;
        let warm = linalg::restrict(&x, &working_set);
        let sol = solver::solve_restricted(&a_r, &inst.b, inst.eta, &warm, scfg)?;
        x = linalg::embed(n, &working_set, &sol.x_w)?;
        let support = linalg::support(&x);
        let grad = linalg::gradient(&inst.a, &atb, &x, &support)?;
        let violating = violating_set(&grad, inst.eta, cfg.kkt_eps, &working_set);

        let step = policy.next(&StepContext {
            r,
            x: &x,
            support: &support,
            working_set: &working_set,
            violating: &violating,
            grad: &grad,
            n,
            k,
        });
        out.trace.push(TraceRecord {
            r,
            ws_size: working_set.len(),
            supp_size: support.len(),
            e_size: violating.len(),
            tau_next: step.tau_next,
            a: step.a,
            objective: sol.f_value,
            inner_iters: sol.iters_used,
            inner_converged: sol.converged,
            cum_seconds: start.elapsed().as_secs_f64(),
        });
        if cfg.record_history {
            out.history.push(Snapshot {
                working_set: working_set.clone(),
                x: x.clone(),
                grad,
                violating: violating.iter().map(|e| e.index).collect(),
            });
        }
        if violating.is_empty() {
            out.terminated = true;
            break;
        }
        working_set = step.working_set;
    }
    out.truncated = !out.terminated;
    out.x = x;
    Ok(out)
}

pub fn run_dws<T: Scalar>(
    inst: &Instance<T>,
    cfg: &DwsConfig<T>,
    scfg: &SolverConfig<T>,
) -> Result<RunOutput<T>> {
    run_with_policy(inst, &mut DwsPolicy::new(cfg), cfg, scfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;

    #[test]
    fn violating_set_hand_scan() {
        let e = violating_set(&[-3.0, 0.5, -2.0], 1.0, 0.0, &[]);
        let got: Vec<(usize, f64)> = e.iter().map(|w| (w.index, w.weight)).collect();
        assert_eq!(got, vec![(0, 3.0), (2, 2.0)]);
    }

    #[test]
    fn violating_set_excludes_and_breaks_ties() {
        let g = [2.0, -2.0, 5.0, 2.0, 0.1];
        let e = violating_set(&g, 1.0, 0.0, &[2]);
        let idx: Vec<usize> = e.iter().map(|w| w.index).collect();
        assert_eq!(idx, vec![0, 1, 3]);
        assert!(violating_set(&g, 1.0, 1.5, &[]).iter().all(|w| w.weight > 2.5));
        // Strict inequality.
        assert!(violating_set(&[1.0], 1.0, 0.0, &[]).is_empty());
    }

    #[test]
    fn next_tau_rule_traces() {
        // Slow support growth resets the exponent.
        assert_eq!(
            next_tau(12, 10, 5, 2.0, 4, 100, 50),
            TauUpdate { tau_next: 4, a_now: 0 }
        );
        // 8 < 9 ≤ 16 gives m = 2, a = min(3, 1).
        assert_eq!(
            next_tau(9, 0, 0, 2.0, 4, 100, 50),
            TauUpdate { tau_next: 8, a_now: 1 }
        );
        // Clamped by |E|.
        assert_eq!(next_tau(100, 0, 6, 2.0, 4, 100, 3).tau_next, 3);
        // Clamped by k.
        assert_eq!(next_tau(100, 0, 6, 2.0, 4, 20, 300).tau_next, 20);
    }

    #[test]
    fn next_tau_exact_power_boundary() {
        // growth 8 = 2^1·4 exactly gives m = 1.
        assert_eq!(next_tau(8, 0, 9, 2.0, 4, 100, 100).a_now, 2);
        // growth 2 = 2^-1·4 gives m = -1.
        assert_eq!(next_tau(2, 0, 9, 2.0, 4, 100, 100).a_now, 0);
        // Shrinking support also gives m = -1.
        assert_eq!(next_tau(1, 30, 9, 2.0, 4, 100, 100).a_now, 0);
    }

    #[test]
    fn next_tau_non_integer_h_floors() {
        let u = next_tau(40, 0, 3, 1.5, 10, 1000, 1000);
        // m: 1.5^m·10 ≥ 40 → m = 4 (50.625), a = min(5, 4) = 4.
        assert_eq!(u.a_now, 4);
        assert_eq!(u.tau_next, (1.5f64.powi(4) * 10.0).floor() as usize);
    }

    #[test]
    fn init_working_set_examples() {
        assert_eq!(init_working_set(&[-3.0, 0.5, -2.0, 0.1], 2), vec![0, 2]);
        assert_eq!(init_working_set(&[-3.0, 0.5, -2.0, 0.1], 4), vec![0, 1, 2, 3]);
        assert_eq!(init_working_set(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn default_tau_values() {
        // ⌊4·ln²(1000)⌋ = 190.
        assert_eq!(default_tau(1000, 500), 190);
        assert_eq!(default_tau(2000, 185), 185);
        assert_eq!(default_tau(1, 10), 1);
    }

    fn one_d(eta: f64) -> Instance<f64> {
        let a = DenseMatrix::from_col_major(1, 1, vec![1.0]).unwrap();
        Instance::new(a, vec![2.0], eta, None).unwrap()
    }

    fn tiny_cfg(inst: &Instance<f64>) -> (DwsConfig<f64>, SolverConfig<f64>) {
        let scfg = SolverConfig::new(1e-12);
        let mut cfg = DwsConfig::for_instance(inst, &scfg);
        cfg.p0 = 1;
        (cfg, scfg)
    }

    #[test]
    fn one_dimensional_run() {
        let inst = one_d(0.5);
        let (cfg, scfg) = tiny_cfg(&inst);
        let out = run_dws(&inst, &cfg, &scfg).unwrap();
        assert!(out.terminated && !out.truncated);
        assert_eq!(out.trace.len(), 1);
        assert!((out.x[0] - 1.5).abs() < 1e-12);
        assert_eq!(out.trace[0].e_size, 0);
        assert_eq!(out.trace[0].tau_next, 0);
    }

    #[test]
    fn zero_is_optimal_when_eta_dominates() {
        let inst = one_d(2.5);
        let (cfg, scfg) = tiny_cfg(&inst);
        let out = run_dws(&inst, &cfg, &scfg).unwrap();
        assert!(out.terminated);
        assert!(out.trace.is_empty());
        assert_eq!(out.x, vec![0.0]);
    }

    #[test]
    fn rejects_invalid_config() {
        let inst = one_d(0.5);
        let (mut cfg, scfg) = tiny_cfg(&inst);
        cfg.h = 2.5;
        assert!(run_dws(&inst, &cfg, &scfg).is_err());
        let (mut cfg, scfg) = tiny_cfg(&inst);
        cfg.tau = 2;
        assert!(run_dws(&inst, &cfg, &scfg).is_err());
        let (mut cfg, scfg) = tiny_cfg(&inst);
        cfg.p0 = 0;
        assert!(run_dws(&inst, &cfg, &scfg).is_err());
    }

    #[test]
    fn truncation_flag() {
        let inst = crate::instance::generate(&crate::instance::GeneratorConfig::new(300, 6, 4)).unwrap();
        let scfg = SolverConfig::for_instance(&inst);
        let mut cfg = DwsConfig::for_instance(&inst, &scfg);
        cfg.max_outer = 1;
        cfg.tau = 1;
        cfg.p0 = 1;
        let out = run_dws(&inst, &cfg, &scfg).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert!(out.truncated && !out.terminated);
    }
}
