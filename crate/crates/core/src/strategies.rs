//! Comparator working-set policies on top of the shared outer loop.
//!
//! - `doubling`: the next working set holds the support plus the heaviest
//!   violators, up to twice the support size (Skglm-style).
//! - `modified_dws`: DWS started from `τ` variables, pretending the initial
//!   support already had size `τ`.
//! - `full`: one inner solve over every variable.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dws::{
    self, DwsConfig, DwsPolicy, InitContext, PolicyStep, RunOutput, StepContext, TauUpdate,
    WeightedIndex, WorkingSetPolicy,
};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::scalar::Scalar;
use crate::solver::SolverConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Dws,
    Doubling,
    ModifiedDws,
    Full,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [Self::Dws, Self::Doubling, Self::ModifiedDws, Self::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dws => "dws",
            Self::Doubling => "doubling",
            Self::ModifiedDws => "modified_dws",
            Self::Full => "full",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy '{s}'")))
    }
}

/// Doubling rule: target size `clamp(2·|supp|, p0, n)`, filled with the
/// heaviest violators after the support.
pub fn doubling_next_ws<T>(
    support: &[usize],
    violating: &[WeightedIndex<T>],
    p0: usize,
    n: usize,
) -> Vec<usize> {
    let target = (2 * support.len()).max(p0).min(n);
    let extra = target.saturating_sub(support.len());
    dws::union_with_heaviest(support, violating, extra)
}

/// DWS growth rule with the first-iteration `supp_prev` replaced by `τ`.
pub fn modified_dws_next<T: Scalar>(
    r: usize,
    supp_now: usize,
    supp_prev: usize,
    a_prev: usize,
    h: T,
    tau: usize,
    k: usize,
    e_size: usize,
) -> TauUpdate {
    let prev = if r == 1 { tau } else { supp_prev };
    dws::next_tau(supp_now, prev, a_prev, h, tau, k, e_size)
}

#[derive(Clone, Debug)]
pub struct DoublingPolicy {
    p0: usize,
}

impl DoublingPolicy {
    pub fn new(p0: usize) -> Self {
        Self { p0 }
    }
}

impl<T: Scalar> WorkingSetPolicy<T> for DoublingPolicy {
    fn initial(&mut self, ctx: &InitContext<'_, T>) -> Vec<usize> {
        dws::init_working_set(ctx.grad0, self.p0.min(ctx.n))
    }

    fn next(&mut self, ctx: &StepContext<'_, T>) -> PolicyStep {
        let working_set = doubling_next_ws(ctx.support, ctx.violating, self.p0, ctx.n);
        PolicyStep {
            tau_next: working_set.len() - ctx.support.len(),
            working_set,
            a: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FullPolicy;

impl<T: Scalar> WorkingSetPolicy<T> for FullPolicy {
    fn initial(&mut self, ctx: &InitContext<'_, T>) -> Vec<usize> {
        (0..ctx.n).collect()
    }

    fn next(&mut self, ctx: &StepContext<'_, T>) -> PolicyStep {
        PolicyStep {
            working_set: (0..ctx.n).collect(),
            tau_next: 0,
            a: 0,
        }
    }
}

pub fn run_strategy<T: Scalar>(
    kind: StrategyKind,
    inst: &Instance<T>,
    cfg: &DwsConfig<T>,
    scfg: &SolverConfig<T>,
) -> Result<RunOutput<T>> {
    match kind {
        StrategyKind::Dws => dws::run_dws(inst, cfg, scfg),
        StrategyKind::ModifiedDws => {
            dws::run_with_policy(inst, &mut DwsPolicy::modified(cfg), cfg, scfg)
        }
        StrategyKind::Doubling => {
            dws::run_with_policy(inst, &mut DoublingPolicy::new(cfg.p0), cfg, scfg)
        }
        StrategyKind::Full => dws::run_with_policy(inst, &mut FullPolicy, cfg, scfg),
    }
}
