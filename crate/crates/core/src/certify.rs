//! Optimality certificates and the subgradient machinery behind the DWS
//! convergence argument.
//!
//! At an iterate `x` with violating set `E` (zero coordinates whose gradient
//! magnitude exceeds `η`), the subgradient choice `ζ` cancels the gradient off
//! `E` and clips it to `∓η` on `E`; the remainder `γ = ∇f + ζ` is supported on
//! `E` and drives every descent statement here. Everything is a pure function
//! of its inputs.

use serde::{Deserialize, Serialize};

use crate::dws::{self, RunOutput};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::linalg::{self, DenseMatrix};
use crate::scalar::Scalar;

/// Absolute slack for inequality checks.
pub const INEQUALITY_SLACK: f64 = 1e-9;

/// `ζ_i = −∇f_i` off `E`, `−sign(∇f_i)·η` on `E`; `γ = ∇f + ζ`.
pub fn zeta_gamma<T: Scalar>(grad: &[T], eta: T, e: &[usize]) -> (Vec<T>, Vec<T>) {
    let mut zeta: Vec<T> = grad.iter().map(|&g| -g).collect();
    let mut gamma = vec![T::zero(); grad.len()];
    for &i in e {
        zeta[i] = -grad[i].sign0() * eta;
        gamma[i] = grad[i] + zeta[i];
    }
    (zeta, gamma)
}

/// Violating set of a bare point: zero coordinates with `|∇f_i| > η`.
pub fn violating_indices<T: Scalar>(grad: &[T], eta: T, x: &[T]) -> Vec<usize> {
    let supp = linalg::support(x);
    dws::violating_set(grad, eta, T::zero(), &supp)
        .into_iter()
        .map(|w| w.index)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateStatus {
    Optimal,
    Suboptimal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Offender<T> {
    pub index: usize,
    pub violation: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate<T> {
    pub gamma: Vec<T>,
    pub max_violation: T,
    pub tolerance: T,
    pub status: CertificateStatus,
    /// Up to five coordinates with the largest violation, worst first.
    pub worst: Vec<Offender<T>>,
}

fn coordinate_violation<T: Scalar>(g: T, xi: T, eta: T) -> T {
    if xi.is_zero() {
        (g.abs() - eta).max(T::zero())
    } else {
        (g + xi.sign0() * eta).abs()
    }
}

pub fn check_global<T: Scalar>(inst: &Instance<T>, x: &[T], tol: T) -> Result<Certificate<T>> {
    let grad = point_gradient(inst, x)?;
    let mut violations: Vec<Offender<T>> = grad
        .iter()
        .zip(x)
        .enumerate()
        .map(|(index, (&g, &xi))| Offender {
            index,
            violation: coordinate_violation(g, xi, inst.eta),
        })
        .collect();
    let max_violation = violations
        .iter()
        .fold(T::zero(), |m, o| m.max(o.violation));
    violations.sort_by(|a, b| {
        b.violation
            .partial_cmp(&a.violation)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    let worst = violations
        .into_iter()
        .take(5)
        .filter(|o| o.violation > T::zero())
        .collect();
    let e = violating_indices(&grad, inst.eta, x);
    let (_, gamma) = zeta_gamma(&grad, inst.eta, &e);
    Ok(Certificate {
        gamma,
        max_violation,
        tolerance: tol,
        status: if max_violation <= tol {
            CertificateStatus::Optimal
        } else {
            CertificateStatus::Suboptimal
        },
        worst,
    })
}

fn point_gradient<T: Scalar>(inst: &Instance<T>, x: &[T]) -> Result<Vec<T>> {
    if x.len() != inst.n() {
        return Err(Error::dim(format!(
            "point of length {} for n = {}",
            x.len(),
            inst.n()
        )));
    }
    let atb = inst.atb();
    linalg::gradient(&inst.a, &atb, x, &linalg::support(x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineMinimum<T> {
    pub t_star: T,
    pub y: Vec<T>,
    pub f_x: T,
    pub f_y: T,
    /// `⟨γ_x, n⟩`.
    pub gamma_dot_n: T,
}

/// Tolerance on `‖n‖ = 1` when validating a direction.
const UNIT_TOL: f64 = 1e-10;

/// Exact minimizer of `F(x + t·n)` over `t ≥ 0` for a direction that only
/// moves zero coordinates in `E` against their gradient signs. On that ray
/// `F` is an exact quadratic in `t`.
pub fn line_minimizer<T: Scalar>(inst: &Instance<T>, x: &[T], n_dir: &[T]) -> Result<LineMinimum<T>> {
    let grad = point_gradient(inst, x)?;
    if n_dir.len() != x.len() {
        return Err(Error::dim("direction length differs from point length"));
    }
    let e = violating_indices(&grad, inst.eta, x);
    let mut in_e = vec![false; x.len()];
    for &i in &e {
        in_e[i] = true;
    }
    for (i, &ni) in n_dir.iter().enumerate() {
        if ni.is_zero() {
            continue;
        }
        if !in_e[i] {
            return Err(Error::invalid(format!(
                "direction moves coordinate {i}, which is not a violating zero"
            )));
        }
        if ni.sign0() == grad[i].sign0() {
            return Err(Error::invalid(format!(
                "direction coordinate {i} has the sign of the gradient"
            )));
        }
    }
    if (linalg::norm2(n_dir) - T::one()).abs() > T::lit(UNIT_TOL) {
        return Err(Error::invalid("direction is not unit length"));
    }

    let (_, gamma) = zeta_gamma(&grad, inst.eta, &e);
    let an = linalg::matvec(&inst.a, n_dir)?;
    let curv = linalg::dot(&an, &an);
    if !(curv > T::zero()) {
        return Err(Error::NullSpaceDirection);
    }
    let gamma_dot_n = linalg::dot(&gamma, n_dir);
    let t_star = -gamma_dot_n / curv;
    let y: Vec<T> = x.iter().zip(n_dir).map(|(&xi, &ni)| xi + t_star * ni).collect();
    Ok(LineMinimum {
        t_star,
        f_x: inst.objective(x)?,
        f_y: inst.objective(&y)?,
        y,
        gamma_dot_n,
    })
}

/// `(F(x) − F(y)) − (−½⟨γ_x, y − x⟩)`, zero at a line minimizer.
pub fn line_identity_residual<T: Scalar>(lm: &LineMinimum<T>) -> T {
    let predicted = -T::lit(0.5) * lm.t_star * lm.gamma_dot_n;
    (lm.f_x - lm.f_y) - predicted
}

/// `(F(x) − F(z)) − (−⟨γ_x, z − x⟩)`; nonpositive whenever `x` is optimal on
/// a working set containing its support and `E` is the violating set of `x`.
pub fn subgradient_inequality_gap<T: Scalar>(
    inst: &Instance<T>,
    x: &[T],
    grad: &[T],
    e: &[usize],
    z: &[T],
) -> Result<T> {
    let (_, gamma) = zeta_gamma(grad, inst.eta, e);
    let diff: Vec<T> = z.iter().zip(x).map(|(&zi, &xi)| zi - xi).collect();
    Ok((inst.objective(x)? - inst.objective(z)?) + linalg::dot(&gamma, &diff))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentReport<T> {
    /// Unit vector supported on `G`.
    pub direction: Vec<T>,
    /// `G`: the `τ` heaviest violators.
    pub g_set: Vec<usize>,
    /// `H`: `G` plus the violators in the reference support.
    pub h_set: Vec<usize>,
    pub cos_bound_required: T,
    pub cos_achieved: T,
    /// Every `i ∈ G` has `cos(s_i, −γ↓H) ≥ 1/sqrt(2(s+τ)·ln τ)`.
    pub premise_holds: bool,
    pub line_min_t: T,
    pub predicted_gain: T,
    /// Number of pairwise combination stages performed.
    pub stages: usize,
    pub early_exit: bool,
    /// The heaviest single axis beat the merged vector and was returned.
    pub used_axis: bool,
}

/// Conical descent direction over the `τ` heaviest violators.
///
/// The signed axes `s_i = −sign(∇f_i)·e_i` of the largest power-of-two prefix
/// of `G` are merged pairwise, `(v_i + v_j)/√2`, until one vector remains or
/// some merged vector is within 60° of `−γ↓H`. If the heaviest single axis
/// is better aligned than the result, that axis is returned instead.
///
/// `exclude` is the set the violators are taken outside of (the working set
/// at an algorithm iterate, or the support for a bare point).
/// `ref_support` stands in for the unobservable optimal support.
#[allow(clippy::too_many_arguments)]
pub fn build_descent<T: Scalar>(
    a: &DenseMatrix<T>,
    grad: &[T],
    eta: T,
    exclude: &[usize],
    tau: usize,
    s_est: usize,
    ref_support: Option<&[usize]>,
) -> Result<DescentReport<T>> {
    if tau < 2 {
        return Err(Error::invalid("descent construction needs tau >= 2"));
    }
    if s_est == 0 {
        return Err(Error::invalid("s_est must be at least 1"));
    }
    if grad.len() != a.cols() {
        return Err(Error::dim("gradient length differs from column count"));
    }
    let violators = dws::violating_set(grad, eta, T::zero(), exclude);
    if violators.len() < tau {
        return Err(Error::invalid(format!(
            "only {} violators for tau = {tau}",
            violators.len()
        )));
    }
    let e: Vec<usize> = violators.iter().map(|w| w.index).collect();
    let (_, gamma) = zeta_gamma(grad, eta, &e);
    let g_ordered: Vec<usize> = e[..tau].to_vec();

    let mut in_h = vec![false; grad.len()];
    for &i in &g_ordered {
        in_h[i] = true;
    }
    if let Some(refs) = ref_support {
        let mut in_e = vec![false; grad.len()];
        for &i in &e {
            in_e[i] = true;
        }
        for &i in refs {
            if i < grad.len() && in_e[i] {
                in_h[i] = true;
            }
        }
    }
    let h_set: Vec<usize> = (0..grad.len()).filter(|&i| in_h[i]).collect();
    let target: Vec<T> = h_set.iter().map(|&i| -gamma[i]).collect();
    let target_norm = linalg::norm2(&target);
    let pos_in_h = |i: usize| h_set.binary_search(&i).expect("G is inside H");

    let tau_t = T::from_usize_lossy(tau);
    let s_t = T::from_usize_lossy(s_est);
    let ln_tau = tau_t.ln();
    let per_axis = T::one() / (T::lit(2.0) * (s_t + tau_t) * ln_tau).sqrt();
    let cos_bound_required = (tau_t / (T::lit(4.0) * (s_t + tau_t) * ln_tau)).sqrt();
    let premise_holds = per_axis <= T::lit(std::f64::consts::FRAC_1_SQRT_2)
        && g_ordered
            .iter()
            .all(|&i| gamma[i].abs() / target_norm >= per_axis);

    // Vectors are kept sparse over positions in H; they have disjoint supports,
    // so each pairwise merge stays unit length.
    let cos_of = |v: &[(usize, T)]| -> T {
        v.iter()
            .map(|&(p, c)| c * target[p])
            .fold(T::zero(), |acc, t| acc + t)
            / target_norm
    };
    let half = T::lit(0.5);
    let width = 1usize << (usize::BITS - 1 - tau.leading_zeros());
    let mut vectors: Vec<Vec<(usize, T)>> = g_ordered[..width]
        .iter()
        .map(|&i| vec![(pos_in_h(i), -grad[i].sign0())])
        .collect();
    let mut stages = 0;
    let heaviest_axis = vectors[0].clone();
    let mut chosen: Option<Vec<(usize, T)>> = None;
    while chosen.is_none() && vectors.len() > 1 {
        stages += 1;
        let root_half = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        vectors = vectors
            .chunks(2)
            .map(|pair| {
                pair[0]
                    .iter()
                    .chain(pair[1].iter())
                    .map(|&(p, c)| (p, c * root_half))
                    .collect()
            })
            .collect();
        chosen = vectors.iter().find(|v| cos_of(v) >= half).cloned();
    }
    let early_exit = chosen.is_some() && vectors.len() > 1;
    let mut combo = chosen.unwrap_or_else(|| vectors.swap_remove(0));
    // The heaviest signed axis is itself a valid conical combination; keep it
    // when it is already better aligned than the merged vector.
    let used_axis = cos_of(&heaviest_axis) > cos_of(&combo);
    if used_axis {
        combo = heaviest_axis;
    }

    let mut direction = vec![T::zero(); grad.len()];
    for &(p, c) in &combo {
        direction[h_set[p]] = c;
    }
    let cos_achieved = cos_of(&combo);

    let an = linalg::matvec(a, &direction)?;
    let curv = linalg::dot(&an, &an);
    if !(curv > T::zero()) {
        return Err(Error::NullSpaceDirection);
    }
    let gamma_dot_n = linalg::dot(&gamma, &direction);
    let line_min_t = -gamma_dot_n / curv;
    Ok(DescentReport {
        direction,
        g_set: {
            let mut g = g_ordered;
            g.sort_unstable();
            g
        },
        h_set,
        cos_bound_required,
        cos_achieved,
        premise_holds,
        line_min_t,
        predicted_gain: gamma_dot_n * gamma_dot_n / (T::lit(2.0) * curv),
        stages,
        early_exit,
        used_axis,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Passed,
    Failed,
    /// Premise of the statement does not hold.
    Skipped,
    /// Final iterate; nothing to compare against.
    Terminal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow<T> {
    pub r: usize,
    pub tau_next: usize,
    pub gap: T,
    pub next_gap: Option<T>,
    pub ratio: Option<T>,
    pub bound: Option<T>,
    pub status: CheckStatus,
    pub note: String,
}

/// Per-iteration check of `(F_{r+1} − F*)/(F_r − F*) ≤ 1 − ετ/(8(s+τ)ln τ)`
/// with `s = |supp(x*)|`, gated on `F_r > F* + ε‖x* − x_r‖²`. Requires a run
/// recorded with history.
pub fn contraction_check<T: Scalar>(
    inst: &Instance<T>,
    run: &RunOutput<T>,
    x_star: &[T],
    eps: T,
) -> Result<Vec<ContractionRow<T>>> {
    if !(eps > T::zero() && eps < T::one()) {
        return Err(Error::invalid("eps must lie in (0, 1)"));
    }
    if run.history.len() != run.trace.len() {
        return Err(Error::invalid("contraction check needs a run with recorded history"));
    }
    let f_star = inst.objective(x_star)?;
    let s_t = T::from_usize_lossy(linalg::support(x_star).len().max(1));
    let f_values: Vec<T> = run
        .history
        .iter()
        .map(|snap| inst.objective(&snap.x))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(f_values.len());
    for (idx, snap) in run.history.iter().enumerate() {
        let tau_next = run.trace[idx].tau_next;
        let gap = f_values[idx] - f_star;
        let mut row = ContractionRow {
            r: run.trace[idx].r,
            tau_next,
            gap,
            next_gap: None,
            ratio: None,
            bound: None,
            status: CheckStatus::Skipped,
            note: String::new(),
        };
        let Some(&f_next) = f_values.get(idx + 1) else {
            row.status = CheckStatus::Terminal;
            row.note = "final iterate".into();
            rows.push(row);
            continue;
        };
        let dist2: T = snap
            .x
            .iter()
            .zip(x_star)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let next_gap = f_next - f_star;
        row.next_gap = Some(next_gap);
        if tau_next < 2 {
            row.note = "tau_next < 2".into();
        } else if !(f_values[idx] > f_star + eps * dist2) {
            row.note = "premise F_r > F* + eps*|x* - x_r|^2 fails".into();
        } else {
            let tau_t = T::from_usize_lossy(tau_next);
            let bound = T::one() - eps * tau_t / (T::lit(8.0) * (s_t + tau_t) * tau_t.ln())
                + T::lit(INEQUALITY_SLACK);
            let ratio = next_gap / gap;
            row.ratio = Some(ratio);
            row.bound = Some(bound);
            row.status = if ratio <= bound {
                CheckStatus::Passed
            } else {
                CheckStatus::Failed
            };
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCheck<T> {
    pub f_star: T,
    pub bound: T,
    pub status: CheckStatus,
}

/// `F(x*) ≥ η‖b‖/4` for a nonzero optimum; skipped when `x* = 0`.
pub fn optimum_lower_bound_check<T: Scalar>(inst: &Instance<T>, x_star: &[T]) -> Result<LowerBoundCheck<T>> {
    let f_star = inst.objective(x_star)?;
    let bound = inst.eta * linalg::norm2(&inst.b) / T::lit(4.0);
    let status = if linalg::support(x_star).is_empty() {
        CheckStatus::Skipped
    } else if f_star >= bound - T::lit(INEQUALITY_SLACK) {
        CheckStatus::Passed
    } else {
        CheckStatus::Failed
    };
    Ok(LowerBoundCheck { f_star, bound, status })
}
