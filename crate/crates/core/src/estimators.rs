//! Regeneration-based estimators: empirical-process suprema, block means and
//! variances, the asymptotic variance, and the truncation diagnostics used by
//! the unbounded-class machinery.
//!
//! Countable function classes are represented by finite surrogates. The
//! countability assumption in the underlying theory is a measurability
//! device and none of the bounds depend on the class size, so a finite list
//! loses nothing that Monte Carlo could see.

use std::sync::Arc;

use thiserror::Error;

use crate::chain::{RegenDecomposition, SplitTrajectory};
use crate::orlicz::{orlicz_norm_empirical, OrliczError, OrliczIndex, OrliczNorm};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("function class must be nonempty")]
    EmptyClass,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Orlicz(#[from] OrliczError),
}

type StateFn<S> = Arc<dyn Fn(&S) -> f64 + Send + Sync>;

/// A finite, named list of functions on the state space, optionally with a
/// uniform sup-norm bound (absent for unbounded classes).
#[derive(Clone)]
pub struct FunctionClass<S> {
    names: Vec<String>,
    funcs: Vec<StateFn<S>>,
    sup_bound: Option<f64>,
}

impl<S> std::fmt::Debug for FunctionClass<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FunctionClass")
            .field("names", &self.names)
            .field("sup_bound", &self.sup_bound)
            .finish()
    }
}

impl<S> FunctionClass<S> {
    pub fn new(items: Vec<(String, StateFn<S>)>, sup_bound: Option<f64>) -> Result<Self, EstimatorError> {
        if items.is_empty() {
            return Err(EstimatorError::EmptyClass);
        }
        let (names, funcs) = items.into_iter().unzip();
        Ok(Self { names, funcs, sup_bound })
    }

    pub fn singleton(name: &str, f: impl Fn(&S) -> f64 + Send + Sync + 'static, sup_bound: Option<f64>) -> Self {
        Self {
            names: vec![name.to_string()],
            funcs: vec![Arc::new(f)],
            sup_bound,
        }
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn sup_bound(&self) -> Option<f64> {
        self.sup_bound
    }

    #[inline]
    pub fn eval(&self, idx: usize, s: &S) -> f64 {
        let v = (self.funcs[idx])(s);
        if let Some(bound) = self.sup_bound {
            debug_assert!(v.abs() <= bound + 1e-12, "|f(x)| = {v} violates sup bound {bound}");
        }
        v
    }

    /// Envelope sup_f |f(s)| at one state.
    pub fn envelope(&self, s: &S) -> f64 {
        (0..self.len()).map(|i| self.eval(i, s).abs()).fold(0.0, f64::max)
    }
}

/// Build a class from per-state value tables (finite chains).
pub fn class_from_state_values(
    named_rows: Vec<(String, Vec<f64>)>,
    sup_bound: Option<f64>,
) -> Result<FunctionClass<usize>, EstimatorError> {
    let items = named_rows
        .into_iter()
        .map(|(name, values)| {
            let f: StateFn<usize> = Arc::new(move |s: &usize| values[*s]);
            (name, f)
        })
        .collect();
    FunctionClass::new(items, sup_bound)
}

/// Per-function sums Σ_i f(X_i) in one pass over the states.
pub fn path_sums<S>(states: &[S], class: &FunctionClass<S>) -> Vec<f64> {
    let mut sums = vec![0.0; class.len()];
    for s in states {
        for (i, acc) in sums.iter_mut().enumerate() {
            *acc += class.eval(i, s);
        }
    }
    sums
}

/// Z = sup_f |Σ_i f(X_i)|.
pub fn empirical_process_sup<S>(states: &[S], class: &FunctionClass<S>) -> Result<f64, EstimatorError> {
    if class.is_empty() {
        return Err(EstimatorError::EmptyClass);
    }
    Ok(path_sums(states, class).iter().fold(0.0, |m, s| m.max(s.abs())))
}

/// Signed variant sup_f Σ_i f(X_i) (the one-sided deviation statistics).
pub fn empirical_process_sup_signed<S>(states: &[S], class: &FunctionClass<S>) -> Result<f64, EstimatorError> {
    if class.is_empty() {
        return Err(EstimatorError::EmptyClass);
    }
    Ok(path_sums(states, class).iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s)))
}

/// Pooled block statistics for one function.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FnBlockStats {
    pub name: String,
    pub mean_z1: f64,
    pub var_z1: f64,
    pub cov_z1z2: f64,
}

/// Block statistics pooled over complete blocks of many trajectories.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BlockStats {
    pub block_count: usize,
    pub mean_t2: f64,
    pub per_function: Vec<FnBlockStats>,
    /// sup_f Var Z₁(f) / E T₂, the asymptotic weak variance driving the
    /// empirical-process bound for m = 1 chains.
    pub sigma_sq_class: f64,
}

/// Pool complete blocks across trajectories: unbiased variance of Z₁(f) per
/// function, lag-1 covariance from within-trajectory consecutive pairs only
/// (blocks are one-dependent within a path, independent across), and the
/// mean regeneration gap from the stationary gaps T₂..T_{N+1}.
///
/// Trajectories are pooled in seed order so the output does not depend on
/// the order of the input list. Incomplete pieces (the initial segment and
/// the remainder) never enter.
pub fn block_statistics<S>(
    items: &[(SplitTrajectory<S>, RegenDecomposition)],
    class: &FunctionClass<S>,
) -> Result<BlockStats, EstimatorError> {
    if class.is_empty() {
        return Err(EstimatorError::EmptyClass);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by_key(|&i| (items[i].0.seed, items[i].0.len()));

    let mut gap_sum = 0.0f64;
    let mut gap_count = 0usize;
    // Per function: pooled block sums and within-trajectory consecutive pairs.
    let nf = class.len();
    let mut all_blocks: Vec<Vec<f64>> = vec![Vec::new(); nf];
    let mut pairs: Vec<Vec<(f64, f64)>> = vec![Vec::new(); nf];

    for &idx in &order {
        let (traj, decomp) = &items[idx];
        if decomp.n != traj.len() {
            return Err(EstimatorError::Mismatch(format!(
                "decomposition n = {} vs trajectory length {}",
                decomp.n,
                traj.len()
            )));
        }
        for &g in decomp.complete_block_gaps() {
            gap_sum += g as f64;
            gap_count += 1;
        }
        if decomp.block_ranges.is_empty() {
            continue;
        }
        let mut per_fn_blocks: Vec<Vec<f64>> = vec![Vec::with_capacity(decomp.block_ranges.len()); nf];
        for &(start, end) in &decomp.block_ranges {
            let states = &traj.states[start - 1..end];
            for (i, blocks) in per_fn_blocks.iter_mut().enumerate() {
                blocks.push(states.iter().map(|s| class.eval(i, s)).sum());
            }
        }
        for i in 0..nf {
            for w in per_fn_blocks[i].windows(2) {
                pairs[i].push((w[0], w[1]));
            }
            all_blocks[i].append(&mut per_fn_blocks[i]);
        }
    }

    let block_count = all_blocks[0].len();
    if block_count < 2 {
        return Err(EstimatorError::InsufficientData(format!(
            "need at least 2 complete blocks pooled, got {block_count}"
        )));
    }
    let mean_t2 = gap_sum / gap_count as f64;

    let mut per_function = Vec::with_capacity(nf);
    let mut max_var = 0.0f64;
    for i in 0..nf {
        let blocks = &all_blocks[i];
        let m = blocks.len() as f64;
        let mean = blocks.iter().sum::<f64>() / m;
        let var = blocks.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let cov = if pairs[i].len() >= 2 {
            let p = pairs[i].len() as f64;
            pairs[i].iter().map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / (p - 1.0)
        } else {
            0.0
        };
        max_var = max_var.max(var);
        per_function.push(FnBlockStats {
            name: class.names()[i].clone(),
            mean_z1: mean,
            var_z1: var,
            cov_z1z2: cov,
        });
    }

    Ok(BlockStats {
        block_count,
        mean_t2,
        per_function,
        sigma_sq_class: max_var / mean_t2,
    })
}

/// Asymptotic variance of n^{-1/2} Σ f(X_i) from block statistics:
/// (m E T₂)^{-1}(Var Z₁ + E Z₁Z₂), which for m = 1 reduces to
/// (E T₂)^{-1} Var Z₁ (independent blocks drop the covariance term).
pub fn asymptotic_variance(stats: &BlockStats, m: u64) -> Vec<(String, f64)> {
    stats
        .per_function
        .iter()
        .map(|f| {
            let v = if m == 1 {
                f.var_z1 / stats.mean_t2
            } else {
                (f.var_z1 + f.cov_z1z2) / (m as f64 * stats.mean_t2)
            };
            (f.name.clone(), v.max(0.0))
        })
        .collect()
}

/// Diagnostics of the truncation step behind the unbounded-class bound.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TruncationReport {
    /// ρ = 8 Ê max_i sup_f |f(X_i)|, estimated on the first half of the
    /// replications.
    pub rho: f64,
    /// P̂(max_i sup_f |f(X_i)| > ρ) on the second half.
    pub exceed_prob: f64,
    pub exceed_se: f64,
    /// The Chebyshev step of the truncation argument: exceedance must stay
    /// below 1/8 (plus Monte Carlo slack).
    pub chebyshev_ok: bool,
    /// Ê sup over the clipped-away parts |Σ f·1{envelope > ρ}|.
    pub f2_mean: f64,
    pub f2_se: f64,
    /// 8 Ê max-sup + slack: the Hoffmann-Jorgensen consequence.
    pub f2_limit: f64,
    pub hj_ok: bool,
}

/// Split the replications in half: the first half fixes ρ, the second half
/// measures the exceedance probability and the mean of the clipped-away
/// supremum. A degenerate all-zero class yields ρ = 0 with vacuously passing
/// diagnostics.
pub fn truncation_split<S>(
    replications: &[Vec<S>],
    class: &FunctionClass<S>,
) -> Result<TruncationReport, EstimatorError> {
    if class.is_empty() {
        return Err(EstimatorError::EmptyClass);
    }
    if replications.len() < 2 {
        return Err(EstimatorError::InsufficientData(
            "need at least 2 replications (one per half)".into(),
        ));
    }
    let half = replications.len() / 2;
    let (cal, meas) = replications.split_at(half);

    let max_sup = |states: &Vec<S>| -> f64 {
        states.iter().map(|s| class.envelope(s)).fold(0.0, f64::max)
    };

    let cal_vals: Vec<f64> = cal.iter().map(max_sup).collect();
    let cal_mean = cal_vals.iter().sum::<f64>() / cal_vals.len() as f64;
    let cal_var = if cal_vals.len() > 1 {
        cal_vals.iter().map(|v| (v - cal_mean).powi(2)).sum::<f64>() / (cal_vals.len() as f64 - 1.0)
    } else {
        0.0
    };
    let cal_se = (cal_var / cal_vals.len() as f64).sqrt();
    let rho = 8.0 * cal_mean;

    let mut exceed = 0u64;
    let mut f2_vals: Vec<f64> = Vec::with_capacity(meas.len());
    for states in meas {
        if max_sup(states) > rho {
            exceed += 1;
        }
        // sup_f |Σ_i f(X_i) 1{envelope(X_i) > ρ}|.
        let mut sums = vec![0.0; class.len()];
        for s in states.iter().filter(|s| class.envelope(s) > rho) {
            for (i, acc) in sums.iter_mut().enumerate() {
                *acc += class.eval(i, s);
            }
        }
        f2_vals.push(sums.iter().fold(0.0, |m, s| m.max(s.abs())));
    }
    let m = meas.len() as f64;
    let exceed_prob = exceed as f64 / m;
    let exceed_se = (exceed_prob * (1.0 - exceed_prob) / m).sqrt();
    let f2_mean = f2_vals.iter().sum::<f64>() / m;
    let f2_var = f2_vals.iter().map(|v| (v - f2_mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    let f2_se = (f2_var / m).sqrt();
    let f2_limit = rho + 3.0 * (f2_se + 8.0 * cal_se);

    Ok(TruncationReport {
        rho,
        exceed_prob,
        exceed_se,
        chebyshev_ok: exceed_prob <= 0.125 + 3.0 * exceed_se,
        f2_mean,
        f2_se,
        f2_limit,
        hj_ok: f2_mean <= f2_limit,
    })
}

/// Empirical ψ_α norm of max_i sup_f |f(X_i)| over replications.
pub fn max_sup_norm<S>(
    replications: &[Vec<S>],
    class: &FunctionClass<S>,
    alpha: OrliczIndex,
    tol: f64,
) -> Result<OrliczNorm, EstimatorError> {
    if class.is_empty() {
        return Err(EstimatorError::EmptyClass);
    }
    let maxima: Vec<f64> = replications
        .iter()
        .map(|states| states.iter().map(|s| class.envelope(s)).fold(0.0, f64::max))
        .collect();
    Ok(orlicz_norm_empirical(&maxima, alpha, tol)?)
}
