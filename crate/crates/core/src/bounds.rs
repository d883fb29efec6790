//! Closed-form tail bound evaluators.
//!
//! Each evaluator computes one displayed inequality as a function of its
//! parameters, capped at 1. Universal constants that the underlying theorems
//! leave unspecified are resolved through a [`ConstantLedger`]: every bound
//! reads its constants by name, defaults are explicit, and the harness records
//! which entries were defaulted, overridden, or calibrated. Explicit-constant
//! inequalities (Massart, Klein-Rio, the two-term gaussian+exponential bound)
//! keep their published values as defaults.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orlicz::{OrliczIndex, OrliczNorm};

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("missing or invalid parameter: {0}")]
    Validation(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("calibration failed: no constant <= {max_k} dominates the targets (worst deficit {deficit} at t = {at_t})")]
    CalibrationFailed { max_k: f64, deficit: f64, at_t: f64 },
    #[error("unknown bound '{0}'; available: {1}")]
    UnknownBound(String, String),
}

/// Inputs consumed by the bound evaluators. Fields default to the neutral
/// values (η = δ = α = 1, τ = mean_t2 = 1, m = 1, everything else 0); each
/// evaluator validates the subset it actually reads.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundParams {
    /// Sample size n.
    pub n: u64,
    /// Uniform sup-norm bound on the function class.
    pub sup_norm: f64,
    /// Weak variance: sup over the class of the summed second moments.
    pub weak_variance: f64,
    /// Strong parameter: expected supremum of the summed squares.
    pub strong_variance: f64,
    /// Expected supremum of the process (estimated or exact).
    pub mean_z: f64,
    /// η in (0, 1]: multiplier slack on the mean term.
    pub eta: f64,
    /// δ > 0: slack in the gaussian denominator (named to avoid clashing with
    /// the minorization constant).
    pub slack_delta: f64,
    /// Orlicz exponent α in (0, 1].
    pub alpha: f64,
    /// ψ_α norm of max_i sup_f |f(X_i)|.
    pub max_env_norm: f64,
    /// ψ_1 norm bound on the regeneration times (τ ≥ 1).
    pub tau: f64,
    /// Skeleton step m of the minorization condition.
    pub skeleton_m: u64,
    /// Mean regeneration gap E T₂ (in [1, τ]).
    pub mean_t2: f64,
    /// Variance of the block sums Z₁(f) (sup over the class).
    pub var_z1: f64,
    /// Hamming-Lipschitz constant of the statistic.
    pub lipschitz: f64,
    /// Plug-in ψ_α norm of the statistic itself (Chebyshev-from-norm bound).
    pub stat_psi_norm: f64,
    /// ψ₁ norm of one centered summand (Bernstein bound); distinct from the
    /// regeneration-time norm `tau`, which must stay ≥ 1.
    pub summand_psi_norm: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            n: 1,
            sup_norm: 0.0,
            weak_variance: 0.0,
            strong_variance: 0.0,
            mean_z: 0.0,
            eta: 1.0,
            slack_delta: 1.0,
            alpha: 1.0,
            max_env_norm: 0.0,
            tau: 1.0,
            skeleton_m: 1,
            mean_t2: 1.0,
            var_z1: 0.0,
            lipschitz: 1.0,
            stat_psi_norm: 0.0,
            summand_psi_norm: 0.0,
        }
    }
}

impl BoundParams {
    /// Struct-level invariants shared by every evaluator.
    pub fn validate(&self) -> Result<(), BoundError> {
        let nonneg = [
            ("sup_norm", self.sup_norm),
            ("weak_variance", self.weak_variance),
            ("strong_variance", self.strong_variance),
            ("mean_z", self.mean_z),
            ("max_env_norm", self.max_env_norm),
            ("var_z1", self.var_z1),
            ("lipschitz", self.lipschitz),
            ("stat_psi_norm", self.stat_psi_norm),
            ("summand_psi_norm", self.summand_psi_norm),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(BoundError::Validation(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(BoundError::Validation(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if !(self.slack_delta > 0.0) {
            return Err(BoundError::Validation(format!("slack_delta must be positive, got {}", self.slack_delta)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(BoundError::Validation(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.tau >= 1.0) {
            return Err(BoundError::Validation(format!("tau must be >= 1, got {}", self.tau)));
        }
        if !(self.mean_t2 >= 1.0 && self.mean_t2 <= self.tau + 1e-9) {
            return Err(BoundError::Validation(format!(
                "mean_t2 must lie in [1, tau] = [1, {}], got {}",
                self.tau, self.mean_t2
            )));
        }
        if self.skeleton_m == 0 {
            return Err(BoundError::Validation("skeleton_m must be >= 1".into()));
        }
        Ok(())
    }
}

/// Where a constant's value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantSource {
    Default,
    Override,
    Calibrated,
}

/// Named universal constants with overridable values. Entries not present
/// resolve to the evaluator's default (1.0 for unspecified constants, the
/// published value where the theorem states one).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConstantLedger {
    #[serde(default)]
    overrides: BTreeMap<String, f64>,
    #[serde(default)]
    calibrated: BTreeMap<String, bool>,
}

impl ConstantLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.overrides.insert(name.to_string(), value);
        self.calibrated.insert(name.to_string(), false);
    }

    pub fn set_calibrated(&mut self, name: &str, value: f64) {
        self.overrides.insert(name.to_string(), value);
        self.calibrated.insert(name.to_string(), true);
    }

    /// Copy with one entry replaced; used by the calibration search.
    pub fn with(&self, name: &str, value: f64) -> Self {
        let mut out = self.clone();
        out.set(name, value);
        out
    }

    pub fn resolve(&self, name: &str, default: f64) -> f64 {
        self.overrides.get(name).copied().unwrap_or(default)
    }

    pub fn source(&self, name: &str) -> ConstantSource {
        match self.calibrated.get(name) {
            Some(true) => ConstantSource::Calibrated,
            Some(false) => ConstantSource::Override,
            None => ConstantSource::Default,
        }
    }

    pub fn record(&self, name: &str, default: f64) -> ConstantRecord {
        ConstantRecord { value: self.resolve(name, default), source: self.source(name) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantRecord {
    pub value: f64,
    pub source: ConstantSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TalagrandVariant {
    Bennett,
    Bernstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSide {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxiliaryKind {
    InitialBlock,
    LastBlock,
    BlockCountOvershoot,
}

#[inline]
fn cap(x: f64) -> f64 {
    if x.is_nan() {
        1.0
    } else {
        x.min(1.0)
    }
}

fn check_t(t: f64) -> Result<(), BoundError> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(BoundError::Domain(format!("t must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// Functional Bennett / Bernstein inequality for the supremum of a bounded
/// empirical process, in terms of the strong parameter V.
pub fn talagrand_bound(
    p: &BoundParams,
    ledger: &ConstantLedger,
    t: f64,
    variant: TalagrandVariant,
) -> Result<f64, BoundError> {
    p.validate()?;
    check_t(t)?;
    if t == 0.0 {
        let k = match variant {
            TalagrandVariant::Bennett => ledger.resolve("k_talagrand", 1.0),
            TalagrandVariant::Bernstein => ledger.resolve("k1_talagrand", 1.0),
        };
        return Ok(cap(k));
    }
    if !(p.strong_variance > 0.0) {
        return Err(BoundError::Validation("strong_variance must be set (> 0) for t > 0".into()));
    }
    if !(p.sup_norm > 0.0) {
        return Err(BoundError::Validation("sup_norm must be positive".into()));
    }
    let (a, v) = (p.sup_norm, p.strong_variance);
    Ok(match variant {
        TalagrandVariant::Bennett => {
            let k = ledger.resolve("k_talagrand", 1.0);
            cap(k * (-(t / a) * (1.0 + t * a / v).ln() / k).exp())
        }
        TalagrandVariant::Bernstein => {
            let k = ledger.resolve("k1_talagrand", 1.0);
            cap(k * (-t * t / (v + a * t) / k).exp())
        }
    })
}

/// Massart's explicit-constant deviation thresholds. The verified contract is
/// P(Z ≥ upper(t)) ≤ e^{-t} and P(Z ≤ lower(t)) ≤ e^{-t}; this returns the
/// threshold, while [`evaluate`] on the Massart bound ids returns the e^{-t}
/// target curve.
pub fn massart_threshold(
    p: &BoundParams,
    ledger: &ConstantLedger,
    t: f64,
    side: TailSide,
) -> Result<f64, BoundError> {
    p.validate()?;
    check_t(t)?;
    let sigma = p.weak_variance.sqrt();
    let a = p.sup_norm;
    Ok(match side {
        TailSide::Upper => {
            let k1 = ledger.resolve("k_massart_1", 4.0);
            let k2 = ledger.resolve("k_massart_2", 2.5 + 32.0 / p.eta);
            (1.0 + p.eta) * p.mean_z + sigma * (2.0 * k1 * t).sqrt() + k2 * a * t
        }
        TailSide::Lower => {
            let k3 = ledger.resolve("k_massart_3", 5.4);
            let k4 = ledger.resolve("k_massart_4", 2.5 + 43.2 / p.eta);
            (1.0 - p.eta) * p.mean_z - sigma * (2.0 * k3 * t).sqrt() - k4 * a * t
        }
    })
}

/// Klein-Rio deviation bound (best known explicit constants), the same
/// expression for both tails.
pub fn klein_rio_bound(p: &BoundParams, ledger: &ConstantLedger, t: f64) -> Result<f64, BoundError> {
    p.validate()?;
    check_t(t)?;
    if t == 0.0 {
        return Ok(1.0);
    }
    let denom = 2.0 * (p.weak_variance + 2.0 * p.sup_norm * p.mean_z) + 3.0 * p.sup_norm * t;
    if denom == 0.0 {
        return Ok(0.0);
    }
    let k = ledger.resolve("k_klein_rio", 1.0);
    Ok(cap(k * (-t * t / denom).exp()))
}

/// The two addends of the gaussian-plus-exponential consequence of Klein-Rio:
/// exp(-t²/(2(1+δ)σ²)) and exp(-t/(C a)) with C = (1 + 1/δ)(3 + 2/η).
pub fn clt_type_terms(p: &BoundParams, ledger: &ConstantLedger, t: f64) -> Result<(f64, f64), BoundError> {
    p.validate()?;
    check_t(t)?;
    let c = ledger.resolve("c_clt", clt_constant(p.eta, p.slack_delta));
    let gauss = gauss_term(t, p.slack_delta, p.weak_variance);
    let expo = if t == 0.0 {
        1.0
    } else if p.sup_norm == 0.0 {
        0.0
    } else {
        (-t / (c * p.sup_norm)).exp()
    };
    Ok((gauss, expo))
}

/// C(η, δ) from the proof of the gaussian-plus-exponential bound.
pub fn clt_constant(eta: f64, slack_delta: f64) -> f64 {
    (1.0 + 1.0 / slack_delta) * (3.0 + 2.0 / eta)
}

fn gauss_term(t: f64, slack_delta: f64, sigma_sq: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else if sigma_sq == 0.0 {
        0.0
    } else {
        (-t * t / (2.0 * (1.0 + slack_delta) * sigma_sq)).exp()
    }
}

/// P(Z ≥ (1+η)EZ + t) ≤ exp(-t²/(2(1+δ)σ²)) + exp(-t/(Ca)), and the same for
/// the lower tail.
pub fn clt_type_bound(p: &BoundParams, ledger: &ConstantLedger, t: f64) -> Result<f64, BoundError> {
    let (gauss, expo) = clt_type_terms(p, ledger, t)?;
    let k = ledger.resolve("k_clt", 1.0);
    Ok(cap(k * (gauss + expo)))
}

/// The two addends of the unbounded-class tail estimate:
/// exp(-t²/(2(1+δ)σ²)) and 3 exp(-(t/(C·max_env_norm))^α).
pub fn unbounded_class_terms(
    p: &BoundParams,
    ledger: &ConstantLedger,
    t: f64,
) -> Result<(f64, f64), BoundError> {
    p.validate()?;
    check_t(t)?;
    if !(p.max_env_norm > 0.0) {
        return Err(BoundError::Validation(
            "max_env_norm must be positive (psi_alpha norm of the envelope maximum)".into(),
        ));
    }
    let c = ledger.resolve("c_unbounded", 1.0);
    let gauss = gauss_term(t, p.slack_delta, p.weak_variance);
    let psi = if t == 0.0 {
        3.0
    } else {
        3.0 * (-(t / (c * p.max_env_norm)).powf(p.alpha)).exp()
    };
    Ok((gauss, psi))
}

/// Tail estimate for suprema over classes with a ψ_α-integrable envelope:
/// P(Z ≥ (1+η)EZ + t) and P(Z ≤ (1-η)EZ - t) share this bound.
pub fn unbounded_class_bound(
    p: &BoundParams,
    ledger: &ConstantLedger,
    t: f64,
    _side: TailSide,
) -> Result<f64, BoundError> {
    let (gauss, psi) = unbounded_class_terms(p, ledger, t)?;
    Ok(cap(gauss + psi))
}

/// ψ_α norm bound for the supremum: K_α (‖Z‖₁ + ‖max_i sup_f |f(X_i)|‖_{ψ_α}).
pub fn ledoux_talagrand_bound(
    z_mean: f64,
    max_norm: f64,
    alpha: OrliczIndex,
    ledger: &ConstantLedger,
) -> Result<OrliczNorm, BoundError> {
    if !(z_mean >= 0.0 && max_norm >= 0.0) {
        return Err(BoundError::Validation("inputs must be nonnegative".into()));
    }
    let k = ledger.resolve("k_lt", 1.0);
    Ok(OrliczNorm { value: k * (z_mean + max_norm), alpha })
}

/// Maximal inequality for ψ_α norms: ‖max |Y_i|‖ ≤ K_α max ‖Y_i‖ (ln n)^{1/α}.
/// Degenerate at n ≤ 1 (log 1 = 0), so that case is rejected.
pub fn pisier_bound(
    norms: &[OrliczNorm],
    alpha: OrliczIndex,
    ledger: &ConstantLedger,
) -> Result<OrliczNorm, BoundError> {
    if norms.len() < 2 {
        return Err(BoundError::Validation(format!(
            "need at least 2 norms (log 1 = 0 is degenerate), got {}",
            norms.len()
        )));
    }
    if norms.iter().any(|n| n.alpha.get() != alpha.get()) {
        return Err(BoundError::Validation("all norms must share the same alpha".into()));
    }
    let k = ledger.resolve("k_pisier", 1.0);
    let max = norms.iter().map(|n| n.value).fold(0.0f64, f64::max);
    let ln_n = (norms.len() as f64).ln();
    Ok(OrliczNorm { value: k * max * ln_n.powf(1.0 / alpha.get()), alpha })
}

/// Bernstein's inequality for centered ψ₁ summands:
/// P(|ΣY_i| > t) ≤ 2 exp(-(1/K) min(t²/(nτ²), t/τ)).
pub fn bernstein_psi1_bound(n: u64, tau: f64, t: f64, ledger: &ConstantLedger) -> Result<f64, BoundError> {
    check_t(t)?;
    if !(tau > 0.0) {
        return Err(BoundError::Validation(format!("tau must be positive, got {tau}")));
    }
    if n == 0 {
        return Err(BoundError::Validation("n must be >= 1".into()));
    }
    let k = ledger.resolve("k_bernstein", 1.0);
    let nf = n as f64;
    let arg = (t * t / (nf * tau * tau)).min(t / tau);
    Ok(cap(2.0 * (-arg / k).exp()))
}

/// Tail bound for |Σ f(X_i)| over a regenerating chain (any skeleton step m):
/// K exp(-(1/K) min(t²/(n (m E T₂)^{-1} Var Z₁), t/(τ² a m ln n))).
pub fn markov_sum_bound(p: &BoundParams, ledger: &ConstantLedger, t: f64) -> Result<f64, BoundError> {
    p.validate()?;
    check_t(t)?;
    if p.n < 2 {
        return Err(BoundError::Validation("n must be >= 2 (the bound carries a ln n factor)".into()));
    }
    if !(p.sup_norm > 0.0) {
        return Err(BoundError::Validation("sup_norm must be positive".into()));
    }
    let k = ledger.resolve("k_markov_sum", 1.0);
    if t == 0.0 {
        return Ok(cap(k));
    }
    let nf = p.n as f64;
    let m = p.skeleton_m as f64;
    // var_z1 = 0 makes the first ratio +inf; the min then falls through to
    // the second term.
    let arg1 = t * t / (nf * p.var_z1 / (m * p.mean_t2));
    let arg2 = t / (p.tau * p.tau * p.sup_norm * m * nf.ln());
    Ok(cap(k * (-arg1.min(arg2) / k).exp()))
}

/// Tail bound for the empirical-process supremum of an m = 1 chain around
/// K·EZ, valid for t ≥ 1, with σ² the asymptotic weak variance
/// sup_f Var Z₁(f) / E T₂ carried in `weak_variance`.
pub fn markov_empirical_bound(p: &BoundParams, ledger: &ConstantLedger, t: f64) -> Result<f64, BoundError> {
    p.validate()?;
    if p.skeleton_m != 1 {
        return Err(BoundError::Unsupported("the empirical-process bound requires m = 1".into()));
    }
    if !(t >= 1.0) {
        return Err(BoundError::Validation(format!("the bound is stated for t >= 1, got {t}")));
    }
    if p.n < 2 {
        return Err(BoundError::Validation("n must be >= 2".into()));
    }
    if !(p.sup_norm > 0.0) {
        return Err(BoundError::Validation("sup_norm must be positive".into()));
    }
    let k = ledger.resolve("k_markov_emp", 1.0);
    let nf = p.n as f64;
    let arg1 = t * t / (nf * p.weak_variance);
    let arg2 = t * p.mean_t2 / (p.tau.powi(3) * p.sup_norm * nf.ln());
    Ok(cap(k * (-arg1.min(arg2) / k).exp()))
}

/// Bounded-difference inequality for symmetric Hamming-Lipschitz statistics
/// of an m = 1 chain: 2 exp(-(1/K) t²/(n L² τ²)).
pub fn bounded_difference_bound(p: &BoundParams, ledger: &ConstantLedger, t: f64) -> Result<f64, BoundError> {
    p.validate()?;
    check_t(t)?;
    if p.skeleton_m != 1 {
        return Err(BoundError::Unsupported("the bounded-difference bound requires m = 1".into()));
    }
    if !(p.lipschitz > 0.0) {
        return Err(BoundError::Validation("lipschitz must be positive".into()));
    }
    let k = ledger.resolve("k_bdd_diff", 1.0);
    let nf = p.n as f64;
    Ok(cap(2.0 * (-t * t / (nf * p.lipschitz * p.lipschitz * p.tau * p.tau) / k).exp()))
}

/// Auxiliary block bounds: the initial block |Z₀|, the trailing segment
/// length, and the overshoot of the complete-block count N.
pub fn auxiliary_bound(
    p: &BoundParams,
    ledger: &ConstantLedger,
    t: f64,
    which: AuxiliaryKind,
) -> Result<f64, BoundError> {
    p.validate()?;
    check_t(t)?;
    let m = p.skeleton_m as f64;
    Ok(match which {
        AuxiliaryKind::InitialBlock => {
            if !(p.sup_norm > 0.0) {
                return Err(BoundError::Validation("sup_norm must be positive".into()));
            }
            let k = ledger.resolve("k_initial_block", 1.0);
            cap(k * 2.0 * (-t / (2.0 * p.sup_norm * m * p.tau)).exp())
        }
        AuxiliaryKind::LastBlock => {
            if !(p.sup_norm > 0.0) {
                return Err(BoundError::Validation("sup_norm must be positive".into()));
            }
            let k = ledger.resolve("k_last_block", 1.0);
            // ln τ is floored at 1 for τ < e so the bound stays well defined
            // over the whole admissible range τ ≥ 1.
            let log_tau = p.tau.ln().max(1.0);
            cap(k * (-t / (k * p.sup_norm * m * p.tau * log_tau)).exp())
        }
        AuxiliaryKind::BlockCountOvershoot => {
            // P(N > floor(3n/(m E T₂))): depends on n only, t is ignored.
            let k = ledger.resolve("k_block_overshoot", 1.0);
            let arg = (p.n as f64) * p.mean_t2 / (m * p.tau * p.tau);
            cap(k * (-arg / k).exp())
        }
    })
}

/// Chebyshev-from-norm: P(|X| ≥ t) ≤ 2 exp(-(t/‖X‖)^α) with a plug-in norm.
pub fn orlicz_chebyshev_bound(p: &BoundParams, ledger: &ConstantLedger, t: f64) -> Result<f64, BoundError> {
    p.validate()?;
    check_t(t)?;
    let k = ledger.resolve("k_orlicz_cheb", 1.0);
    if p.stat_psi_norm == 0.0 {
        return Ok(if t > 0.0 { 0.0 } else { 1.0 });
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    Ok(cap(k * 2.0 * (-(t / p.stat_psi_norm).powf(p.alpha)).exp()))
}

/// Maximal inequality: P(max_k ‖S_k‖ > t) ≤ K P(‖S_n‖ > t/K); `sum_tail`
/// supplies the (empirical or exact) tail of the full sum.
pub fn montgomery_smith_bound(
    sum_tail: impl Fn(f64) -> f64,
    t: f64,
    ledger: &ConstantLedger,
) -> Result<f64, BoundError> {
    check_t(t)?;
    let k = ledger.resolve("k_montgomery_smith", 1.0);
    Ok(cap(k * sum_tail(t / k)))
}

/// Identity of a bound evaluator; the harness keys experiments, reports, and
/// calibration on this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundId {
    TalagrandBennett,
    TalagrandBernstein,
    MassartUpper,
    MassartLower,
    KleinRio,
    KleinRioLower,
    CltType,
    CltTypeLower,
    UnboundedClassUpper,
    UnboundedClassLower,
    BernsteinPsi1,
    MarkovSum,
    MarkovEmpirical,
    BoundedDifference,
    InitialBlock,
    LastBlock,
    BlockCountOvershoot,
    OrliczChebyshev,
    MontgomerySmith,
}

impl BoundId {
    pub const ALL: [BoundId; 19] = [
        BoundId::TalagrandBennett,
        BoundId::TalagrandBernstein,
        BoundId::MassartUpper,
        BoundId::MassartLower,
        BoundId::KleinRio,
        BoundId::KleinRioLower,
        BoundId::CltType,
        BoundId::CltTypeLower,
        BoundId::UnboundedClassUpper,
        BoundId::UnboundedClassLower,
        BoundId::BernsteinPsi1,
        BoundId::MarkovSum,
        BoundId::MarkovEmpirical,
        BoundId::BoundedDifference,
        BoundId::InitialBlock,
        BoundId::LastBlock,
        BoundId::BlockCountOvershoot,
        BoundId::OrliczChebyshev,
        BoundId::MontgomerySmith,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundId::TalagrandBennett => "talagrand_bennett",
            BoundId::TalagrandBernstein => "talagrand_bernstein",
            BoundId::MassartUpper => "massart_upper",
            BoundId::MassartLower => "massart_lower",
            BoundId::KleinRio => "klein_rio",
            BoundId::KleinRioLower => "klein_rio_lower",
            BoundId::CltType => "clt_type",
            BoundId::CltTypeLower => "clt_type_lower",
            BoundId::UnboundedClassUpper => "unbounded_class_upper",
            BoundId::UnboundedClassLower => "unbounded_class_lower",
            BoundId::BernsteinPsi1 => "bernstein_psi1",
            BoundId::MarkovSum => "markov_sum",
            BoundId::MarkovEmpirical => "markov_empirical",
            BoundId::BoundedDifference => "bounded_difference",
            BoundId::InitialBlock => "initial_block",
            BoundId::LastBlock => "last_block",
            BoundId::BlockCountOvershoot => "block_count_overshoot",
            BoundId::OrliczChebyshev => "orlicz_chebyshev",
            BoundId::MontgomerySmith => "montgomery_smith",
        }
    }

    pub fn parse(s: &str) -> Result<Self, BoundError> {
        Self::ALL
            .iter()
            .copied()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|b| b.name()).collect();
                BoundError::UnknownBound(s.to_string(), names.join(", "))
            })
    }

    /// The single scalar knob the calibration search turns for this bound.
    pub fn knob(self) -> &'static str {
        match self {
            BoundId::TalagrandBennett => "k_talagrand",
            BoundId::TalagrandBernstein => "k1_talagrand",
            BoundId::MassartUpper | BoundId::MassartLower => "k_massart_tail",
            BoundId::KleinRio | BoundId::KleinRioLower => "k_klein_rio",
            BoundId::CltType | BoundId::CltTypeLower => "k_clt",
            BoundId::UnboundedClassUpper | BoundId::UnboundedClassLower => "c_unbounded",
            BoundId::BernsteinPsi1 => "k_bernstein",
            BoundId::MarkovSum => "k_markov_sum",
            BoundId::MarkovEmpirical => "k_markov_emp",
            BoundId::BoundedDifference => "k_bdd_diff",
            BoundId::InitialBlock => "k_initial_block",
            BoundId::LastBlock => "k_last_block",
            BoundId::BlockCountOvershoot => "k_block_overshoot",
            BoundId::OrliczChebyshev => "k_orlicz_cheb",
            BoundId::MontgomerySmith => "k_montgomery_smith",
        }
    }

    /// Ledger entries this bound reads, with their defaults, for reporting.
    pub fn constants(self, p: &BoundParams) -> Vec<(&'static str, f64)> {
        match self {
            BoundId::TalagrandBennett => vec![("k_talagrand", 1.0)],
            BoundId::TalagrandBernstein => vec![("k1_talagrand", 1.0)],
            BoundId::MassartUpper => vec![
                ("k_massart_1", 4.0),
                ("k_massart_2", 2.5 + 32.0 / p.eta),
                ("k_massart_tail", 1.0),
            ],
            BoundId::MassartLower => vec![
                ("k_massart_3", 5.4),
                ("k_massart_4", 2.5 + 43.2 / p.eta),
                ("k_massart_tail", 1.0),
            ],
            BoundId::KleinRio | BoundId::KleinRioLower => vec![("k_klein_rio", 1.0)],
            BoundId::CltType | BoundId::CltTypeLower => {
                vec![("c_clt", clt_constant(p.eta, p.slack_delta)), ("k_clt", 1.0)]
            }
            BoundId::UnboundedClassUpper | BoundId::UnboundedClassLower => {
                vec![("c_unbounded", 1.0)]
            }
            BoundId::BernsteinPsi1 => vec![("k_bernstein", 1.0)],
            BoundId::MarkovSum => vec![("k_markov_sum", 1.0)],
            BoundId::MarkovEmpirical => vec![("k_markov_emp", 1.0), ("k_markov_emp_mean", 1.0)],
            BoundId::BoundedDifference => vec![("k_bdd_diff", 1.0)],
            BoundId::InitialBlock => vec![("k_initial_block", 1.0)],
            BoundId::LastBlock => vec![("k_last_block", 1.0)],
            BoundId::BlockCountOvershoot => vec![("k_block_overshoot", 1.0)],
            BoundId::OrliczChebyshev => vec![("k_orlicz_cheb", 1.0)],
            BoundId::MontgomerySmith => vec![("k_montgomery_smith", 1.0)],
        }
    }

    pub fn constants_report(self, p: &BoundParams, ledger: &ConstantLedger) -> BTreeMap<String, ConstantRecord> {
        self.constants(p)
            .into_iter()
            .map(|(name, default)| (name.to_string(), ledger.record(name, default)))
            .collect()
    }
}

/// Evaluate a bound curve value at t. Massart ids return the e^{-t} target
/// curve (their thresholds live in [`massart_threshold`]); Montgomery-Smith
/// needs an empirical sum tail and is not evaluable through this entry point.
pub fn evaluate(id: BoundId, p: &BoundParams, ledger: &ConstantLedger, t: f64) -> Result<f64, BoundError> {
    match id {
        BoundId::TalagrandBennett => talagrand_bound(p, ledger, t, TalagrandVariant::Bennett),
        BoundId::TalagrandBernstein => talagrand_bound(p, ledger, t, TalagrandVariant::Bernstein),
        BoundId::MassartUpper | BoundId::MassartLower => {
            p.validate()?;
            check_t(t)?;
            Ok(cap(ledger.resolve("k_massart_tail", 1.0) * (-t).exp()))
        }
        BoundId::KleinRio | BoundId::KleinRioLower => klein_rio_bound(p, ledger, t),
        BoundId::CltType | BoundId::CltTypeLower => clt_type_bound(p, ledger, t),
        BoundId::UnboundedClassUpper => unbounded_class_bound(p, ledger, t, TailSide::Upper),
        BoundId::UnboundedClassLower => unbounded_class_bound(p, ledger, t, TailSide::Lower),
        BoundId::BernsteinPsi1 => bernstein_psi1_bound(p.n, p.summand_psi_norm, t, ledger),
        BoundId::MarkovSum => markov_sum_bound(p, ledger, t),
        BoundId::MarkovEmpirical => markov_empirical_bound(p, ledger, t),
        BoundId::BoundedDifference => bounded_difference_bound(p, ledger, t),
        BoundId::InitialBlock => auxiliary_bound(p, ledger, t, AuxiliaryKind::InitialBlock),
        BoundId::LastBlock => auxiliary_bound(p, ledger, t, AuxiliaryKind::LastBlock),
        BoundId::BlockCountOvershoot => auxiliary_bound(p, ledger, t, AuxiliaryKind::BlockCountOvershoot),
        BoundId::OrliczChebyshev => orlicz_chebyshev_bound(p, ledger, t),
        BoundId::MontgomerySmith => Err(BoundError::Unsupported(
            "montgomery_smith needs an empirical sum tail; evaluate via montgomery_smith_bound".into(),
        )),
    }
}

/// An evaluated bound curve. Points must be capped probabilities and
/// nonincreasing in t.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCurve {
    pub evaluator: BoundId,
    pub points: Vec<(f64, f64)>,
}

impl BoundCurve {
    pub fn new(evaluator: BoundId, points: Vec<(f64, f64)>) -> Result<Self, BoundError> {
        let mut prev: Option<(f64, f64)> = None;
        for &(t, b) in &points {
            if !(0.0..=1.0).contains(&b) {
                return Err(BoundError::Domain(format!("bound {b} at t = {t} outside [0, 1]")));
            }
            if let Some((pt, pb)) = prev {
                if t <= pt {
                    return Err(BoundError::Domain(format!("grid not strictly increasing at t = {t}")));
                }
                if b > pb + 1e-12 {
                    return Err(BoundError::Domain(format!(
                        "curve increases from {pb} to {b} between t = {pt} and t = {t}"
                    )));
                }
            }
            prev = Some((t, b));
        }
        Ok(Self { evaluator, points })
    }
}

/// One Monte Carlo constraint for the calibration search: the bound at `t`
/// must dominate `p_hat + 3 se`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub t: f64,
    pub p_hat: f64,
    pub se: f64,
}

/// Calibration slack in standard errors (keeps false failures per grid point
/// around the 0.1% level).
pub const CALIBRATION_SE_SLACK: f64 = 3.0;

const CALIBRATION_K_MIN: f64 = 0.01;
const CALIBRATION_K_MAX: f64 = 1000.0;
const CALIBRATION_K_FACTOR: f64 = 1.05;

/// Smallest constant on the multiplicative grid {0.01 · 1.05^j} ∩ [0.01, 1000]
/// for which `bound_at(k, t) ≥ p_hat + 3 se` at every target. All evaluators
/// are nondecreasing in their knob, so the first hit is the minimum.
pub fn calibrate_search(
    bound_at: impl Fn(f64, f64) -> f64,
    targets: &[CalibrationTarget],
) -> Result<f64, BoundError> {
    if targets.is_empty() {
        return Err(BoundError::Validation("calibration needs a nonempty grid".into()));
    }
    let mut k = CALIBRATION_K_MIN;
    let mut worst = (f64::INFINITY, 0.0f64);
    while k <= CALIBRATION_K_MAX {
        let mut ok = true;
        for target in targets {
            let need = target.p_hat + CALIBRATION_SE_SLACK * target.se;
            let have = bound_at(k, target.t);
            if have < need {
                ok = false;
                let deficit = need - have;
                if deficit > worst.1 {
                    worst = (target.t, deficit);
                }
                break;
            }
        }
        if ok {
            return Ok(k);
        }
        k *= CALIBRATION_K_FACTOR;
    }
    Err(BoundError::CalibrationFailed { max_k: CALIBRATION_K_MAX, deficit: worst.1, at_t: worst.0 })
}
