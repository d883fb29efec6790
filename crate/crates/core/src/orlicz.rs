//! Exponential Orlicz (quasi-)norms for discrete laws.
//!
//! The norm of a random variable X is inf{λ > 0 : E exp((|X|/λ)^α) - 1 ≤ 1}.
//! Finiteness of the α-norm means tails decay like exp(-t^α); the α = 1 case
//! covers subexponential variables such as regeneration times. The map
//! λ ↦ E ψ_α(|X|/λ) is strictly decreasing, so the norm is found by bisection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Iteration cap for bracket expansion and bisection.
const MAX_ITER: usize = 200;

#[derive(Debug, Error)]
pub enum OrliczError {
    #[error("alpha must lie in (0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid law: {0}")]
    InvalidLaw(String),
    #[error("bisection failed to converge in {MAX_ITER} iterations; bracket [{lo}, {hi}], residuals [{g_lo}, {g_hi}]")]
    NoConvergence { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },
    #[error("truncation too coarse: tail contribution {tail} exceeds tolerance {tol} at lambda {lambda}")]
    TruncationTooCoarse { tail: f64, tol: f64, lambda: f64 },
}

/// The exponent α of ψ_α. Restricted to (0, 1]: everything downstream
/// (Bernstein-type bounds, regeneration-time assumptions) lives there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrliczIndex(f64);

impl OrliczIndex {
    pub fn new(alpha: f64) -> Result<Self, OrliczError> {
        if alpha.is_finite() && alpha > 0.0 && alpha <= 1.0 {
            Ok(Self(alpha))
        } else {
            Err(OrliczError::AlphaOutOfRange(alpha))
        }
    }

    /// α = 1 (subexponential case).
    pub const ONE: OrliczIndex = OrliczIndex(1.0);

    pub fn get(self) -> f64 {
        self.0
    }
}

/// ψ_α(x) = exp(x^α) - 1 for x ≥ 0.
pub fn psi_alpha(x: f64, alpha: OrliczIndex) -> Result<f64, OrliczError> {
    if !(x >= 0.0) {
        return Err(OrliczError::Domain(format!("psi_alpha needs x >= 0, got {x}")));
    }
    Ok(psi_alpha_raw(x, alpha.get()))
}

#[inline]
fn psi_alpha_raw(x: f64, alpha: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let y = if alpha == 1.0 { x } else { x.powf(alpha) };
    y.exp_m1()
}

/// Certified geometric bound on the mass beyond a truncation point:
/// P(X = n) ≤ coeff · ratio^n for every integer n ≥ from.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeometricTail {
    pub from: u64,
    pub coeff: f64,
    pub ratio: f64,
}

impl GeometricTail {
    /// Upper bound on the total mass beyond the truncation point.
    pub fn mass_bound(&self) -> f64 {
        self.coeff * self.ratio.powi(self.from as i32) / (1.0 - self.ratio)
    }

    /// Upper bound on sum_{n >= from} P(X = n) ψ_α(n/λ).
    /// Uses ψ_α(x) ≤ ψ_1(x) + (e - 1), which is exact slack-free for α = 1.
    fn psi_contribution_bound(&self, alpha: f64, lambda: f64) -> f64 {
        let r_exp = self.ratio * (1.0 / lambda).exp();
        if r_exp >= 1.0 {
            return f64::INFINITY;
        }
        let s1 = self.coeff * r_exp.powi(self.from as i32) / (1.0 - r_exp);
        let s0 = self.coeff * self.ratio.powi(self.from as i32) / (1.0 - self.ratio);
        let base = s1 - s0;
        if alpha == 1.0 {
            base
        } else {
            base + (std::f64::consts::E - 1.0) * self.mass_bound()
        }
    }
}

/// A finitely supported law, optionally truncated with a certified geometric
/// tail bound. Carrier for the laws of |X|, regeneration gaps, etc.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteLaw {
    atoms: Vec<(f64, f64)>,
    tail: Option<GeometricTail>,
}

/// Compensated (Neumaier) summation; keeps million-atom empirical laws honest
/// against the 1e-12 normalization check.
pub(crate) fn neumaier_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl DiscreteLaw {
    /// Exact law from (value, probability) atoms. Probabilities must be
    /// strictly positive and sum to 1 within 1e-12; values must be finite.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self, OrliczError> {
        if atoms.is_empty() {
            return Err(OrliczError::InvalidLaw("no atoms".into()));
        }
        for &(v, p) in &atoms {
            if !v.is_finite() {
                return Err(OrliczError::InvalidLaw(format!("non-finite value {v}")));
            }
            if !(p > 0.0) {
                return Err(OrliczError::InvalidLaw(format!("non-positive probability {p}")));
            }
        }
        let total = neumaier_sum(atoms.iter().map(|a| a.1));
        if (total - 1.0).abs() > 1e-12 {
            return Err(OrliczError::InvalidLaw(format!("probabilities sum to {total}")));
        }
        Ok(Self { atoms, tail: None })
    }

    /// Truncation of an infinite-support law on the nonnegative integers.
    /// The atoms list the retained part; `tail` certifies the discarded mass.
    /// The missing mass (1 - Σ atom probs) must be covered by the tail bound.
    pub fn with_geometric_tail(atoms: Vec<(f64, f64)>, tail: GeometricTail) -> Result<Self, OrliczError> {
        if atoms.is_empty() {
            return Err(OrliczError::InvalidLaw("no atoms".into()));
        }
        if !(tail.ratio > 0.0 && tail.ratio < 1.0) || !(tail.coeff > 0.0) {
            return Err(OrliczError::InvalidLaw(format!(
                "tail bound needs coeff > 0 and ratio in (0,1), got coeff {} ratio {}",
                tail.coeff, tail.ratio
            )));
        }
        for &(v, p) in &atoms {
            if !v.is_finite() || !(p > 0.0) {
                return Err(OrliczError::InvalidLaw(format!("bad atom ({v}, {p})")));
            }
        }
        let total = neumaier_sum(atoms.iter().map(|a| a.1));
        let missing = 1.0 - total;
        if missing < -1e-12 {
            return Err(OrliczError::InvalidLaw(format!("atom mass {total} exceeds 1")));
        }
        if missing > tail.mass_bound() + 1e-12 {
            return Err(OrliczError::InvalidLaw(format!(
                "missing mass {missing} not covered by tail bound {}",
                tail.mass_bound()
            )));
        }
        Ok(Self { atoms, tail: Some(tail) })
    }

    /// Empirical measure of |samples|; duplicate magnitudes are merged.
    pub fn empirical(samples: &[f64]) -> Result<Self, OrliczError> {
        if samples.is_empty() {
            return Err(OrliczError::InvalidLaw("empty sample list".into()));
        }
        let mut mags: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
        if mags.iter().any(|x| !x.is_finite()) {
            return Err(OrliczError::InvalidLaw("non-finite sample".into()));
        }
        mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let w = 1.0 / samples.len() as f64;
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for m in mags {
            match atoms.last_mut() {
                Some(last) if last.0 == m => last.1 += w,
                _ => atoms.push((m, w)),
            }
        }
        // Renormalize the accumulated weights so the 1e-12 invariant holds
        // exactly regardless of sample count.
        let total = neumaier_sum(atoms.iter().map(|a| a.1));
        for a in &mut atoms {
            a.1 /= total;
        }
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn tail(&self) -> Option<&GeometricTail> {
        self.tail.as_ref()
    }

    /// True when the law is the point mass at zero (the a.s.-zero variable).
    pub fn is_zero(&self) -> bool {
        self.tail.is_none() && self.atoms.iter().all(|&(v, _)| v == 0.0)
    }

    /// P(|X| >= t) computed from the retained atoms plus the tail bound.
    pub fn upper_tail(&self, t: f64) -> f64 {
        let s = neumaier_sum(self.atoms.iter().filter(|&&(v, _)| v.abs() >= t).map(|a| a.1));
        let tail = self.tail.map(|tb| tb.mass_bound()).unwrap_or(0.0);
        (s + tail).min(1.0)
    }

    /// E ψ_α(|X|/λ) (upper bound when truncated).
    fn psi_moment(&self, alpha: f64, lambda: f64) -> f64 {
        let body = neumaier_sum(
            self.atoms
                .iter()
                .map(|&(v, p)| p * psi_alpha_raw(v.abs() / lambda, alpha)),
        );
        match self.tail {
            Some(tb) => body + tb.psi_contribution_bound(alpha, lambda),
            None => body,
        }
    }
}

/// A computed (or asserted) value of the ψ_α norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrliczNorm {
    pub value: f64,
    pub alpha: OrliczIndex,
}

/// Solve E ψ_α(|X|/λ) = 1 for λ by bisection with geometric bracket expansion.
///
/// Returns λ with the ψ-moment in [1 - tol, 1 + tol]; the zero law maps to 0.
/// For truncated laws the solved equation includes the certified tail bound,
/// so the reported norm is an upper bracket of the exact one; the tail's
/// contribution at the solution must stay below `tol` or the call errors out.
pub fn orlicz_norm_exact(law: &DiscreteLaw, alpha: OrliczIndex, tol: f64) -> Result<OrliczNorm, OrliczError> {
    if !(tol > 0.0) {
        return Err(OrliczError::Domain(format!("tol must be positive, got {tol}")));
    }
    if law.is_zero() {
        return Ok(OrliczNorm { value: 0.0, alpha });
    }
    let a = alpha.get();
    let max_abs = law
        .atoms
        .iter()
        .map(|&(v, _)| v.abs())
        .fold(0.0f64, f64::max)
        .max(law.tail.map(|tb| tb.from as f64).unwrap_or(0.0));
    debug_assert!(max_abs > 0.0);

    // Single-atom-exact starting guess: lambda = x_max / (ln 2)^{1/alpha}.
    let guess = max_abs / std::f64::consts::LN_2.powf(1.0 / a);
    let g = |lambda: f64| law.psi_moment(a, lambda);

    let mut lo = guess;
    let mut hi = guess;
    let mut iter = 0;
    while g(lo) < 1.0 {
        lo /= 2.0;
        iter += 1;
        if iter > MAX_ITER {
            return Err(OrliczError::NoConvergence { lo, hi, g_lo: g(lo), g_hi: g(hi) });
        }
    }
    iter = 0;
    while g(hi) > 1.0 {
        hi *= 2.0;
        iter += 1;
        if iter > MAX_ITER {
            return Err(OrliczError::NoConvergence { lo, hi, g_lo: g(lo), g_hi: g(hi) });
        }
    }

    // Converge from the g ≤ 1 side: the returned λ is then an upper bracket
    // of the exact norm, so the Chebyshev bound it induces still dominates
    // the exact tail.
    let mut lambda = hi;
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let val = g(mid);
        if val > 1.0 {
            lo = mid;
        } else {
            hi = mid;
            if 1.0 - val <= tol {
                lambda = mid;
                converged = true;
                break;
            }
        }
    }
    if !converged {
        let g_hi = g(hi);
        if 1.0 - g_hi <= tol && g_hi <= 1.0 {
            lambda = hi;
        } else {
            return Err(OrliczError::NoConvergence { lo, hi, g_lo: g(lo), g_hi });
        }
    }
    if let Some(tb) = law.tail {
        let tail = tb.psi_contribution_bound(a, lambda);
        if !(tail <= tol) {
            return Err(OrliczError::TruncationTooCoarse { tail, tol, lambda });
        }
    }
    Ok(OrliczNorm { value: lambda, alpha })
}

/// Plug-in estimator: the exact norm of the empirical measure of |samples|.
/// No bias correction is applied; on heavy-tailed data the estimate is
/// biased downward because the empirical measure misses the unseen tail.
pub fn orlicz_norm_empirical(samples: &[f64], alpha: OrliczIndex, tol: f64) -> Result<OrliczNorm, OrliczError> {
    let law = DiscreteLaw::empirical(samples)?;
    orlicz_norm_exact(&law, alpha, tol)
}

/// Chebyshev-type tail bound from a norm: P(|X| ≥ t) ≤ min(1, 2 exp(-(t/λ)^α)).
/// A zero norm means the a.s.-zero variable, so the tail vanishes for t > 0.
pub fn tail_from_norm(norm: &OrliczNorm, t: f64) -> Result<f64, OrliczError> {
    if !(t >= 0.0) {
        return Err(OrliczError::Domain(format!("t must be nonnegative, got {t}")));
    }
    if norm.value == 0.0 {
        return Ok(if t > 0.0 { 0.0 } else { 1.0 });
    }
    let expo = (t / norm.value).powf(norm.alpha.get());
    Ok((2.0 * (-expo).exp()).min(1.0))
}
