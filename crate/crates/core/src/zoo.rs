//! Concrete chains: the countable loop chain, the heavy-atom i.i.d.
//! counterexample sequence, the two-state test chain, and a drift-condition
//! checker.
//!
//! The loop chain is a particle at an origin attached to countably many
//! loops; from the origin it picks loop n with probability e^{-n}/A
//! (A = Σ e^{-n} = 1/(e-1)) and a sign, then walks the loop
//! deterministically back to the origin. It regenerates at every origin
//! visit (C = {origin}, δ = 1, ν = the origin row, m = 1), is geometrically
//! but not uniformly ergodic, and has closed forms for everything the
//! estimators target.
//!
//! One bookkeeping convention matters. The flag-to-flag regeneration gap for
//! this chain is loop length plus one (the step that re-enters the origin),
//! so E[gap] = 1 + 1/(1 - e^{-1}) = 1/π₀, consistent with the stationary
//! mass at the origin. The loop length itself (the sojourn outside the
//! origin, gap minus one) has law P(L = n) = e^{-n}/A and mean
//! 1/(1 - e^{-1}); both views are exposed below.

use serde::{Deserialize, Serialize};

use crate::chain::{ChainError, FiniteChain, MinorizationCert, SplitKernel, SplitTrajectory};
use crate::orlicz::{orlicz_norm_exact, DiscreteLaw, GeometricTail, OrliczIndex, OrliczNorm};
use crate::rng::{sample_bernoulli, sample_geometric, unit_f64, SimRng};

/// A = Σ_{n≥1} e^{-n} = 1/(e - 1).
pub fn loop_a_const() -> f64 {
    1.0 / (std::f64::consts::E - 1.0)
}

/// Σ_{n≥1} n e^{-n} = e/(e - 1)².
pub fn loop_sum_n_exp() -> f64 {
    std::f64::consts::E / (std::f64::consts::E - 1.0).powi(2)
}

/// State of the loop chain: the origin or position k of 1..n inside the
/// signed loop of length n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoopState {
    Origin,
    Loop { len: u64, pos: u64, sign: i8 },
}

/// The lazily countable loop chain. Simulation needs no truncation: the loop
/// index is drawn by exact inverse CDF of its geometric law. Truncation
/// enters only through [`LoopChain::truncated`] for dense linear algebra.
#[derive(Debug, Clone, Copy)]
pub struct LoopChain {
    start_at_origin: bool,
}

impl Default for LoopChain {
    fn default() -> Self {
        Self::new()
    }
}

impl LoopChain {
    /// Chain started from ν (a fresh regeneration), under which the first
    /// gap is distributed like all later ones.
    pub fn new() -> Self {
        Self { start_at_origin: false }
    }

    /// Chain started at the origin itself.
    pub fn starting_at_origin() -> Self {
        Self { start_at_origin: true }
    }

    fn sample_loop_entry(&self, rng: &mut SimRng) -> LoopState {
        // P(len = n) = e^{-n}/A is geometric with ratio e^{-1}.
        let len = sample_geometric(rng, (-1.0f64).exp());
        let sign = if sample_bernoulli(rng, 0.5) { 1 } else { -1 };
        LoopState::Loop { len, pos: 1, sign }
    }

    /// π at the origin: A/(A + Σ n e^{-n}) = (e - 1)/(2e - 1).
    pub fn pi_origin(&self) -> f64 {
        (std::f64::consts::E - 1.0) / (2.0 * std::f64::consts::E - 1.0)
    }

    /// π of one loop state (len = n, any position, either sign).
    pub fn pi_loop_state(&self, len: u64) -> f64 {
        (-(len as f64)).exp() / (2.0 * loop_a_const()) * self.pi_origin()
    }

    /// Mean loop length Σ n e^{-n} / A = 1/(1 - e^{-1}).
    pub fn mean_loop_length(&self) -> f64 {
        1.0 / (1.0 - (-1.0f64).exp())
    }

    /// Mean flag-to-flag regeneration gap: loop length plus the re-entry
    /// step, equal to 1/π(origin).
    pub fn mean_gap(&self) -> f64 {
        1.0 + self.mean_loop_length()
    }

    /// Law of the loop length (sojourn outside the origin between
    /// regenerations): P(L = n) = e^{-n}/A, truncated with a certified tail.
    pub fn loop_length_law(&self, n_top: u64) -> Result<DiscreteLaw, ChainError> {
        let a = loop_a_const();
        let atoms: Vec<(f64, f64)> =
            (1..=n_top).map(|n| (n as f64, (-(n as f64)).exp() / a)).collect();
        let tail = GeometricTail { from: n_top + 1, coeff: 1.0 / a, ratio: (-1.0f64).exp() };
        DiscreteLaw::with_geometric_tail(atoms, tail)
            .map_err(|e| ChainError::InvalidChain(e.to_string()))
    }

    /// Law of the full regeneration gap T: P(T = k) = e^{-(k-1)}/A, k ≥ 2.
    pub fn gap_law(&self, n_top: u64) -> Result<DiscreteLaw, ChainError> {
        let a = loop_a_const();
        let atoms: Vec<(f64, f64)> = (2..=n_top + 1)
            .map(|k| (k as f64, (-((k - 1) as f64)).exp() / a))
            .collect();
        let tail = GeometricTail {
            from: n_top + 2,
            coeff: std::f64::consts::E / a,
            ratio: (-1.0f64).exp(),
        };
        DiscreteLaw::with_geometric_tail(atoms, tail)
            .map_err(|e| ChainError::InvalidChain(e.to_string()))
    }

    /// ψ₁ norm of the regeneration gap, solved exactly on the truncated law.
    pub fn gap_psi1_norm(&self) -> OrliczNorm {
        solve_gap_norm(|top| self.gap_law(top))
    }

    /// Var Z₁(f_r) = Σ_{n≥r} n² e^{-n}/A, summed to convergence.
    pub fn var_block_sum_f_r(&self, r: u64) -> f64 {
        let a = loop_a_const();
        let mut sum = 0.0;
        let mut n = r.max(1) as f64;
        loop {
            let term = n * n * (-n).exp();
            sum += term;
            if term < 1e-18 && n > r as f64 + 4.0 {
                break;
            }
            n += 1.0;
        }
        sum / a
    }

    /// Dense truncation keeping loops up to length N where the discarded
    /// origin-row mass Σ_{n>N} e^{-n}/A = e^{-N} is below `max_tail_mass`
    /// (required in (0, 1e-6]); the origin row is renormalized. Returns the
    /// finite chain (initial = ν), its certificate, and the state decode
    /// table.
    pub fn truncated(
        &self,
        max_tail_mass: f64,
    ) -> Result<(FiniteChain, MinorizationCert, Vec<LoopState>), ChainError> {
        if !(max_tail_mass > 0.0 && max_tail_mass <= 1e-6) {
            return Err(ChainError::InvalidChain(format!(
                "max_tail_mass must lie in (0, 1e-6], got {max_tail_mass}"
            )));
        }
        let n_top = (-(max_tail_mass.ln())).ceil() as u64;
        let n_states = 1 + (n_top * (n_top + 1)) as usize;
        if n_states > crate::chain::MAX_DENSE_STATES {
            return Err(ChainError::Unsupported(format!(
                "truncation needs {n_states} states (> {})",
                crate::chain::MAX_DENSE_STATES
            )));
        }

        let mut states = Vec::with_capacity(n_states);
        states.push(LoopState::Origin);
        for len in 1..=n_top {
            for pos in 1..=len {
                states.push(LoopState::Loop { len, pos, sign: 1 });
                states.push(LoopState::Loop { len, pos, sign: -1 });
            }
        }
        let index_of = |len: u64, pos: u64, sign: i8| -> usize {
            let base = 1 + (len * (len - 1)) as usize;
            base + 2 * (pos - 1) as usize + usize::from(sign < 0)
        };

        // Origin row renormalized over the retained loops.
        let a_top: f64 = (1..=n_top).map(|n| (-(n as f64)).exp()).sum();
        let mut origin_row = vec![0.0; n_states];
        for len in 1..=n_top {
            let w = (-(len as f64)).exp() / a_top / 2.0;
            origin_row[index_of(len, 1, 1)] = w;
            origin_row[index_of(len, 1, -1)] = w;
        }

        let mut rows = vec![origin_row.clone()];
        for state in states.iter().skip(1) {
            let &LoopState::Loop { len, pos, sign } = state else { unreachable!() };
            let mut row = vec![0.0; n_states];
            if pos < len {
                row[index_of(len, pos + 1, sign)] = 1.0;
            } else {
                row[0] = 1.0;
            }
            rows.push(row);
        }

        let chain = FiniteChain::new(rows, origin_row.clone())?;
        let cert = MinorizationCert { small_set: vec![0], delta: 1.0, nu: origin_row, m: 1 };
        Ok((chain, cert, states))
    }
}

impl SplitKernel for LoopChain {
    type State = LoopState;

    fn sample_initial(&self, rng: &mut SimRng) -> LoopState {
        if self.start_at_origin {
            LoopState::Origin
        } else {
            self.sample_loop_entry(rng)
        }
    }

    fn sample_kernel(&self, x: &LoopState, rng: &mut SimRng) -> LoopState {
        match *x {
            LoopState::Origin => self.sample_loop_entry(rng),
            LoopState::Loop { len, pos, sign } => {
                if pos < len {
                    LoopState::Loop { len, pos: pos + 1, sign }
                } else {
                    LoopState::Origin
                }
            }
        }
    }

    fn in_small_set(&self, x: &LoopState) -> bool {
        *x == LoopState::Origin
    }

    fn delta(&self) -> f64 {
        1.0
    }

    fn sample_nu(&self, rng: &mut SimRng) -> LoopState {
        self.sample_loop_entry(rng)
    }

    fn sample_residual(&self, _x: &LoopState, _rng: &mut SimRng) -> LoopState {
        unreachable!("loop chain has delta = 1")
    }
}

/// f_r on the loop chain: 0 at the origin, sign · 1{len ≥ r} on loop states.
/// E_π f_r = 0 by the ± symmetry of π.
pub fn loop_function_f_r(r: u64) -> impl Fn(&LoopState) -> f64 + Copy + Send + Sync {
    move |s: &LoopState| match *s {
        LoopState::Origin => 0.0,
        LoopState::Loop { len, sign, .. } => {
            if len >= r {
                sign as f64
            } else {
                0.0
            }
        }
    }
}

/// The i.i.d. sequence X_i = ε_i Y_i with P(Y = r) = e^{-r} = 1 - P(Y = 0)
/// and ε a Rademacher sign: a single two-point magnitude whose ψ₁ norm is at
/// most 1 while E X² = r² e^{-r}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CounterexampleSequenceSpec {
    pub r: u64,
    pub n: usize,
}

impl CounterexampleSequenceSpec {
    pub fn new(r: u64, n: usize) -> Result<Self, ChainError> {
        if r < 1 {
            return Err(ChainError::InvalidChain("r must be >= 1".into()));
        }
        Ok(Self { r, n })
    }

    /// Law of |X|: the two-point magnitude law.
    pub fn abs_law(&self) -> DiscreteLaw {
        let p = (-(self.r as f64)).exp();
        DiscreteLaw::new(vec![(self.r as f64, p), (0.0, 1.0 - p)]).unwrap()
    }

    /// E X² = r² e^{-r}.
    pub fn second_moment(&self) -> f64 {
        let r = self.r as f64;
        r * r * (-r).exp()
    }

    /// The sequence as an i.i.d. finite chain on values (-r, 0, +r) with the
    /// trivial certificate (C = everything, δ = 1, ν = the common row), so
    /// the whole engine applies.
    pub fn as_iid_chain(&self) -> (FiniteChain, MinorizationCert, Vec<f64>) {
        let p = (-(self.r as f64)).exp();
        let row = vec![p / 2.0, 1.0 - p, p / 2.0];
        let chain = FiniteChain::new(vec![row.clone(); 3], row.clone()).unwrap();
        let cert = MinorizationCert { small_set: vec![0, 1, 2], delta: 1.0, nu: row, m: 1 };
        let values = vec![-(self.r as f64), 0.0, self.r as f64];
        (chain, cert, values)
    }
}

/// n i.i.d. draws of X = ε Y.
pub fn sample_counterexample_sequence(spec: &CounterexampleSequenceSpec, rng: &mut SimRng) -> Vec<f64> {
    let p = (-(spec.r as f64)).exp();
    (0..spec.n)
        .map(|_| {
            if unit_f64(rng) < p {
                if sample_bernoulli(rng, 0.5) {
                    spec.r as f64
                } else {
                    -(spec.r as f64)
                }
            } else {
                0.0
            }
        })
        .collect()
}

/// The smallest nontrivial test chain: two states with flip probabilities
/// p01 and p10, certificate C = {0}, ν = row of 0, δ = 1, m = 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TwoStateChain {
    pub p01: f64,
    pub p10: f64,
}

impl TwoStateChain {
    pub fn new(p01: f64, p10: f64) -> Result<Self, ChainError> {
        for (name, p) in [("p01", p01), ("p10", p10)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(ChainError::InvalidChain(format!("{name} must lie in (0, 1), got {p}")));
            }
        }
        Ok(Self { p01, p10 })
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        vec![
            vec![1.0 - self.p01, self.p01],
            vec![self.p10, 1.0 - self.p10],
        ]
    }

    /// π = (p10, p01)/(p01 + p10).
    pub fn pi(&self) -> [f64; 2] {
        let z = self.p01 + self.p10;
        [self.p10 / z, self.p01 / z]
    }

    pub fn chain(&self, initial: [f64; 2]) -> Result<FiniteChain, ChainError> {
        FiniteChain::new(self.rows(), initial.to_vec())
    }

    pub fn cert(&self) -> MinorizationCert {
        MinorizationCert { small_set: vec![0], delta: 1.0, nu: self.rows()[0].clone(), m: 1 }
    }

    /// Kac: mean return gap to state 0 equals 1/π₀.
    pub fn mean_gap(&self) -> f64 {
        1.0 / self.pi()[0]
    }

    /// Law of the regeneration gap: P(1) = 1 - p01 and
    /// P(k) = p01 p10 (1 - p10)^{k-2} for k ≥ 2, truncated with its exact
    /// geometric tail certificate.
    pub fn gap_law(&self, k_top: u64) -> Result<DiscreteLaw, ChainError> {
        let mut atoms = vec![(1.0, 1.0 - self.p01)];
        for k in 2..=k_top {
            let p = self.p01 * self.p10 * (1.0 - self.p10).powi(k as i32 - 2);
            // Skip atoms that underflowed; their mass is far below the
            // normalization tolerance.
            if p > 1e-300 {
                atoms.push((k as f64, p));
            }
        }
        let tail = GeometricTail {
            from: k_top + 1,
            coeff: self.p01 * self.p10 / (1.0 - self.p10).powi(2),
            ratio: 1.0 - self.p10,
        };
        DiscreteLaw::with_geometric_tail(atoms, tail)
            .map_err(|e| ChainError::InvalidChain(e.to_string()))
    }

    /// ψ₁ norm of the regeneration gap.
    pub fn gap_psi1_norm(&self) -> OrliczNorm {
        solve_gap_norm(|top| self.gap_law(top))
    }

    /// A block started by ν holds G copies of state 1 then the terminal 0,
    /// with P(G = 0) = 1 - p01 and G | G ≥ 1 geometric(p10), so
    /// Z₁(f) = f(1) G + f(0) and Var Z₁(f) = f(1)² Var G.
    pub fn var_g(&self) -> f64 {
        let eg = self.p01 / self.p10;
        let eg2 = self.p01 * (2.0 - self.p10) / (self.p10 * self.p10);
        eg2 - eg * eg
    }

    pub fn var_block_sum(&self, f0: f64, f1: f64) -> f64 {
        let _ = f0; // shifts the block sum but not its variance
        f1 * f1 * self.var_g()
    }

    /// Centered function family c · (π₁, -π₀): E_π f = 0 for every c.
    pub fn centered_function(&self, c: f64) -> [f64; 2] {
        let pi = self.pi();
        [c * pi[1], -c * pi[0]]
    }
}

/// Solve the ψ₁ norm of a truncated gap law, deepening the truncation until
/// the certified tail's ψ-moment contribution drops below the solver
/// tolerance. The tail mass alone is not enough: the exponential moment
/// amplifies whatever sits past the truncation point.
fn solve_gap_norm(build: impl Fn(u64) -> Result<DiscreteLaw, ChainError>) -> OrliczNorm {
    let mut top = 64u64;
    loop {
        let law = build(top).expect("gap law construction");
        match orlicz_norm_exact(&law, OrliczIndex::ONE, 1e-10) {
            Ok(norm) => return norm,
            Err(crate::orlicz::OrliczError::TruncationTooCoarse { .. }) if top < (1 << 20) => {
                top *= 2;
            }
            Err(e) => panic!("gap norm solve: {e}"),
        }
    }
}

/// Drift specification: PV ≤ λV off the small set and PV ≤ K on it, with
/// V ≥ 1 everywhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftSpec {
    pub v: Vec<f64>,
    pub lambda: f64,
    pub k_bound: f64,
    pub small_set: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DriftReport {
    /// Per-state slack: λV(x) - PV(x) off C, K - PV(x) on C.
    pub slacks: Vec<f64>,
    /// First state whose slack dips below tolerance.
    pub witness: Option<usize>,
}

impl DriftReport {
    pub fn passed(&self) -> bool {
        self.witness.is_none()
    }
}

/// Exact drift-condition check for finite chains (the truncated loop chain
/// included).
pub fn check_drift(chain: &FiniteChain, spec: &DriftSpec) -> Result<DriftReport, ChainError> {
    let n = chain.n_states();
    if spec.v.len() != n {
        return Err(ChainError::InvalidChain(format!(
            "drift function has length {} for a {n}-state chain",
            spec.v.len()
        )));
    }
    if spec.v.iter().any(|&v| !(v >= 1.0) || !v.is_finite()) {
        return Err(ChainError::InvalidChain("drift function must satisfy V >= 1".into()));
    }
    if !(spec.lambda > 0.0 && spec.lambda < 1.0) {
        return Err(ChainError::InvalidChain(format!("lambda must lie in (0, 1), got {}", spec.lambda)));
    }
    if spec.small_set.iter().any(|&x| x >= n) {
        return Err(ChainError::InvalidChain("small set index out of range".into()));
    }
    let mut slacks = Vec::with_capacity(n);
    let mut witness = None;
    for x in 0..n {
        let pv: f64 = chain.row(x).iter().zip(spec.v.iter()).map(|(&p, &v)| p * v).sum();
        let slack = if spec.small_set.contains(&x) {
            spec.k_bound - pv
        } else {
            spec.lambda * spec.v[x] - pv
        };
        if slack < -1e-12 && witness.is_none() {
            witness = Some(x);
        }
        slacks.push(slack);
    }
    Ok(DriftReport { slacks, witness })
}

/// Regeneration flags of a loop-chain trajectory must coincide exactly with
/// origin visits (δ = 1).
pub fn loop_flags_match_origin_visits(traj: &SplitTrajectory<LoopState>) -> bool {
    traj.states
        .iter()
        .zip(traj.flags.iter())
        .all(|(s, &f)| f == (*s == LoopState::Origin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{
        block_sums, decompose, simulate_split, stationary_distribution, validate_minorization,
        FiniteSplitChain,
    };
    use crate::rng::{child_seed, stream_rng};
    use approx::assert_relative_eq;

    #[test]
    fn loop_closed_forms_match_series_oracles() {
        // Direct series summation to 1e-12.
        let mut a = 0.0;
        let mut b = 0.0;
        for n in 1..200 {
            let w = (-(n as f64)).exp();
            a += w;
            b += n as f64 * w;
        }
        assert_relative_eq!(loop_a_const(), a, max_relative = 1e-12);
        assert_relative_eq!(loop_sum_n_exp(), b, max_relative = 1e-12);
        assert!((loop_a_const() - 0.581977).abs() < 1e-6);
        assert!((loop_sum_n_exp() - 0.920674).abs() < 1e-6);

        let chain = LoopChain::new();
        assert_relative_eq!(chain.pi_origin(), a / (a + b), max_relative = 1e-12);
        assert!((chain.pi_origin() - 0.38730).abs() < 1e-5);
        assert_relative_eq!(chain.mean_loop_length(), b / a, max_relative = 1e-12);
        assert!((chain.mean_loop_length() - 1.581977).abs() < 1e-6);
        assert_relative_eq!(chain.mean_gap(), 1.0 / chain.pi_origin(), max_relative = 1e-12);
    }

    #[test]
    fn loop_length_law_mean_matches_closed_form() {
        let chain = LoopChain::new();
        let law = chain.loop_length_law(60).unwrap();
        let mean: f64 = law.atoms().iter().map(|&(v, p)| v * p).sum();
        assert_relative_eq!(mean, chain.mean_loop_length(), max_relative = 1e-9);
    }

    #[test]
    fn f_r_anchor_values() {
        let f3 = loop_function_f_r(3);
        assert_eq!(f3(&LoopState::Origin), 0.0);
        assert_eq!(f3(&LoopState::Loop { len: 3, pos: 1, sign: -1 }), -1.0);
        assert_eq!(f3(&LoopState::Loop { len: 2, pos: 1, sign: 1 }), 0.0);
        assert_eq!(f3(&LoopState::Loop { len: 7, pos: 4, sign: 1 }), 1.0);
    }

    #[test]
    fn var_block_sum_series() {
        let chain = LoopChain::new();
        // Independent truncated-series oracle.
        let a = loop_a_const();
        let mut oracle = 0.0;
        for n in 3..400u64 {
            oracle += (n as f64).powi(2) * (-(n as f64)).exp();
        }
        oracle /= a;
        assert_relative_eq!(chain.var_block_sum_f_r(3), oracle, max_relative = 1e-12);
        assert!((chain.var_block_sum_f_r(3) - 1.861).abs() < 1e-3);
    }

    #[test]
    fn loop_flags_coincide_with_origin_visits() {
        let chain = LoopChain::new();
        let traj = simulate_split(&chain, 5000, 17);
        assert!(loop_flags_match_origin_visits(&traj));
        let chain0 = LoopChain::starting_at_origin();
        let traj0 = simulate_split(&chain0, 5000, 18);
        assert!(loop_flags_match_origin_visits(&traj0));
        assert_eq!(traj0.states[0], LoopState::Origin);
        assert!(traj0.flags[0]);
    }

    #[test]
    fn loop_gap_statistics_match_closed_forms() {
        // Simulated flag gaps: mean gap = 1 + 1/(1 - e^{-1}), mean loop
        // length (gap - 1) = 1/(1 - e^{-1}), each within 4 standard errors.
        let chain = LoopChain::new();
        let mut gaps: Vec<u64> = Vec::new();
        for i in 0..400u64 {
            let traj = simulate_split(&chain, 2000, child_seed(5, "loopgap", i));
            let d = decompose(&traj, 1);
            gaps.extend_from_slice(d.complete_block_gaps());
        }
        let n = gaps.len() as f64;
        let mean = gaps.iter().map(|&g| g as f64).sum::<f64>() / n;
        let var = gaps.iter().map(|&g| (g as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(
            (mean - chain.mean_gap()).abs() < 4.0 * se,
            "gap mean {mean} vs {} (se {se})",
            chain.mean_gap()
        );
        assert!(
            (mean - 1.0 - chain.mean_loop_length()).abs() < 4.0 * se,
            "loop-length mean {} vs {}",
            mean - 1.0,
            chain.mean_loop_length()
        );
    }

    #[test]
    fn loop_gap_psi1_norm_matches_independent_solve() {
        // Oracle: E e^{T/lambda} = e^{1/lambda} x/(A(1-x)) with
        // x = e^{1/lambda - 1}; solve = 2 by bisection on lambda.
        let chain = LoopChain::new();
        let a = loop_a_const();
        let g = |lambda: f64| -> f64 {
            let x = (1.0 / lambda - 1.0).exp();
            if x >= 1.0 {
                return f64::INFINITY;
            }
            (1.0 / lambda).exp() * x / (a * (1.0 - x))
        };
        let (mut lo, mut hi) = (1.0001, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 2.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        let solved = chain.gap_psi1_norm().value;
        assert_relative_eq!(solved, oracle, max_relative = 1e-7);
        assert!(solved > chain.mean_gap(), "psi1 norm dominates the mean");
    }

    #[test]
    fn loop_first_gap_matches_later_gaps_from_nu() {
        // Started from ν, T₁ and T₂ have the same law: two-sample chi-square
        // on binned gaps at the 1e-3 level.
        let chain = LoopChain::new();
        let mut first: Vec<u64> = Vec::new();
        let mut second: Vec<u64> = Vec::new();
        for i in 0..100_000u64 {
            let traj = simulate_split(&chain, 30, child_seed(23, "t1t2", i));
            let d = decompose(&traj, 1);
            if d.t_gaps.len() >= 2 {
                first.push(d.t_gaps[0]);
                second.push(d.t_gaps[1]);
            }
        }
        let bucket = |g: u64| (g.clamp(2, 10) - 2) as usize;
        let mut oa = [0u64; 9];
        let mut ob = [0u64; 9];
        for g in first {
            oa[bucket(g)] += 1;
        }
        for g in second {
            ob[bucket(g)] += 1;
        }
        let na: u64 = oa.iter().sum();
        let nb: u64 = ob.iter().sum();
        let mut chi2 = 0.0;
        for c in 0..9 {
            let tot = (oa[c] + ob[c]) as f64;
            if tot == 0.0 {
                continue;
            }
            let ea = tot * na as f64 / (na + nb) as f64;
            let eb = tot * nb as f64 / (na + nb) as f64;
            chi2 += (oa[c] as f64 - ea).powi(2) / ea + (ob[c] as f64 - eb).powi(2) / eb;
        }
        assert!(chi2 < 26.125, "chi2 = {chi2} (df = 8, level 1e-3)");
    }

    #[test]
    fn truncated_loop_chain_is_valid_and_balanced() {
        let chain = LoopChain::new();
        let (finite, cert, states) = chain.truncated(1e-8).unwrap();
        assert_eq!(states.len(), finite.n_states());
        let report = validate_minorization(&finite, &cert).unwrap();
        assert!(report.passed());
        // Paired ± states carry equal stationary mass, so E_pi f_r = 0.
        let pi = stationary_distribution(&finite, 1e-9).unwrap();
        for (idx, s) in states.iter().enumerate() {
            if let LoopState::Loop { len, pos, sign: 1 } = *s {
                let mirror = states
                    .iter()
                    .position(|t| *t == LoopState::Loop { len, pos, sign: -1 })
                    .unwrap();
                assert_relative_eq!(pi[idx], pi[mirror], max_relative = 1e-9);
            }
        }
        // Dense solve against the closed form at the origin.
        assert!((pi[0] - chain.pi_origin()).abs() <= 10.0 * 1e-8);
    }

    #[test]
    fn truncated_rejects_coarse_tail() {
        assert!(LoopChain::new().truncated(1e-3).is_err());
        assert!(LoopChain::new().truncated(0.0).is_err());
    }

    #[test]
    fn counterexample_sequence_moments() {
        let spec = CounterexampleSequenceSpec::new(5, 40_000).unwrap();
        assert_relative_eq!(spec.second_moment(), 25.0 * (-5.0f64).exp(), max_relative = 1e-12);

        let mut rng = stream_rng(3, "ce22", 0);
        let xs = sample_counterexample_sequence(&spec, &mut rng);
        assert!(xs.iter().all(|&x| x == 0.0 || x == 5.0 || x == -5.0));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        let se_mean = (spec.second_moment() / xs.len() as f64).sqrt();
        assert!(mean.abs() < 4.0 * se_mean, "mean {mean} vs se {se_mean}");
        let var_x2 = spec.second_moment() * 25.0; // crude upper bound on Var(X^2)
        let se_m2 = (var_x2 / xs.len() as f64).sqrt();
        assert!((m2 - spec.second_moment()).abs() < 4.0 * se_m2);

        // psi_1 norm of the magnitude law certified <= 1.
        let norm = orlicz_norm_exact(&spec.abs_law(), OrliczIndex::ONE, 1e-10).unwrap();
        assert!(norm.value <= 1.0);
    }

    #[test]
    fn counterexample_iid_chain_flags_everything() {
        let spec = CounterexampleSequenceSpec::new(3, 0).unwrap();
        let (chain, cert, values) = spec.as_iid_chain();
        assert_eq!(values, vec![-3.0, 0.0, 3.0]);
        let split = FiniteSplitChain::new(chain, cert).unwrap();
        let traj = simulate_split(&split, 200, 9);
        assert!(traj.flags.iter().all(|&f| f));
    }

    #[test]
    fn two_state_closed_forms() {
        let ts = TwoStateChain::new(0.5, 0.3).unwrap();
        let pi = ts.pi();
        assert_relative_eq!(pi[0], 0.375, max_relative = 1e-12);
        assert_relative_eq!(pi[1], 0.625, max_relative = 1e-12);
        // Kac checked by linear solve.
        let solved = stationary_distribution(&ts.chain(ts.pi()).unwrap(), 1e-10).unwrap();
        assert_relative_eq!(ts.mean_gap(), 1.0 / solved[0], max_relative = 1e-9);

        assert!(TwoStateChain::new(0.0, 0.5).is_err());
        assert!(TwoStateChain::new(0.5, 1.0).is_err());
    }

    #[test]
    fn two_state_gap_mean_and_block_variance_match_simulation() {
        let ts = TwoStateChain::new(0.35, 0.45).unwrap();
        let split = FiniteSplitChain::new(ts.chain([0.55, 0.45]).unwrap(), ts.cert()).unwrap();
        let f = |s: &usize| if *s == 1 { 1.0 } else { 0.0 };
        let mut gaps: Vec<f64> = Vec::new();
        let mut blocks: Vec<f64> = Vec::new();
        for i in 0..600u64 {
            let traj = simulate_split(&split, 1000, child_seed(31, "ts", i));
            let d = decompose(&traj, 1);
            gaps.extend(d.complete_block_gaps().iter().map(|&g| g as f64));
            blocks.extend(block_sums(&d, &traj, f).unwrap().blocks);
        }
        let n = gaps.len() as f64;
        let gap_mean = gaps.iter().sum::<f64>() / n;
        let gap_var = gaps.iter().map(|g| (g - gap_mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(
            (gap_mean - ts.mean_gap()).abs() < 4.0 * (gap_var / n).sqrt(),
            "gap mean {gap_mean} vs {}",
            ts.mean_gap()
        );

        let bm = blocks.iter().sum::<f64>() / blocks.len() as f64;
        let bv = blocks.iter().map(|z| (z - bm).powi(2)).sum::<f64>() / (blocks.len() as f64 - 1.0);
        let target = ts.var_block_sum(0.0, 1.0);
        // Standard error of a sample variance via fourth moments.
        let m4 = blocks.iter().map(|z| (z - bm).powi(4)).sum::<f64>() / blocks.len() as f64;
        let se_var = ((m4 - bv * bv).max(0.0) / blocks.len() as f64).sqrt();
        assert!((bv - target).abs() < 4.0 * se_var, "block var {bv} vs {target} (se {se_var})");
    }

    #[test]
    fn two_state_centered_family_integrates_to_zero() {
        let ts = TwoStateChain::new(0.3, 0.4).unwrap();
        let pi = ts.pi();
        for c in [0.25, 1.0, -0.8] {
            let f = ts.centered_function(c);
            assert_relative_eq!(f[0] * pi[0] + f[1] * pi[1], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn drift_checker_anchors() {
        // V == 1 with C = everything passes for K >= 1.
        let ts = TwoStateChain::new(0.3, 0.4).unwrap();
        let chain = ts.chain(ts.pi()).unwrap();
        let trivial = DriftSpec { v: vec![1.0, 1.0], lambda: 0.5, k_bound: 1.0, small_set: vec![0, 1] };
        assert!(check_drift(&chain, &trivial).unwrap().passed());

        // V = (1, 2), C = {0}: PV(1) = 2 - p10 must be <= 2 lambda.
        let p10 = 0.4;
        let pass_lambda = (2.0 - p10) / 2.0 + 0.01;
        let good = DriftSpec { v: vec![1.0, 2.0], lambda: pass_lambda, k_bound: 3.0, small_set: vec![0] };
        assert!(check_drift(&chain, &good).unwrap().passed());
        let fail_lambda = (2.0 - p10) / 2.0 - 0.01;
        let bad = DriftSpec { v: vec![1.0, 2.0], lambda: fail_lambda, k_bound: 3.0, small_set: vec![0] };
        let report = check_drift(&chain, &bad).unwrap();
        assert_eq!(report.witness, Some(1));

        // Validation errors.
        let short = DriftSpec { v: vec![1.0], lambda: 0.5, k_bound: 1.0, small_set: vec![0] };
        assert!(check_drift(&chain, &short).is_err());
        let below_one = DriftSpec { v: vec![0.5, 2.0], lambda: 0.5, k_bound: 1.0, small_set: vec![0] };
        assert!(check_drift(&chain, &below_one).is_err());
    }

    #[test]
    fn drift_holds_on_truncated_loop_chain() {
        // V(origin) = 1, V((n,k,s)) = e^{(n - k + 1)/2}: each loop step
        // contracts V by e^{-1/2}, and the loop exit lands on V = 1.
        let (finite, _, states) = LoopChain::new().truncated(1e-8).unwrap();
        let v: Vec<f64> = states
            .iter()
            .map(|s| match *s {
                LoopState::Origin => 1.0,
                LoopState::Loop { len, pos, .. } => (((len - pos + 1) as f64) / 2.0).exp(),
            })
            .collect();
        let spec = DriftSpec { v, lambda: (-0.5f64).exp() + 1e-6, k_bound: 10.0, small_set: vec![0] };
        let report = check_drift(&finite, &spec).unwrap();
        assert!(report.passed(), "witness {:?}", report.witness);
    }
}
