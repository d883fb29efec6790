//! Discrete Markov chains with minorization certificates, the m = 1
//! split-chain sampler, and regeneration-block decomposition of trajectories.
//!
//! The split construction: at a state x in the small set C, toss a coin with
//! success probability δ; on success the next state is drawn from ν and the
//! step is flagged as a regeneration, otherwise from the residual kernel
//! (P(x,·) - δν)/(1 - δ). Flags cut the path into independent blocks.
//!
//! Native split simulation is m = 1 only. For m > 1 the decomposition still
//! applies to trajectories whose flags were produced by a caller-supplied
//! oracle; [`decompose`] reads flags on the m-skeleton as the theory requires.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{sample_bernoulli, sample_categorical, stream_rng, SimRng};

const ROW_SUM_TOL: f64 = 1e-12;
const MARGIN_TOL: f64 = 1e-12;
pub const MAX_DENSE_STATES: usize = 2000;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),
    #[error("minorization violated at (x = {x}, y = {y}): margin {margin}")]
    CertificateRejected { x: usize, y: usize, margin: f64 },
    #[error("small set not accessible from state {0}")]
    NotAccessible(usize),
    #[error("residual kernel undefined for delta = 1 (callers must branch)")]
    ResidualUndefined,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("stationary solve failed: {0}")]
    StationaryFailed(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
}

/// A finite chain: dense kernel rows plus an initial distribution ξ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteChain {
    rows: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

fn check_prob_vector(v: &[f64], what: &str, len: usize) -> Result<(), ChainError> {
    if v.len() != len {
        return Err(ChainError::InvalidChain(format!("{what} has length {} != {len}", v.len())));
    }
    if v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(ChainError::InvalidChain(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = crate::orlicz::neumaier_sum(v.iter().copied());
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(ChainError::InvalidChain(format!("{what} sums to {sum}")));
    }
    Ok(())
}

impl FiniteChain {
    pub fn new(rows: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self, ChainError> {
        let n = rows.len();
        if n == 0 {
            return Err(ChainError::InvalidChain("no states".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            check_prob_vector(row, &format!("kernel row {i}"), n)?;
        }
        check_prob_vector(&initial, "initial distribution", n)?;
        Ok(Self { rows, initial })
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Dense m-step kernel. Guarded to small matrices; every in-repo use has
    /// m = 1 where this is the identity copy.
    pub fn kernel_power(&self, m: u64) -> Result<Vec<Vec<f64>>, ChainError> {
        if m == 0 {
            return Err(ChainError::InvalidCertificate("skeleton step m must be >= 1".into()));
        }
        let n = self.n_states();
        if m > 1 && n > 200 {
            return Err(ChainError::Unsupported(format!(
                "exact P^m check with m = {m} limited to 200 states, chain has {n}"
            )));
        }
        let mut acc = self.rows.clone();
        for _ in 1..m {
            let mut next = vec![vec![0.0; n]; n];
            for (i, row) in acc.iter().enumerate() {
                for (k, &pik) in row.iter().enumerate() {
                    if pik == 0.0 {
                        continue;
                    }
                    for (j, &pkj) in self.rows[k].iter().enumerate() {
                        next[i][j] += pik * pkj;
                    }
                }
            }
            acc = next;
        }
        Ok(acc)
    }
}

/// A minorization certificate for a finite chain: P^m(x, ·) ≥ δ ν(·) on the
/// small set C, plus accessibility of C from everywhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinorizationCert {
    pub small_set: Vec<usize>,
    pub delta: f64,
    pub nu: Vec<f64>,
    pub m: u64,
}

/// Outcome of an exact certificate check.
#[derive(Debug, Clone)]
pub struct MinorizationReport {
    /// (state in C, min over y of P^m(x,y) - δ ν(y)).
    pub margins: Vec<(usize, f64)>,
    /// Worst (x, y, margin) if the margin dips below tolerance.
    pub witness: Option<(usize, usize, f64)>,
    /// First state that cannot reach the small set, if any.
    pub inaccessible: Option<usize>,
}

impl MinorizationReport {
    pub fn passed(&self) -> bool {
        self.witness.is_none() && self.inaccessible.is_none()
    }
}

/// Exact check of the minorization condition and accessibility for finite
/// chains. Lazily countable chains carry their certificates by construction
/// (see the zoo) and do not go through this path.
pub fn validate_minorization(chain: &FiniteChain, cert: &MinorizationCert) -> Result<MinorizationReport, ChainError> {
    let n = chain.n_states();
    if cert.small_set.is_empty() {
        return Err(ChainError::InvalidCertificate("small set is empty".into()));
    }
    if cert.small_set.iter().any(|&x| x >= n) {
        return Err(ChainError::InvalidCertificate("small set index out of range".into()));
    }
    if !(cert.delta > 0.0 && cert.delta <= 1.0) {
        return Err(ChainError::InvalidCertificate(format!("delta must lie in (0, 1], got {}", cert.delta)));
    }
    check_prob_vector(&cert.nu, "nu", n).map_err(|e| ChainError::InvalidCertificate(e.to_string()))?;

    let pm = chain.kernel_power(cert.m)?;
    let mut margins = Vec::with_capacity(cert.small_set.len());
    let mut witness: Option<(usize, usize, f64)> = None;
    for &x in &cert.small_set {
        let mut min_margin = f64::INFINITY;
        let mut min_y = 0;
        for y in 0..n {
            let margin = pm[x][y] - cert.delta * cert.nu[y];
            if margin < min_margin {
                min_margin = margin;
                min_y = y;
            }
        }
        margins.push((x, min_margin));
        if min_margin < -MARGIN_TOL && witness.map_or(true, |w| min_margin < w.2) {
            witness = Some((x, min_y, min_margin));
        }
    }

    // Accessibility: every state reaches C through positive P^m edges.
    let mut reaches = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    // Seed with direct predecessors of C (the condition requires n >= 1 steps).
    for x in 0..n {
        if cert.small_set.iter().any(|&c| pm[x][c] > 0.0) {
            reaches[x] = true;
            stack.push(x);
        }
    }
    while let Some(y) = stack.pop() {
        for x in 0..n {
            if !reaches[x] && pm[x][y] > 0.0 {
                reaches[x] = true;
                stack.push(x);
            }
        }
    }
    let inaccessible = (0..n).find(|&x| !reaches[x]);

    Ok(MinorizationReport { margins, witness, inaccessible })
}

/// Normalized residual row (P(x,·) - δν(·))/(1 - δ) for x in the small set.
pub fn residual_kernel(chain: &FiniteChain, cert: &MinorizationCert, x: usize) -> Result<Vec<f64>, ChainError> {
    if cert.m != 1 {
        return Err(ChainError::Unsupported("residual kernel is defined for m = 1".into()));
    }
    if cert.delta >= 1.0 {
        return Err(ChainError::ResidualUndefined);
    }
    if !cert.small_set.contains(&x) {
        return Err(ChainError::InvalidCertificate(format!("state {x} is not in the small set")));
    }
    let row = chain.row(x);
    let scale = 1.0 - cert.delta;
    let mut out = Vec::with_capacity(row.len());
    for (y, (&p, &nu_y)) in row.iter().zip(cert.nu.iter()).enumerate() {
        let r = (p - cert.delta * nu_y) / scale;
        if r < -1e-9 {
            return Err(ChainError::CertificateRejected { x, y, margin: p - cert.delta * nu_y });
        }
        out.push(r.max(0.0));
    }
    let sum: f64 = out.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(ChainError::InvalidCertificate(format!("residual row at {x} sums to {sum}")));
    }
    for r in &mut out {
        *r /= sum;
    }
    Ok(out)
}

/// What the split-chain sampler needs from a chain: kernel and initial
/// sampling plus the certificate pieces (small set, δ, ν, residual).
pub trait SplitKernel: Send + Sync {
    type State: Clone + PartialEq + Debug + Send + Sync;

    fn sample_initial(&self, rng: &mut SimRng) -> Self::State;
    fn sample_kernel(&self, x: &Self::State, rng: &mut SimRng) -> Self::State;
    fn in_small_set(&self, x: &Self::State) -> bool;
    fn delta(&self) -> f64;
    fn sample_nu(&self, rng: &mut SimRng) -> Self::State;
    /// Only reachable when δ < 1.
    fn sample_residual(&self, x: &Self::State, rng: &mut SimRng) -> Self::State;
}

/// A finite chain paired with a validated m = 1 certificate; residual rows
/// are precomputed so sampling never re-derives them.
#[derive(Debug, Clone)]
pub struct FiniteSplitChain {
    chain: FiniteChain,
    cert: MinorizationCert,
    in_c: Vec<bool>,
    residual_rows: Vec<Option<Vec<f64>>>,
}

impl FiniteSplitChain {
    pub fn new(chain: FiniteChain, cert: MinorizationCert) -> Result<Self, ChainError> {
        if cert.m != 1 {
            return Err(ChainError::Unsupported(
                "native split simulation requires m = 1; supply external flags for m > 1".into(),
            ));
        }
        let report = validate_minorization(&chain, &cert)?;
        if let Some((x, y, margin)) = report.witness {
            return Err(ChainError::CertificateRejected { x, y, margin });
        }
        if let Some(x) = report.inaccessible {
            return Err(ChainError::NotAccessible(x));
        }
        let n = chain.n_states();
        let mut in_c = vec![false; n];
        for &x in &cert.small_set {
            in_c[x] = true;
        }
        let mut residual_rows = vec![None; n];
        if cert.delta < 1.0 {
            for &x in &cert.small_set {
                residual_rows[x] = Some(residual_kernel(&chain, &cert, x)?);
            }
        }
        Ok(Self { chain, cert, in_c, residual_rows })
    }

    pub fn chain(&self) -> &FiniteChain {
        &self.chain
    }

    pub fn cert(&self) -> &MinorizationCert {
        &self.cert
    }
}

impl SplitKernel for FiniteSplitChain {
    type State = usize;

    fn sample_initial(&self, rng: &mut SimRng) -> usize {
        sample_categorical(rng, self.chain.initial())
    }

    fn sample_kernel(&self, x: &usize, rng: &mut SimRng) -> usize {
        sample_categorical(rng, self.chain.row(*x))
    }

    fn in_small_set(&self, x: &usize) -> bool {
        self.in_c[*x]
    }

    fn delta(&self) -> f64 {
        self.cert.delta
    }

    fn sample_nu(&self, rng: &mut SimRng) -> usize {
        sample_categorical(rng, &self.cert.nu)
    }

    fn sample_residual(&self, x: &usize, rng: &mut SimRng) -> usize {
        match &self.residual_rows[*x] {
            Some(row) => sample_categorical(rng, row),
            None => unreachable!("residual sampled with delta = 1"),
        }
    }
}

/// One split-chain transition from x: the successor state and the
/// regeneration flag attached to the current position.
pub fn split_step<K: SplitKernel>(k: &K, x: &K::State, rng: &mut SimRng) -> (K::State, bool) {
    if k.in_small_set(x) {
        if k.delta() >= 1.0 {
            // Dedicated branch: both countable-state examples use delta = 1,
            // where the coin is a.s. success and the residual is undefined.
            (k.sample_nu(rng), true)
        } else if sample_bernoulli(rng, k.delta()) {
            (k.sample_nu(rng), true)
        } else {
            (k.sample_residual(x, rng), false)
        }
    } else {
        (k.sample_kernel(x, rng), false)
    }
}

/// A realized path X₁..X_n with its regeneration flags R₁..R_n.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitTrajectory<S> {
    pub states: Vec<S>,
    pub flags: Vec<bool>,
    pub seed: u64,
}

impl<S> SplitTrajectory<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Length-n split-chain trajectory, deterministic given the seed.
pub fn simulate_split<K: SplitKernel>(k: &K, n: usize, seed: u64) -> SplitTrajectory<K::State> {
    let mut rng = stream_rng(seed, "split-trajectory", 0);
    let mut states = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    if n == 0 {
        return SplitTrajectory { states, flags, seed };
    }
    let mut x = k.sample_initial(&mut rng);
    for _ in 0..n {
        let (next, flag) = split_step(k, &x, &mut rng);
        states.push(x);
        flags.push(flag);
        x = next;
    }
    SplitTrajectory { states, flags, seed }
}

/// Plain kernel sampling without the split machinery; the comparison arm of
/// the marginal-law checks.
pub fn simulate_direct<K: SplitKernel>(k: &K, n: usize, seed: u64) -> Vec<K::State> {
    let mut rng = stream_rng(seed, "direct-trajectory", 0);
    let mut states = Vec::with_capacity(n);
    if n == 0 {
        return states;
    }
    let mut x = k.sample_initial(&mut rng);
    for _ in 0..n {
        let next = k.sample_kernel(&x, &mut rng);
        states.push(x);
        x = next;
    }
    states
}

/// Regeneration decomposition of a trajectory: gaps T_i and partial sums S_i
/// read on the m-skeleton, the complete-block count N, and the 1-based index
/// ranges of the initial segment, the N complete blocks, and the remainder.
/// The three pieces partition {1..n} exactly; empty pieces are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenDecomposition {
    pub m: u64,
    pub n: usize,
    pub t_gaps: Vec<u64>,
    pub s_times: Vec<u64>,
    pub n_blocks: usize,
    pub initial_range: Option<(usize, usize)>,
    pub block_ranges: Vec<(usize, usize)>,
    pub remainder_range: Option<(usize, usize)>,
}

/// Scan flags on the m-skeleton and carve the index ranges. With no flag at
/// all (sup ∅ = 0 convention) the initial segment covers everything.
pub fn decompose<S>(traj: &SplitTrajectory<S>, m: u64) -> RegenDecomposition {
    assert!(m >= 1, "skeleton step m must be >= 1");
    let n = traj.len();
    let mu = m as usize;

    // Skeleton flag positions: k with R_{km} = 1.
    let mut s_times: Vec<u64> = Vec::new();
    let mut k = 1usize;
    while k * mu <= n {
        if traj.flags[k * mu - 1] {
            s_times.push(k as u64);
        }
        k += 1;
    }
    let t_gaps: Vec<u64> = s_times
        .iter()
        .scan(0u64, |prev, &s| {
            let gap = s - *prev;
            *prev = s;
            Some(gap)
        })
        .collect();

    // N = #{j >= 2 : m S_j + m - 1 <= n}; block j-1 ends at flag j.
    let fits = |s: u64| (s as usize) * mu + mu - 1 <= n;
    let n_blocks = s_times.iter().skip(1).filter(|&&s| fits(s)).count();

    let (initial_range, block_ranges, remainder_range) = if s_times.is_empty() {
        (if n >= 1 { Some((1, n)) } else { None }, Vec::new(), None)
    } else {
        let s1 = s_times[0] as usize;
        let z0_end = (s1 * mu + mu - 1).min(n);
        let initial = Some((1, z0_end));
        let mut blocks = Vec::with_capacity(n_blocks);
        for i in 1..=n_blocks {
            let start = (s_times[i - 1] as usize + 1) * mu;
            let end = s_times[i] as usize * mu + mu - 1;
            blocks.push((start, end));
        }
        let rem_start = (s_times[n_blocks] as usize + 1) * mu;
        let remainder = if rem_start <= n { Some((rem_start, n)) } else { None };
        (initial, blocks, remainder)
    };

    let out = RegenDecomposition {
        m,
        n,
        t_gaps,
        s_times,
        n_blocks,
        initial_range,
        block_ranges,
        remainder_range,
    };
    debug_assert!(out.partitions_exactly());
    out
}

impl RegenDecomposition {
    /// All ranges concatenated cover 1..n with no gap or overlap.
    pub fn partitions_exactly(&self) -> bool {
        let mut cursor = 1usize;
        let mut ranges: Vec<(usize, usize)> = Vec::new();
        ranges.extend(self.initial_range);
        ranges.extend(self.block_ranges.iter().copied());
        ranges.extend(self.remainder_range);
        for (start, end) in ranges {
            if start != cursor || end < start {
                return false;
            }
            cursor = end + 1;
        }
        cursor == self.n + 1
    }

    /// Complete-block gaps T₂..T_{N+1} (the stationary, identically
    /// distributed ones).
    pub fn complete_block_gaps(&self) -> &[u64] {
        &self.t_gaps[1..(self.n_blocks + 1).min(self.t_gaps.len())]
    }
}

/// Sums of f over the decomposition pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSums {
    pub z0: f64,
    pub blocks: Vec<f64>,
    pub remainder: f64,
}

impl BlockSums {
    pub fn total(&self) -> f64 {
        self.z0 + self.blocks.iter().sum::<f64>() + self.remainder
    }
}

/// Evaluate the block decomposition for one function on the states.
pub fn block_sums<S>(
    decomp: &RegenDecomposition,
    traj: &SplitTrajectory<S>,
    f: impl Fn(&S) -> f64,
) -> Result<BlockSums, ChainError> {
    if decomp.n != traj.len() {
        return Err(ChainError::Mismatch(format!(
            "decomposition is for n = {}, trajectory has length {}",
            decomp.n,
            traj.len()
        )));
    }
    let range_sum = |range: Option<(usize, usize)>| -> f64 {
        match range {
            Some((start, end)) => traj.states[start - 1..end].iter().map(&f).sum(),
            None => 0.0,
        }
    };
    let z0 = range_sum(decomp.initial_range);
    let blocks = decomp.block_ranges.iter().map(|&r| range_sum(Some(r))).collect();
    let remainder = range_sum(decomp.remainder_range);
    Ok(BlockSums { z0, blocks, remainder })
}

/// Solve πP = π, Σπ = 1 by dense LU; fails with a diagnostic when the system
/// is singular (reducible chain) or the residual exceeds `tol`.
pub fn stationary_distribution(chain: &FiniteChain, tol: f64) -> Result<Vec<f64>, ChainError> {
    let n = chain.n_states();
    if n > MAX_DENSE_STATES {
        return Err(ChainError::Unsupported(format!(
            "dense stationary solve limited to {MAX_DENSE_STATES} states, chain has {n}"
        )));
    }
    // Rows of A: (P^T - I) with the last equation replaced by normalization.
    let mut a = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        for (y, &p) in chain.row(x).iter().enumerate() {
            a[(y, x)] += p;
        }
        a[(x, x)] -= 1.0;
    }
    for x in 0..n {
        a[(n - 1, x)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;

    let lu = a.lu();
    let pi = lu
        .solve(&b)
        .ok_or_else(|| ChainError::StationaryFailed("singular system (reducible or periodic-degenerate chain)".into()))?;

    let mut out: Vec<f64> = pi.iter().copied().collect();
    if out.iter().any(|&p| p < -tol) {
        return Err(ChainError::StationaryFailed(format!(
            "negative mass {} in solution (reducible-chain ambiguity)",
            out.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    for p in &mut out {
        *p = p.max(0.0);
    }
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    // Residual check of the balance equations.
    let mut residual = 0.0f64;
    for y in 0..n {
        let mut acc = -out[y];
        for x in 0..n {
            acc += out[x] * chain.row(x)[y];
        }
        residual = residual.max(acc.abs());
    }
    if residual > tol {
        return Err(ChainError::StationaryFailed(format!("residual {residual} exceeds tolerance {tol}")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_state(p01: f64, p10: f64) -> FiniteChain {
        FiniteChain::new(
            vec![vec![1.0 - p01, p01], vec![p10, 1.0 - p10]],
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn iid_cert_has_zero_margins() {
        // C = all states, nu = the common row, delta = 1.
        let row = vec![0.25, 0.75];
        let chain = FiniteChain::new(vec![row.clone(), row.clone()], vec![0.5, 0.5]).unwrap();
        let cert = MinorizationCert { small_set: vec![0, 1], delta: 1.0, nu: row, m: 1 };
        let report = validate_minorization(&chain, &cert).unwrap();
        assert!(report.passed());
        for (_, margin) in report.margins {
            assert!(margin.abs() <= 1e-15);
        }
    }

    #[test]
    fn two_state_cert_passes_and_violations_are_witnessed() {
        let chain = two_state(0.5, 0.3);
        let good = MinorizationCert { small_set: vec![0], delta: 1.0, nu: vec![0.5, 0.5], m: 1 };
        assert!(validate_minorization(&chain, &good).unwrap().passed());

        // delta too large for the second row.
        let bad = MinorizationCert { small_set: vec![0, 1], delta: 1.0, nu: vec![0.5, 0.5], m: 1 };
        let report = validate_minorization(&chain, &bad).unwrap();
        let (x, y, margin) = report.witness.expect("must produce a witness");
        assert_eq!((x, y), (1, 0));
        assert_relative_eq!(margin, 0.3 - 0.5, max_relative = 1e-12);
    }

    #[test]
    fn inaccessible_small_set_detected() {
        // State 1 is absorbing and never reaches C = {0}.
        let chain = FiniteChain::new(vec![vec![0.5, 0.5], vec![0.0, 1.0]], vec![1.0, 0.0]).unwrap();
        let cert = MinorizationCert { small_set: vec![0], delta: 0.5, nu: vec![0.5, 0.5], m: 1 };
        let report = validate_minorization(&chain, &cert).unwrap();
        assert_eq!(report.inaccessible, Some(1));
        assert!(FiniteSplitChain::new(chain, cert).is_err());
    }

    #[test]
    fn residual_kernel_anchor() {
        let chain = two_state(0.5, 0.3);
        let cert = MinorizationCert { small_set: vec![0], delta: 0.6, nu: vec![0.5, 0.5], m: 1 };
        let row = residual_kernel(&chain, &cert, 0).unwrap();
        assert_relative_eq!(row[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(row[1], 0.5, max_relative = 1e-12);

        let full = MinorizationCert { delta: 1.0, ..cert.clone() };
        assert!(matches!(residual_kernel(&chain, &full, 0), Err(ChainError::ResidualUndefined)));
        assert!(residual_kernel(&chain, &cert, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        // Random valid certificates built from the row envelope: residual
        // rows must renormalize exactly.
        #[test]
        fn residual_rows_sum_to_one(
            rows in prop::collection::vec(prop::collection::vec(0.05f64..1.0, 3), 3),
            frac in 0.1f64..0.9,
        ) {
            let rows: Vec<Vec<f64>> = rows
                .into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|p| p / s).collect()
                })
                .collect();
            let initial = rows[0].clone();
            let chain = FiniteChain::new(rows.clone(), initial).unwrap();
            // nu proportional to the entrywise minimum over C of the rows.
            let small_set = vec![0usize, 1];
            let envelope: Vec<f64> = (0..3)
                .map(|y| small_set.iter().map(|&x| rows[x][y]).fold(f64::INFINITY, f64::min))
                .collect();
            let mass: f64 = envelope.iter().sum();
            prop_assume!(mass > 1e-6);
            let nu: Vec<f64> = envelope.iter().map(|e| e / mass).collect();
            let delta = frac * mass;
            let cert = MinorizationCert { small_set: small_set.clone(), delta, nu, m: 1 };
            prop_assert!(validate_minorization(&chain, &cert).unwrap().passed());
            for &x in &small_set {
                let row = residual_kernel(&chain, &cert, x).unwrap();
                let sum: f64 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn split_step_forced_branches() {
        let chain = two_state(0.5, 0.3);
        let cert = MinorizationCert { small_set: vec![0], delta: 1.0, nu: vec![0.5, 0.5], m: 1 };
        let split = FiniteSplitChain::new(chain, cert).unwrap();
        let mut rng = stream_rng(1, "forced", 0);
        for _ in 0..100 {
            let (_, flag) = split_step(&split, &0, &mut rng);
            assert!(flag, "delta = 1 in C must always regenerate");
            let (_, flag) = split_step(&split, &1, &mut rng);
            assert!(!flag, "outside C never flags");
        }
    }

    #[test]
    fn split_step_mixture_matches_kernel_row() {
        // With delta = 0.6 the next-state law from 0 mixes nu and the
        // residual; it must still equal P(0, ·) = (0.5, 0.5). Chi-square
        // goodness of fit against the exact kernel at 1e-3.
        let chain = two_state(0.5, 0.3);
        let cert = MinorizationCert { small_set: vec![0], delta: 0.6, nu: vec![0.5, 0.5], m: 1 };
        let split = FiniteSplitChain::new(chain, cert).unwrap();
        let mut rng = stream_rng(11, "mixture", 0);
        let reps = 1_000_000usize;
        let mut count0 = 0u64;
        for _ in 0..reps {
            let (next, _) = split_step(&split, &0, &mut rng);
            if next == 0 {
                count0 += 1;
            }
        }
        let e = reps as f64 * 0.5;
        let o0 = count0 as f64;
        let o1 = reps as f64 - o0;
        let chi2 = (o0 - e).powi(2) / e + (o1 - e).powi(2) / e;
        // df = 1, 1e-3 critical value.
        assert!(chi2 < 10.828, "chi2 = {chi2}");
    }

    #[test]
    fn iid_chain_flags_every_step() {
        let row = vec![0.5, 0.5];
        let chain = FiniteChain::new(vec![row.clone(), row.clone()], row.clone()).unwrap();
        let cert = MinorizationCert { small_set: vec![0, 1], delta: 1.0, nu: row, m: 1 };
        let split = FiniteSplitChain::new(chain, cert).unwrap();
        let traj = simulate_split(&split, 500, 42);
        assert!(traj.flags.iter().all(|&f| f));
    }

    #[test]
    fn simulate_split_transition_counts_match_kernel() {
        let chain = two_state(0.5, 0.3);
        let cert = MinorizationCert { small_set: vec![0], delta: 0.6, nu: vec![0.5, 0.5], m: 1 };
        let split = FiniteSplitChain::new(chain.clone(), cert).unwrap();
        let traj = simulate_split(&split, 1_000_000, 7);
        let mut counts = [[0u64; 2]; 2];
        for w in traj.states.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        let mut chi2 = 0.0;
        for x in 0..2 {
            let row_total: u64 = counts[x].iter().sum();
            for y in 0..2 {
                let e = row_total as f64 * chain.row(x)[y];
                let o = counts[x][y] as f64;
                chi2 += (o - e).powi(2) / e;
            }
        }
        // df = 2 (one free cell per origin row), 1e-3 critical value 13.816.
        assert!(chi2 < 13.816, "chi2 = {chi2}");
    }

    #[test]
    fn decompose_anchor_example() {
        // n = 10, m = 1, flags at positions 3 and 7.
        let mut flags = vec![false; 10];
        flags[2] = true;
        flags[6] = true;
        let traj = SplitTrajectory { states: vec![0usize; 10], flags, seed: 0 };
        let d = decompose(&traj, 1);
        assert_eq!(d.s_times, vec![3, 7]);
        assert_eq!(d.t_gaps, vec![3, 4]);
        assert_eq!(d.n_blocks, 1);
        assert_eq!(d.initial_range, Some((1, 3)));
        assert_eq!(d.block_ranges, vec![(4, 7)]);
        assert_eq!(d.remainder_range, Some((8, 10)));
        assert!(d.partitions_exactly());
    }

    #[test]
    fn decompose_no_flags_is_all_initial() {
        let traj = SplitTrajectory { states: vec![0usize; 8], flags: vec![false; 8], seed: 0 };
        let d = decompose(&traj, 1);
        assert_eq!(d.n_blocks, 0);
        assert_eq!(d.initial_range, Some((1, 8)));
        assert!(d.block_ranges.is_empty());
        assert_eq!(d.remainder_range, None);
    }

    #[test]
    fn decompose_flag_at_n_leaves_no_remainder() {
        let mut flags = vec![false; 6];
        flags[1] = true;
        flags[5] = true;
        let traj = SplitTrajectory { states: vec![0usize; 6], flags, seed: 0 };
        let d = decompose(&traj, 1);
        assert_eq!(d.n_blocks, 1);
        assert_eq!(d.block_ranges, vec![(3, 6)]);
        assert_eq!(d.remainder_range, None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn decompose_partitions_and_caps_n(
            flags in prop::collection::vec(any::<bool>(), 0..40),
            m in 1u64..4,
        ) {
            let n = flags.len();
            let traj = SplitTrajectory { states: vec![0usize; n], flags, seed: 0 };
            let d = decompose(&traj, m);
            prop_assert!(d.partitions_exactly());
            prop_assert!(d.n_blocks as u64 <= n as u64 / m);
        }
    }

    #[test]
    fn block_sums_anchors() {
        let mut flags = vec![false; 10];
        flags[2] = true;
        flags[6] = true;
        let traj = SplitTrajectory { states: (0usize..10).collect(), flags, seed: 0 };
        let d = decompose(&traj, 1);

        // f == 1: complete block sums are the gaps m T_{i+1}.
        let ones = block_sums(&d, &traj, |_| 1.0).unwrap();
        assert_eq!(ones.blocks, vec![4.0]);
        assert_eq!(ones.z0, 3.0);
        assert_eq!(ones.remainder, 3.0);

        // f == 0 vanishes everywhere.
        let zeros = block_sums(&d, &traj, |_| 0.0).unwrap();
        assert_eq!(zeros.total(), 0.0);

        // Integer-valued f: the partition identity is exact.
        let f = |s: &usize| (*s as f64) - 4.0;
        let sums = block_sums(&d, &traj, f).unwrap();
        let direct: f64 = traj.states.iter().map(f).sum();
        assert_eq!(sums.total(), direct);

        let short = SplitTrajectory { states: vec![0usize; 3], flags: vec![false; 3], seed: 0 };
        assert!(block_sums(&d, &short, |_| 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn block_sums_partition_identity_exact(
            flags in prop::collection::vec(any::<bool>(), 1..60),
            values in prop::collection::vec(-3i32..4, 1..60),
        ) {
            let n = flags.len().min(values.len());
            let traj = SplitTrajectory {
                states: values[..n].to_vec(),
                flags: flags[..n].to_vec(),
                seed: 0,
            };
            let d = decompose(&traj, 1);
            let f = |v: &i32| *v as f64;
            let sums = block_sums(&d, &traj, f).unwrap();
            let direct: f64 = traj.states.iter().map(f).sum();
            prop_assert_eq!(sums.total(), direct);
        }
    }

    #[test]
    fn stationary_doubly_stochastic_is_uniform() {
        let chain = FiniteChain::new(
            vec![
                vec![0.2, 0.5, 0.3],
                vec![0.5, 0.3, 0.2],
                vec![0.3, 0.2, 0.5],
            ],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        let pi = stationary_distribution(&chain, 1e-10).unwrap();
        for p in pi {
            assert_relative_eq!(p, 1.0 / 3.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn stationary_two_state_hand_elimination() {
        // 0.5 pi0 + 0.3 pi1 = pi0 and pi0 + pi1 = 1 give pi = (3/8, 5/8).
        let chain = two_state(0.5, 0.3);
        let pi = stationary_distribution(&chain, 1e-10).unwrap();
        assert_relative_eq!(pi[0], 3.0 / 8.0, max_relative = 1e-12);
        assert_relative_eq!(pi[1], 5.0 / 8.0, max_relative = 1e-12);
    }

    #[test]
    fn stationary_reducible_chain_errors() {
        let chain = FiniteChain::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5]).unwrap();
        assert!(stationary_distribution(&chain, 1e-10).is_err());
    }

    #[test]
    fn consecutive_block_sums_are_uncorrelated() {
        // P3 for m = 1: complete blocks are independent, so the lag-1 sample
        // correlation of Z_i(f) must vanish within 4 standard errors.
        let chain = two_state(0.4, 0.25);
        let cert = MinorizationCert { small_set: vec![0], delta: 1.0, nu: vec![0.6, 0.4], m: 1 };
        let split = FiniteSplitChain::new(chain, cert).unwrap();
        let fns: [fn(&usize) -> f64; 3] = [
            |s| *s as f64,
            |s| if *s == 0 { 1.0 } else { -1.0 },
            |s| (*s as f64) * 2.0 - 0.5,
        ];
        for (fi, f) in fns.iter().enumerate() {
            let mut pairs: Vec<(f64, f64)> = Vec::new();
            for t in 0..2000u64 {
                let traj = simulate_split(&split, 200, crate::rng::child_seed(99, "p3", t));
                let d = decompose(&traj, 1);
                let sums = block_sums(&d, &traj, f).unwrap();
                for w in sums.blocks.windows(2) {
                    pairs.push((w[0], w[1]));
                }
            }
            let n = pairs.len() as f64;
            let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for (x, y) in &pairs {
                sxx += (x - mx).powi(2);
                syy += (y - my).powi(2);
                sxy += (x - mx) * (y - my);
            }
            let r = sxy / (sxx * syy).sqrt();
            let se = 1.0 / n.sqrt();
            assert!(r.abs() <= 4.0 * se, "function {fi}: lag-1 correlation {r} vs 4se = {}", 4.0 * se);
        }
    }

    #[test]
    fn first_gap_law_invariant_across_rebuilds() {
        // The observable consequence of P4: rebuilding the engine from the
        // same inputs leaves the law of T1 unchanged. Two independently
        // seeded batches must agree (two-sample chi-square at 1e-3).
        let build = || {
            let chain = two_state(0.5, 0.3);
            let cert = MinorizationCert { small_set: vec![0], delta: 0.7, nu: vec![0.5, 0.5], m: 1 };
            FiniteSplitChain::new(chain, cert).unwrap()
        };
        let sample_t1 = |split: &FiniteSplitChain, base: u64| -> Vec<u64> {
            (0..30_000u64)
                .map(|i| {
                    let traj = simulate_split(split, 100, crate::rng::child_seed(base, "t1", i));
                    let d = decompose(&traj, 1);
                    d.s_times.first().copied().unwrap_or(0)
                })
                .collect()
        };
        let a = sample_t1(&build(), 1001);
        let b = sample_t1(&build(), 2002);
        // Bucket gaps at 1..=8 plus overflow.
        let bucket = |v: u64| (v.clamp(1, 9) - 1) as usize;
        let mut oa = [0u64; 9];
        let mut ob = [0u64; 9];
        for v in a {
            oa[bucket(v)] += 1;
        }
        for v in b {
            ob[bucket(v)] += 1;
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
        // df = 8, 1e-3 critical value 26.125.
        assert!(chi2 < 26.125, "chi2 = {chi2}");
    }
}
