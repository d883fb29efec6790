//! Experiment configuration: one TOML file per experiment with explicit
//! seeds, a chain section (named generator or external file), an optional
//! function-class section, and ledger overrides.
//!
//! ```toml
//! [experiment]
//! id = "klein_rio_iid"
//! bound = "klein_rio"
//! n = 1000
//! reps = 100000
//! seed = 7
//! t_grid = [10.0, 20.0, 40.0]
//!
//! [chain]
//! kind = "two_state"    # or loop_chain | counterexample22 | iid_signs | file
//! p01 = 0.3
//! p10 = 0.4
//!
//! [class]
//! kind = "scaled_signs"
//! coeffs = [1.0, -0.6, 0.25, 0.6, -1.0]
//!
//! [ledger]
//! k_markov_sum = 2.0
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{BoundError, BoundId, ConstantLedger};
use crate::chain::{ChainError, FiniteChain, FiniteSplitChain, MinorizationCert};
use crate::estimators::{class_from_state_values, EstimatorError, FunctionClass};
use crate::zoo::{loop_function_f_r, CounterexampleSequenceSpec, LoopChain, LoopState, TwoStateChain};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

fn default_eta() -> f64 {
    1.0
}
fn default_slack_delta() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: String,
    /// Bound identity for verify-bound / calibrate runs.
    #[serde(default)]
    pub bound: Option<String>,
    /// Trajectory length per replication.
    pub n: usize,
    /// Monte Carlo replications of the main batch.
    pub reps: u64,
    /// Base seed; every stream is derived from it.
    pub seed: u64,
    /// Deviation grid, strictly increasing.
    #[serde(default)]
    pub t_grid: Vec<f64>,
    /// Replications of the auxiliary batch (mean / norm plug-ins). Defaults
    /// to max(reps/5, 10^4).
    #[serde(default)]
    pub aux_reps: Option<u64>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_slack_delta")]
    pub slack_delta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Norm-solver tolerance.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Path statistic for bounded-difference experiments.
    #[serde(default)]
    pub statistic: Option<String>,
}

impl ExperimentSection {
    pub fn aux_reps(&self) -> u64 {
        self.aux_reps.unwrap_or_else(|| (self.reps / 5).max(10_000))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub kind: String,
    #[serde(default)]
    pub p01: Option<f64>,
    #[serde(default)]
    pub p10: Option<f64>,
    #[serde(default)]
    pub r: Option<u64>,
    #[serde(default)]
    pub max_tail_mass: Option<f64>,
    /// For `kind = "file"`: path to a chain file, relative to the config.
    #[serde(default)]
    pub path: Option<String>,
    /// Initial distribution override: "nu", "pi", or "uniform".
    #[serde(default)]
    pub initial: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSection {
    pub kind: String,
    /// Coefficients for scaled_signs / two_state_centered families.
    #[serde(default)]
    pub coeffs: Option<Vec<f64>>,
    /// Loop-chain indicator thresholds (one function per entry).
    #[serde(default)]
    pub rs: Option<Vec<u64>>,
    /// Explicit per-state value tables, keyed by function name.
    #[serde(default)]
    pub functions: Option<BTreeMap<String, Vec<f64>>>,
}

/// External chain file: explicit states with sparse kernel rows and a
/// certificate block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub states: Vec<String>,
    /// Sparse rows: one list of (state index, probability) pairs per state.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub initial: Vec<f64>,
    pub certificate: CertificateSection,
    /// Optional numeric value per state, for identity-style classes.
    #[serde(default)]
    pub state_values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSection {
    pub small_set: Vec<usize>,
    pub delta: f64,
    pub nu: Vec<f64>,
    pub m: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub chain: ChainSection,
    #[serde(default)]
    pub class: Option<ClassSection>,
    #[serde(default)]
    pub ledger: BTreeMap<String, f64>,
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.experiment;
        if e.id.is_empty() {
            return Err(ConfigError::Invalid("experiment.id must be nonempty".into()));
        }
        if e.n == 0 {
            return Err(ConfigError::Invalid("experiment.n must be >= 1".into()));
        }
        for w in e.t_grid.windows(2) {
            if w[1] <= w[0] {
                return Err(ConfigError::Invalid(format!(
                    "t_grid must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if let Some(bound) = &e.bound {
            BoundId::parse(bound)?;
        }
        Ok(())
    }

    /// Tail experiments need enough replications for standard errors to mean
    /// anything; calibration checks its own floor separately.
    pub fn validate_tail_reps(&self) -> Result<(), ConfigError> {
        if self.experiment.reps < 10_000 {
            return Err(ConfigError::Invalid(format!(
                "tail experiments require reps >= 10000, got {}",
                self.experiment.reps
            )));
        }
        if self.experiment.t_grid.is_empty() {
            return Err(ConfigError::Invalid("t_grid must be nonempty".into()));
        }
        Ok(())
    }

    pub fn bound_id(&self) -> Result<BoundId, ConfigError> {
        let name = self
            .experiment
            .bound
            .as_deref()
            .ok_or_else(|| ConfigError::Invalid("experiment.bound is required".into()))?;
        Ok(BoundId::parse(name)?)
    }

    pub fn ledger(&self) -> ConstantLedger {
        let mut ledger = ConstantLedger::new();
        for (name, value) in &self.ledger {
            ledger.set(name, *value);
        }
        ledger
    }

    /// Instantiate the chain and its function class. `base_dir` resolves
    /// relative chain-file paths.
    pub fn build_model(&self, base_dir: Option<&Path>) -> Result<ChainClassModel, ConfigError> {
        let chain = &self.chain;
        match chain.kind.as_str() {
            "two_state" => {
                let p01 = chain.p01.ok_or_else(|| ConfigError::Invalid("two_state needs p01".into()))?;
                let p10 = chain.p10.ok_or_else(|| ConfigError::Invalid("two_state needs p10".into()))?;
                let ts = TwoStateChain::new(p01, p10)?;
                let initial = match chain.initial.as_deref() {
                    Some("nu") => ts.rows()[0].clone().try_into().unwrap(),
                    Some("uniform") => [0.5, 0.5],
                    Some("pi") | None => ts.pi(),
                    Some(other) => {
                        return Err(ConfigError::Invalid(format!("unknown initial '{other}'")))
                    }
                };
                let split = FiniteSplitChain::new(ts.chain(initial)?, ts.cert())?;
                let (class, meta) = self.finite_class_for(FiniteKind::TwoState(ts))?;
                Ok(ChainClassModel::Finite {
                    split,
                    class,
                    kind: FiniteKind::TwoState(ts),
                    meta,
                })
            }
            "loop_chain" => {
                let loop_chain = match chain.initial.as_deref() {
                    Some("origin") => LoopChain::starting_at_origin(),
                    Some("nu") | None => LoopChain::new(),
                    Some(other) => {
                        return Err(ConfigError::Invalid(format!("unknown initial '{other}'")))
                    }
                };
                // max_tail_mass only affects dense views; keep it validated.
                if let Some(mtm) = chain.max_tail_mass {
                    loop_chain.truncated(mtm)?;
                }
                let (class, meta) = self.loop_class()?;
                Ok(ChainClassModel::Loop { chain: loop_chain, class, meta })
            }
            "counterexample22" => {
                let r = chain.r.ok_or_else(|| ConfigError::Invalid("counterexample22 needs r".into()))?;
                let spec = CounterexampleSequenceSpec::new(r, self.experiment.n)?;
                let (fin, cert, values) = spec.as_iid_chain();
                let split = FiniteSplitChain::new(fin, cert)?;
                let (class, meta) = self.finite_class_for(FiniteKind::Counterexample(spec, values.clone()))?;
                Ok(ChainClassModel::Finite {
                    split,
                    class,
                    kind: FiniteKind::Counterexample(spec, values),
                    meta,
                })
            }
            "iid_signs" => {
                let row = vec![0.5, 0.5];
                let fin = FiniteChain::new(vec![row.clone(), row.clone()], row.clone())?;
                let cert = MinorizationCert { small_set: vec![0, 1], delta: 1.0, nu: row, m: 1 };
                let split = FiniteSplitChain::new(fin, cert)?;
                let (class, meta) = self.finite_class_for(FiniteKind::IidSigns)?;
                Ok(ChainClassModel::Finite { split, class, kind: FiniteKind::IidSigns, meta })
            }
            "file" => {
                let rel = chain.path.as_deref().ok_or_else(|| ConfigError::Invalid("file chain needs path".into()))?;
                let path = match base_dir {
                    Some(dir) => dir.join(rel),
                    None => Path::new(rel).to_path_buf(),
                };
                let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let file: ChainFile = toml::from_str(&text)?;
                let n_states = file.states.len();
                let mut rows = vec![vec![0.0; n_states]; n_states];
                if file.rows.len() != n_states {
                    return Err(ConfigError::Invalid(format!(
                        "chain file has {} rows for {n_states} states",
                        file.rows.len()
                    )));
                }
                for (i, sparse) in file.rows.iter().enumerate() {
                    for &(j, p) in sparse {
                        if j >= n_states {
                            return Err(ConfigError::Invalid(format!("row {i} references state {j}")));
                        }
                        rows[i][j] += p;
                    }
                }
                let fin = FiniteChain::new(rows, file.initial.clone())?;
                let cert = MinorizationCert {
                    small_set: file.certificate.small_set.clone(),
                    delta: file.certificate.delta,
                    nu: file.certificate.nu.clone(),
                    m: file.certificate.m,
                };
                let split = FiniteSplitChain::new(fin, cert)?;
                let values = file.state_values.clone().unwrap_or_else(|| vec![0.0; n_states]);
                if values.len() != n_states {
                    return Err(ConfigError::Invalid("state_values length mismatch".into()));
                }
                let kind = FiniteKind::File { values: values.clone() };
                let (class, meta) = self.finite_class_for(kind.clone())?;
                Ok(ChainClassModel::Finite { split, class, kind, meta })
            }
            other => Err(ConfigError::Invalid(format!(
                "unknown chain kind '{other}'; available: two_state, loop_chain, counterexample22, iid_signs, file"
            ))),
        }
    }

    fn loop_class(&self) -> Result<(Option<FunctionClass<LoopState>>, ClassMeta), ConfigError> {
        let Some(section) = &self.class else { return Ok((None, ClassMeta::None)) };
        match section.kind.as_str() {
            "loop_indicator" => {
                let rs = section
                    .rs
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("loop_indicator needs rs".into()))?;
                if rs.is_empty() {
                    return Err(ConfigError::Invalid("rs must be nonempty".into()));
                }
                let rs_meta = rs.clone();
                let items = rs
                    .into_iter()
                    .map(|r| {
                        let f = loop_function_f_r(r);
                        let boxed: std::sync::Arc<dyn Fn(&LoopState) -> f64 + Send + Sync> =
                            std::sync::Arc::new(f);
                        (format!("f{r}"), boxed)
                    })
                    .collect();
                Ok((Some(FunctionClass::new(items, Some(1.0))?), ClassMeta::LoopIndicators(rs_meta)))
            }
            other => Err(ConfigError::Invalid(format!(
                "class kind '{other}' is not defined on the loop chain (use loop_indicator)"
            ))),
        }
    }

    fn finite_class_for(&self, kind: FiniteKind) -> Result<(Option<FunctionClass<usize>>, ClassMeta), ConfigError> {
        let Some(section) = &self.class else { return Ok((None, ClassMeta::None)) };
        match section.kind.as_str() {
            "scaled_signs" => {
                let coeffs = section
                    .coeffs
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("scaled_signs needs coeffs".into()))?;
                if coeffs.is_empty() {
                    return Err(ConfigError::Invalid("coeffs must be nonempty".into()));
                }
                let values = match &kind {
                    FiniteKind::IidSigns => vec![-1.0, 1.0],
                    FiniteKind::File { values } => values.clone(),
                    FiniteKind::Counterexample(_, values) => values.clone(),
                    FiniteKind::TwoState(_) => vec![-1.0, 1.0],
                };
                let sup = coeffs.iter().map(|c| c.abs()).fold(0.0f64, f64::max)
                    * values.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
                let rows = coeffs
                    .iter()
                    .map(|&c| (format!("scale_{c}"), values.iter().map(|&v| c * v).collect()))
                    .collect();
                Ok((
                    Some(class_from_state_values(rows, Some(sup))?),
                    ClassMeta::ScaledSigns(coeffs),
                ))
            }
            "two_state_centered" => {
                let FiniteKind::TwoState(ts) = kind else {
                    return Err(ConfigError::Invalid(
                        "two_state_centered requires a two_state chain".into(),
                    ));
                };
                let coeffs = section
                    .coeffs
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("two_state_centered needs coeffs".into()))?;
                let pi = ts.pi();
                let sup = coeffs.iter().map(|c| c.abs()).fold(0.0f64, f64::max) * pi[0].max(pi[1]);
                let rows = coeffs
                    .iter()
                    .map(|&c| {
                        let f = ts.centered_function(c);
                        (format!("centered_{c}"), vec![f[0], f[1]])
                    })
                    .collect();
                Ok((
                    Some(class_from_state_values(rows, Some(sup))?),
                    ClassMeta::TwoStateCentered(coeffs),
                ))
            }
            "identity" => {
                let values = match &kind {
                    FiniteKind::Counterexample(_, values) => values.clone(),
                    FiniteKind::File { values } => values.clone(),
                    FiniteKind::IidSigns => vec![-1.0, 1.0],
                    FiniteKind::TwoState(_) => {
                        return Err(ConfigError::Invalid(
                            "identity class needs state values; use scaled_signs or two_state_centered".into(),
                        ))
                    }
                };
                let sup = values.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
                Ok((
                    Some(class_from_state_values(vec![("x".into(), values)], Some(sup))?),
                    ClassMeta::Identity,
                ))
            }
            "state_values" => {
                let functions = section
                    .functions
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("state_values needs functions".into()))?;
                if functions.is_empty() {
                    return Err(ConfigError::Invalid("functions must be nonempty".into()));
                }
                let sup = functions
                    .values()
                    .flat_map(|row| row.iter().map(|v| v.abs()))
                    .fold(0.0f64, f64::max);
                let rows = functions.into_iter().collect();
                Ok((
                    Some(class_from_state_values(rows, Some(sup))?),
                    ClassMeta::StateValues,
                ))
            }
            other => Err(ConfigError::Invalid(format!(
                "unknown class kind '{other}'; available: scaled_signs, two_state_centered, identity, state_values, loop_indicator"
            ))),
        }
    }
}

/// Which class family the config used; exact parameter sourcing keys off it.
#[derive(Debug, Clone)]
pub enum ClassMeta {
    None,
    ScaledSigns(Vec<f64>),
    TwoStateCentered(Vec<f64>),
    Identity,
    StateValues,
    LoopIndicators(Vec<u64>),
}

/// What the config's chain generator was, with the data the harness needs to
/// source exact bound parameters.
#[derive(Debug, Clone)]
pub enum FiniteKind {
    TwoState(TwoStateChain),
    IidSigns,
    Counterexample(CounterexampleSequenceSpec, Vec<f64>),
    File { values: Vec<f64> },
}

/// A built chain plus its class, dispatched by state type.
pub enum ChainClassModel {
    Finite {
        split: FiniteSplitChain,
        class: Option<FunctionClass<usize>>,
        kind: FiniteKind,
        meta: ClassMeta,
    },
    Loop {
        chain: LoopChain,
        class: Option<FunctionClass<LoopState>>,
        meta: ClassMeta,
    },
}

impl std::fmt::Debug for ChainClassModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChainClassModel::Finite { kind, .. } => write!(f, "ChainClassModel::Finite({kind:?})"),
            ChainClassModel::Loop { .. } => write!(f, "ChainClassModel::Loop"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
        [experiment]
        id = "demo"
        bound = "klein_rio"
        n = 100
        reps = 20000
        seed = 7
        t_grid = [1.0, 2.0, 4.0]

        [chain]
        kind = "iid_signs"

        [class]
        kind = "scaled_signs"
        coeffs = [1.0, 0.5]
    "#;

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::from_str(GOOD).unwrap();
        assert_eq!(cfg.experiment.id, "demo");
        cfg.validate_tail_reps().unwrap();
        let model = cfg.build_model(None).unwrap();
        match model {
            ChainClassModel::Finite { class, .. } => {
                let class = class.unwrap();
                assert_eq!(class.len(), 2);
                assert_eq!(class.sup_bound(), Some(1.0));
            }
            _ => panic!("expected finite model"),
        }
    }

    #[test]
    fn rejects_bad_grid_and_bound() {
        let bad_grid = GOOD.replace("[1.0, 2.0, 4.0]", "[2.0, 1.0]");
        assert!(ExperimentConfig::from_str(&bad_grid).is_err());

        let bad_bound = GOOD.replace("klein_rio", "nonexistent");
        let err = ExperimentConfig::from_str(&bad_bound).unwrap_err();
        assert!(err.to_string().contains("available"), "{err}");
    }

    #[test]
    fn rejects_low_reps_for_tail_runs() {
        let low = GOOD.replace("reps = 20000", "reps = 500");
        let cfg = ExperimentConfig::from_str(&low).unwrap();
        assert!(cfg.validate_tail_reps().is_err());
    }

    #[test]
    fn loop_chain_with_indicator_class() {
        let text = r#"
            [experiment]
            id = "loop"
            bound = "markov_sum"
            n = 500
            reps = 10000
            seed = 1
            t_grid = [5.0, 10.0]

            [chain]
            kind = "loop_chain"
            max_tail_mass = 1e-8

            [class]
            kind = "loop_indicator"
            rs = [3]
        "#;
        let cfg = ExperimentConfig::from_str(text).unwrap();
        match cfg.build_model(None).unwrap() {
            ChainClassModel::Loop { class, .. } => assert_eq!(class.unwrap().len(), 1),
            _ => panic!("expected loop model"),
        }
    }

    #[test]
    fn two_state_centered_class() {
        let text = r#"
            [experiment]
            id = "ts"
            bound = "markov_empirical"
            n = 500
            reps = 10000
            seed = 1
            t_grid = [1.0, 2.0]

            [chain]
            kind = "two_state"
            p01 = 0.3
            p10 = 0.4
            initial = "nu"

            [class]
            kind = "two_state_centered"
            coeffs = [0.2, 0.5, 1.0]
        "#;
        let cfg = ExperimentConfig::from_str(text).unwrap();
        match cfg.build_model(None).unwrap() {
            ChainClassModel::Finite { class, kind: FiniteKind::TwoState(_), .. } => {
                assert_eq!(class.unwrap().len(), 3);
            }
            _ => panic!("expected two-state model"),
        }
    }

    #[test]
    fn chain_file_roundtrip() {
        let dir = std::env::temp_dir().join("regenbound-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let chain_path = dir.join("custom.toml");
        std::fs::write(
            &chain_path,
            r#"
                states = ["a", "b"]
                rows = [[[0, 0.5], [1, 0.5]], [[0, 0.3], [1, 0.7]]]
                initial = [1.0, 0.0]
                state_values = [0.0, 1.0]

                [certificate]
                small_set = [0]
                delta = 0.6
                nu = [0.5, 0.5]
                m = 1
            "#,
        )
        .unwrap();
        let text = r#"
            [experiment]
            id = "file"
            n = 50
            reps = 10000
            seed = 1

            [chain]
            kind = "file"
            path = "custom.toml"

            [class]
            kind = "identity"
        "#;
        let cfg = ExperimentConfig::from_str(text).unwrap();
        let model = cfg.build_model(Some(&dir)).unwrap();
        match model {
            ChainClassModel::Finite { split, class, .. } => {
                assert_eq!(split.chain().n_states(), 2);
                assert_eq!(class.unwrap().len(), 1);
            }
            _ => panic!("expected finite model"),
        }
    }

    #[test]
    fn ledger_overrides_flow_through() {
        let text = GOOD.to_string() + "\n[ledger]\nk_klein_rio = 2.0\n";
        let cfg = ExperimentConfig::from_str(&text).unwrap();
        let ledger = cfg.ledger();
        assert_eq!(ledger.resolve("k_klein_rio", 1.0), 2.0);
        assert_eq!(ledger.resolve("k_markov_sum", 1.0), 1.0);
    }
}
