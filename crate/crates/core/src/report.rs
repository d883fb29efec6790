//! Result records and their CSV/JSON serialization.
//!
//! Outputs are byte-deterministic for a fixed config and seed: rows are
//! written in grid order, constants in name order, and floats in Rust's
//! shortest round-trip form. Wall-clock timings are kept out of the files.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::bounds::{BoundId, BoundParams, CalibrationTarget, ConstantRecord};
use crate::estimators::BlockStats;

/// One grid point of a tail experiment.
#[derive(Debug, Clone, Serialize)]
pub struct TailRow {
    pub t: f64,
    /// Threshold on the statistic that defines the event at this t.
    pub threshold: f64,
    pub mc_estimate: f64,
    pub mc_se: f64,
    pub bound: f64,
    pub dominated: bool,
    pub vacuous: bool,
}

/// Full record of one tail experiment.
#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub experiment_id: String,
    pub bound: BoundId,
    pub n: usize,
    pub reps: u64,
    pub aux_reps: u64,
    pub main_seed: u64,
    pub aux_seed: u64,
    pub rows: Vec<TailRow>,
    /// Every non-vacuous row dominated within the 3 SE slack.
    pub all_dominated: bool,
    pub params: BoundParams,
    /// Where each parameter came from (exact closed form, aux estimate, ...).
    pub param_sources: BTreeMap<String, String>,
    /// Constants the evaluator read, with default/override/calibrated tags.
    pub constants: BTreeMap<String, ConstantRecord>,
    /// Measured, but excluded from serialized output to keep runs
    /// byte-reproducible.
    #[serde(skip)]
    pub wall_time_ms: u128,
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

impl TailReport {
    /// Harness CSV schema: experiment_id, t, mc_estimate, mc_se, bound,
    /// dominated, vacuous.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment_id,t,mc_estimate,mc_se,bound,dominated,vacuous\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.experiment_id,
                row.t,
                row.mc_estimate,
                row.mc_se,
                row.bound,
                fmt_bool(row.dominated),
                fmt_bool(row.vacuous)
            ));
        }
        out
    }

    /// Catalog curve schema: evaluator, t, bound, mc_estimate, mc_se,
    /// constants_json.
    pub fn to_curve_csv(&self) -> String {
        let constants_json = serde_json::to_string(&self.constants).expect("constants serialize");
        let escaped = csv_escape(&constants_json);
        let mut out = String::from("evaluator,t,bound,mc_estimate,mc_se,constants_json\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.bound.name(),
                row.t,
                row.bound,
                row.mc_estimate,
                row.mc_se,
                escaped
            ));
        }
        out
    }
}

/// Quote a CSV field, doubling embedded quotes.
pub fn csv_escape(field: &str) -> String {
    format!("\"{}\"", field.replace('"', "\"\""))
}

/// Pretty JSON with a trailing newline (stable field order via struct order
/// and BTreeMaps).
pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialize");
    s.push('\n');
    s
}

/// Block-statistics report keyed by function name.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub experiment_id: String,
    pub seed: u64,
    pub trajectories: u64,
    pub n: usize,
    pub block_count: usize,
    pub mean_t2: f64,
    pub sigma_sq_class: f64,
    pub functions: BTreeMap<String, FnEstimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FnEstimate {
    pub mean_z1: f64,
    pub var_z1: f64,
    pub cov_z1z2: f64,
    pub asymptotic_variance: f64,
}

impl EstimateReport {
    pub fn from_stats(
        experiment_id: &str,
        seed: u64,
        trajectories: u64,
        n: usize,
        stats: &BlockStats,
        m: u64,
    ) -> Self {
        let asym = crate::estimators::asymptotic_variance(stats, m);
        let functions = stats
            .per_function
            .iter()
            .zip(asym.iter())
            .map(|(f, (_, av))| {
                (
                    f.name.clone(),
                    FnEstimate {
                        mean_z1: f.mean_z1,
                        var_z1: f.var_z1,
                        cov_z1z2: f.cov_z1z2,
                        asymptotic_variance: *av,
                    },
                )
            })
            .collect();
        Self {
            experiment_id: experiment_id.to_string(),
            seed,
            trajectories,
            n,
            block_count: stats.block_count,
            mean_t2: stats.mean_t2,
            sigma_sq_class: stats.sigma_sq_class,
            functions,
        }
    }
}

/// Outcome of a constant calibration.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub experiment_id: String,
    pub bound: BoundId,
    pub knob: String,
    pub constant: f64,
    pub seed: u64,
    pub mc_budget: u64,
    pub targets: Vec<CalibrationTarget>,
    /// Bound curve at the calibrated constant over the training grid.
    pub curve: Vec<(f64, f64)>,
}

/// One r of the log-necessity experiment.
#[derive(Debug, Clone, Serialize)]
pub struct LogNecessityRow {
    pub r: u64,
    pub n: usize,
    /// P(|Σ X_i| ≥ r) estimate and its floor (1/4) min(n e^{-r}, 1).
    pub sum_exceed: f64,
    pub sum_se: f64,
    pub levy_floor: f64,
    pub levy_ok: bool,
    /// P(max_i |X_i| ≥ r) estimate and its floor (1/2) min(n e^{-r}, 1).
    pub max_exceed: f64,
    pub max_floor: f64,
    pub max_ok: bool,
    /// Hypothetical curves exp(-r/(K ln^β n)) at the reference K, keyed by β.
    pub curves: BTreeMap<String, CurveCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveCheck {
    pub value: f64,
    /// The curve dips below the Monte Carlo estimate minus 3 SE.
    pub violated: bool,
}

/// The block-sum analogue on the loop chain.
#[derive(Debug, Clone, Serialize)]
pub struct BlockAnalogRow {
    pub r: u64,
    pub blocks: usize,
    pub exceed: f64,
    pub se: f64,
    pub floor: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LogNecessityReport {
    pub seed: u64,
    pub reps: u64,
    /// Reference constant: calibrated so the β = 1 curve dominates at every r.
    pub k_ref: f64,
    pub rows: Vec<LogNecessityRow>,
    pub block_rows: Vec<BlockAnalogRow>,
    /// Per β key: violated at some r when evaluated at k_ref.
    pub beta_violated: BTreeMap<String, bool>,
    #[serde(skip)]
    pub wall_time_ms: u128,
}

impl LogNecessityReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("r,n,sum_exceed,sum_se,levy_floor,levy_ok,max_exceed,max_floor,max_ok\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.r,
                row.n,
                row.sum_exceed,
                row.sum_se,
                row.levy_floor,
                fmt_bool(row.levy_ok),
                row.max_exceed,
                row.max_floor,
                fmt_bool(row.max_ok)
            ));
        }
        out
    }
}

/// Trajectory dump: step, state label, regeneration flag.
pub fn trajectory_csv(steps: impl Iterator<Item = (usize, String, bool)>) -> String {
    let mut out = String::from("step,state,flag\n");
    for (step, state, flag) in steps {
        out.push_str(&format!("{},{},{}\n", step, csv_escape(&state), fmt_bool(flag)));
    }
    out
}
