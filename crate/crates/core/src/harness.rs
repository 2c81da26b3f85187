//! Experiment configuration, seeded replications and CSV output.
//!
//! A run is described by one JSON file ([`ExperimentConfig`]). Replication
//! `r` uses seed `base_seed + r` for both the reward noise and the
//! algorithm's own sampling, so per-replication output does not depend on
//! the thread count or on execution order.
//!
//! Output directory layout:
//!
//! * `trajectory.csv`: `t,replication,phase,arm,reward,inst_regret,cum_regret,e_t,sqrt_t_e_t,active_size`
//! * `mean_trajectory.csv`: `t,replications,mean_cum_regret,mean_e_t,mean_sqrt_t_e_t,mean_active_size`
//! * `summary.csv`: one row per replication, see [`SUMMARY_HEADER`]
//! * `manifest.json`: config echo, seeds, crate version, timestamps
//!
//! `design-cert` mode writes `policy.csv` and `certificate.csv` instead.
//! Reals are printed with 17 significant digits; a missing value is an empty
//! field.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{deo, DesignCertificate, DesignPolicy, FeatureSet, DEFAULT_FW_TOL};
use crate::environment::{
    make_gap_instance, make_mab_embedding, make_random_instance, Environment, NoiseSpec, ShiftSpec,
};
use crate::error::HarnessError;
use crate::sbe::{pac_budget, run_pure_exploration, run_sbe, ErrorTracking, RunRecord, SbeConfig};

pub const TRAJECTORY_HEADER: &str =
    "t,replication,phase,arm,reward,inst_regret,cum_regret,e_t,sqrt_t_e_t,active_size";
pub const MEAN_HEADER: &str =
    "t,replications,mean_cum_regret,mean_e_t,mean_sqrt_t_e_t,mean_active_size";
pub const SUMMARY_HEADER: &str = "replication,seed,steps,final_regret,declared_arm,declared_at,\
output_arm,best_arm,success,final_e_t,max_sqrt_t_e_t";

/// `√t·e_t` is only compared against its envelope from this round on.
pub const ENVELOPE_START: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Phase elimination, judged by cumulative regret.
    Regret,
    /// Pure exploration, judged by the greedy arm's suboptimality.
    Pac,
    /// Phase elimination, judged by the declared arm.
    Bai,
    /// Design and certificate only, no sampling.
    DesignCert,
    /// Pure exploration with the estimator refitted along the way.
    ErrorScaling,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSource {
    /// Plain-text matrix file: `d K`, then `K` rows of `d` numbers.
    File {
        path: PathBuf,
    },
    Inline {
        rows: Vec<Vec<f64>>,
    },
    /// Features uniform in the unit ball, `θ*` uniform on the sphere.
    Random {
        d: usize,
        k: usize,
        seed: u64,
    },
    /// Random instance with an exact suboptimality gap.
    GapInstance {
        d: usize,
        k: usize,
        gap: f64,
        seed: u64,
    },
    /// Multi-armed bandit with the given means, as standard-basis features.
    Mab {
        means: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub features: FeatureSource,
    /// Required for `file` and `inline` features; overrides generated ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default = "ShiftSpec::none")]
    pub shift: ShiftSpec,
    #[serde(default = "no_noise")]
    pub noise: NoiseSpec,
}

fn no_noise() -> NoiseSpec {
    NoiseSpec::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PureConfig {
    /// Sample budget; when absent it is derived from `epsilon` and `c2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    pub delta: f64,
    /// Target suboptimality of the greedy arm.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub c2: f64,
    /// Refit interval for `error-scaling`.
    pub snapshot_stride: u64,
    /// Constant `C` of the envelope `√t·e_t ≤ C·√(d·ln K)`.
    pub envelope: f64,
}

impl Default for PureConfig {
    fn default() -> Self {
        Self {
            budget: None,
            delta: 0.1,
            epsilon: None,
            c2: 4.0,
            snapshot_stride: 1,
            envelope: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub anchor: usize,
    pub fw_tol: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            anchor: 0,
            fw_tol: DEFAULT_FW_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub environment: EnvironmentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sbe: Option<SbeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pure: Option<PureConfig>,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default = "one")]
    pub replications: u64,
    #[serde(default)]
    pub base_seed: u64,
    pub output: PathBuf,
    /// Worker threads; all available cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Run once per value with `c2 = c3 = c`, each into `output/c_<c>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_sweep: Option<Vec<f64>>,
    /// Only rounds with `t % stride == 0` (and the last one) are written.
    #[serde(default = "one")]
    pub trajectory_stride: u64,
}

fn one() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| {
            let field = e.to_string();
            let field = field.split('`').nth(1).unwrap_or("<document>").to_owned();
            HarnessError::config(field, e.to_string())
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| {
            HarnessError::config("config", format!("{}: {e}", path.as_ref().display()))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.replications < 1 {
            return Err(HarnessError::config("replications", "must be at least 1"));
        }
        if self.trajectory_stride < 1 {
            return Err(HarnessError::config(
                "trajectory_stride",
                "must be at least 1",
            ));
        }
        if self.threads == Some(0) {
            return Err(HarnessError::config("threads", "must be at least 1"));
        }
        if !(self.design.fw_tol > 0.0) {
            return Err(HarnessError::config("design.fw_tol", "must be positive"));
        }
        if let Some(cs) = &self.c_sweep {
            if cs.is_empty() || cs.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                return Err(HarnessError::config("c_sweep", "values must be positive"));
            }
        }
        let (features, _) = self.environment.resolve()?;
        match self.mode {
            Mode::Regret | Mode::Bai => {
                let sbe = self
                    .sbe
                    .as_ref()
                    .ok_or_else(|| HarnessError::config("sbe", "required for this mode"))?;
                sbe.validate()
                    .map_err(|e| HarnessError::config("sbe", e.to_string()))?;
            }
            Mode::Pac | Mode::ErrorScaling => {
                let pure = self
                    .pure
                    .as_ref()
                    .ok_or_else(|| HarnessError::config("pure", "required for this mode"))?;
                if !(pure.delta > 0.0 && pure.delta < 1.0) {
                    return Err(HarnessError::config("pure.delta", "must lie in (0, 1)"));
                }
                if let Some(eps) = pure.epsilon {
                    if !(eps > 0.0) {
                        return Err(HarnessError::config("pure.epsilon", "must be positive"));
                    }
                }
                if pure.budget == Some(0) {
                    return Err(HarnessError::config("pure.budget", "must be at least 1"));
                }
                if pure.budget.is_none() && pure.epsilon.is_none() {
                    return Err(HarnessError::config(
                        "pure.budget",
                        "give a budget or an epsilon to derive it from",
                    ));
                }
                if pure.snapshot_stride < 1 {
                    return Err(HarnessError::config(
                        "pure.snapshot_stride",
                        "must be at least 1",
                    ));
                }
            }
            Mode::DesignCert => {
                if self.design.anchor >= features.len() {
                    return Err(HarnessError::config(
                        "design.anchor",
                        format!(
                            "arm {} out of range for {} arms",
                            self.design.anchor,
                            features.len()
                        ),
                    ));
                }
            }
        }
        if self.mode != Mode::DesignCert {
            self.environment.build(0)?;
        }
        Ok(())
    }
}

impl EnvironmentConfig {
    /// Feature set and (possibly overridden) `θ*` for this spec.
    pub fn resolve(&self) -> Result<(FeatureSet, Option<DVector<f64>>), HarnessError> {
        let bad = |m: String| HarnessError::config("environment.features", m);
        let (features, theta) = match &self.features {
            FeatureSource::File { path } => (
                FeatureSet::from_file(path).map_err(|e| bad(format!("{}: {e}", path.display())))?,
                None,
            ),
            FeatureSource::Inline { rows } => (
                FeatureSet::from_rows(rows).map_err(|e| bad(e.to_string()))?,
                None,
            ),
            FeatureSource::Random { d, k, seed } => {
                let env = make_random_instance(*d, *k, *seed).map_err(|e| bad(e.to_string()))?;
                (env.features().clone(), Some(env.theta_star().clone()))
            }
            FeatureSource::GapInstance { d, k, gap, seed } => {
                let env = make_gap_instance(*d, *k, *gap, *seed).map_err(|e| bad(e.to_string()))?;
                (env.features().clone(), Some(env.theta_star().clone()))
            }
            FeatureSource::Mab { means } => {
                let env = make_mab_embedding(means).map_err(|e| bad(e.to_string()))?;
                (env.features().clone(), Some(env.theta_star().clone()))
            }
        };
        let theta = match &self.theta {
            Some(t) => Some(DVector::from_column_slice(t)),
            None => theta,
        };
        Ok((features, theta))
    }

    /// Environment with reward noise keyed by `seed`.
    pub fn build(&self, seed: u64) -> Result<Environment, HarnessError> {
        let (features, theta) = self.resolve()?;
        let theta = theta.ok_or_else(|| {
            HarnessError::config("environment.theta", "required for file and inline features")
        })?;
        let env = Environment::new(features, theta, self.shift.clone(), self.noise, seed)
            .map_err(|e| HarnessError::config("environment", e.to_string()))?;
        Ok(env)
    }
}

/// One trajectory row of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub t: u64,
    pub phase: u32,
    pub arm: usize,
    pub reward: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
    /// Latest estimation error at or before `t`; absent before the first fit.
    pub e_t: Option<f64>,
    pub sqrt_t_e_t: Option<f64>,
    pub active_size: usize,
}

/// Per-round regret and estimation error of a finished run.
///
/// Regret is recomputed from `env`'s true means. `e_t` is carried forward
/// from the most recent estimator snapshot, measured against the anchor in
/// force at that snapshot.
pub fn compute_metrics(record: &RunRecord, env: &Environment) -> Vec<MetricRow> {
    let mut rows = Vec::with_capacity(record.steps.len());
    let mut cum = 0.0;
    let mut snaps = record.snapshots.iter().peekable();
    let mut e_t = None;
    for step in &record.steps {
        while let Some(s) = snaps.next_if(|s| s.t <= step.t) {
            e_t = Some(s.anchor_error);
        }
        let inst = env.regret(step.arm);
        cum += inst;
        rows.push(MetricRow {
            t: step.t,
            phase: step.phase,
            arm: step.arm,
            reward: step.reward,
            inst_regret: inst,
            cum_regret: cum,
            e_t,
            sqrt_t_e_t: e_t.map(|e| (step.t as f64).sqrt() * e),
            active_size: step.active_size,
        });
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSummary {
    pub replication: u64,
    pub seed: u64,
    pub steps: u64,
    pub final_regret: f64,
    pub declared_arm: Option<usize>,
    pub declared_at: Option<u64>,
    /// Declared arm for elimination runs, greedy arm for pure exploration.
    pub output_arm: Option<usize>,
    pub best_arm: usize,
    pub success: bool,
    pub final_e_t: Option<f64>,
    /// Largest `√t·e_t` from round [`ENVELOPE_START`] on.
    pub max_sqrt_t_e_t: Option<f64>,
}

struct Replication {
    rows: Vec<MetricRow>,
    summary: ReplicationSummary,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summaries: Vec<ReplicationSummary>,
}

/// Runs `f(replication, seed)` for every replication on a pool of
/// `threads` workers and returns the results in replication order.
pub fn replicate<T, E, F>(
    replications: u64,
    base_seed: u64,
    threads: Option<usize>,
    f: F,
) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64, u64) -> Result<T, E> + Sync,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().expect("thread pool");
    pool.install(|| {
        (0..replications)
            .into_par_iter()
            .map(|r| f(r, base_seed.wrapping_add(r)))
            .collect()
    })
}

/// Executes `cfg` and writes its output files. With a `c_sweep` there is
/// one outcome per value.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentOutcome>, HarnessError> {
    cfg.validate()?;
    match &cfg.c_sweep {
        None => Ok(vec![run_single(cfg, &cfg.output)?]),
        Some(cs) => cs
            .iter()
            .map(|&c| {
                let mut sub = cfg.clone();
                sub.c_sweep = None;
                if let Some(s) = sub.sbe.as_mut() {
                    s.c2 = c;
                    s.c3 = c;
                }
                if let Some(p) = sub.pure.as_mut() {
                    p.c2 = c;
                }
                let dir = cfg.output.join(format!("c_{c}"));
                run_single(&sub, &dir)
            })
            .collect(),
    }
}

fn run_single(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutcome, HarnessError> {
    let started = unix_now();
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut files = Vec::new();
    let mut summaries = Vec::new();

    if cfg.mode == Mode::DesignCert {
        let (features, _) = cfg.environment.resolve()?;
        let (policy, cert) = deo(&features, cfg.design.anchor, cfg.design.fw_tol)?;
        files.push(write(dir.join("policy.csv"), &policy_csv(&policy))?);
        files.push(write(dir.join("certificate.csv"), &certificate_csv(&cert))?);
    } else {
        let reps = replicate(cfg.replications, cfg.base_seed, cfg.threads, |r, seed| {
            run_replication(cfg, r, seed)
        })?;
        let stride = cfg.trajectory_stride;
        files.push(write(
            dir.join("trajectory.csv"),
            &trajectory_csv(&reps, stride),
        )?);
        files.push(write(
            dir.join("mean_trajectory.csv"),
            &mean_csv(&reps, stride),
        )?);
        summaries = reps.into_iter().map(|r| r.summary).collect();
        files.push(write(dir.join("summary.csv"), &summary_csv(&summaries))?);
    }

    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "seeds": (0..cfg.replications).map(|r| cfg.base_seed.wrapping_add(r)).collect::<Vec<_>>(),
        "started_unix": started,
        "finished_unix": unix_now(),
        "files": files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    files.push(write(dir.join("manifest.json"), &text)?);
    Ok(ExperimentOutcome {
        dir: dir.to_path_buf(),
        files,
        summaries,
    })
}

fn run_replication(cfg: &ExperimentConfig, r: u64, seed: u64) -> Result<Replication, HarnessError> {
    let env = cfg.environment.build(seed)?;
    let best = env.best_arm();
    let (record, output_arm, success) = match cfg.mode {
        Mode::Regret | Mode::Bai => {
            let sbe = cfg.sbe.as_ref().expect("validated");
            let record = run_sbe(&env, sbe, seed)?;
            let declared = record.declared.map(|d| d.arm);
            (record, declared, declared == Some(best))
        }
        Mode::Pac | Mode::ErrorScaling => {
            let pure = cfg.pure.as_ref().expect("validated");
            let budget = match pure.budget {
                Some(b) => b,
                None => pac_budget(
                    env.features().rank(),
                    env.num_arms(),
                    pure.epsilon.expect("validated"),
                    pure.delta,
                    pure.c2,
                ),
            };
            let tracking = if cfg.mode == Mode::ErrorScaling {
                ErrorTracking::Every(pure.snapshot_stride)
            } else {
                ErrorTracking::Final
            };
            let out = run_pure_exploration(&env, budget, pure.delta, seed, tracking)?;
            let arm = out.greedy_arm;
            let success = match (cfg.mode, pure.epsilon) {
                (Mode::ErrorScaling, _) => {
                    let d = env.features().rank() as f64;
                    let k = env.num_arms() as f64;
                    let cap = pure.envelope * (d * k.ln()).sqrt();
                    envelope_max(&out.record).is_none_or(|m| m <= cap)
                }
                (_, Some(eps)) => env.regret(arm) <= eps,
                (_, None) => arm == best,
            };
            (out.record, Some(arm), success)
        }
        Mode::DesignCert => unreachable!("handled without replications"),
    };
    let rows = compute_metrics(&record, &env);
    let summary = ReplicationSummary {
        replication: r,
        seed,
        steps: rows.len() as u64,
        final_regret: rows.last().map_or(0.0, |m| m.cum_regret),
        declared_arm: record.declared.map(|d| d.arm),
        declared_at: record.declared.map(|d| d.time),
        output_arm,
        best_arm: best,
        success,
        final_e_t: record.snapshots.last().map(|s| s.anchor_error),
        max_sqrt_t_e_t: envelope_max(&record),
    };
    Ok(Replication { rows, summary })
}

/// Largest `√t·e_t` over snapshots at or after [`ENVELOPE_START`]. Between
/// snapshots `e_t` is constant, so the maximum over each held interval is
/// attained at its right end.
pub fn envelope_max(record: &RunRecord) -> Option<f64> {
    let last_t = record.steps.last().map_or(0, |s| s.t);
    let snaps = &record.snapshots;
    let mut best: Option<f64> = None;
    for (i, s) in snaps.iter().enumerate() {
        let held_until = snaps.get(i + 1).map_or(last_t, |n| n.t - 1).max(s.t);
        if held_until < ENVELOPE_START {
            continue;
        }
        let v = (held_until as f64).sqrt() * s.anchor_error;
        best = Some(best.map_or(v, |b: f64| b.max(v)));
    }
    best
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, HarnessError> {
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_real(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

fn opt_int<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn keep(t: u64, last: u64, stride: u64) -> bool {
    t.is_multiple_of(stride) || t == last
}

fn trajectory_csv(reps: &[Replication], stride: u64) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for rep in reps {
        let last = rep.rows.last().map_or(0, |m| m.t);
        for m in rep.rows.iter().filter(|m| keep(m.t, last, stride)) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                m.t,
                rep.summary.replication,
                m.phase,
                m.arm,
                fmt_real(m.reward),
                fmt_real(m.inst_regret),
                fmt_real(m.cum_regret),
                opt_real(m.e_t),
                opt_real(m.sqrt_t_e_t),
                m.active_size
            );
        }
    }
    out
}

fn mean_csv(reps: &[Replication], stride: u64) -> String {
    let mut out = String::from(MEAN_HEADER);
    out.push('\n');
    let len = reps.iter().map(|r| r.rows.len()).max().unwrap_or(0);
    let last = len as u64;
    for i in 0..len {
        let rows: Vec<&MetricRow> = reps.iter().filter_map(|r| r.rows.get(i)).collect();
        let t = rows[0].t;
        if !keep(t, last, stride) {
            continue;
        }
        let n = rows.len() as f64;
        let mean_of = |vals: Vec<f64>| {
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            t,
            rows.len(),
            fmt_real(rows.iter().map(|m| m.cum_regret).sum::<f64>() / n),
            opt_real(mean_of(rows.iter().filter_map(|m| m.e_t).collect())),
            opt_real(mean_of(rows.iter().filter_map(|m| m.sqrt_t_e_t).collect())),
            fmt_real(rows.iter().map(|m| m.active_size as f64).sum::<f64>() / n),
        );
    }
    out
}

fn summary_csv(summaries: &[ReplicationSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.replication,
            s.seed,
            s.steps,
            fmt_real(s.final_regret),
            opt_int(s.declared_arm),
            opt_int(s.declared_at),
            opt_int(s.output_arm),
            s.best_arm,
            u8::from(s.success),
            opt_real(s.final_e_t),
            opt_real(s.max_sqrt_t_e_t),
        );
    }
    out
}

pub fn policy_csv(policy: &DesignPolicy) -> String {
    let mut out = String::from("arm_index,probability\n");
    for (i, p) in policy.probabilities().iter().enumerate() {
        let _ = writeln!(out, "{i},{}", fmt_real(*p));
    }
    out
}

pub fn certificate_csv(cert: &DesignCertificate) -> String {
    format!(
        "max_anchor_norm,max_centered_norm,support_size,rank,anchor_bound,centered_bound\n{},{},{},{},{},{}\n",
        fmt_real(cert.max_anchor_norm),
        fmt_real(cert.max_centered_norm),
        cert.support_size,
        cert.rank,
        fmt_real(cert.anchor_bound()),
        fmt_real(cert.centered_bound()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbe::{ErrorSnapshot, StepLog};

    fn two_arm_env() -> Environment {
        Environment::new(
            FeatureSet::standard_basis(2),
            DVector::from_vec(vec![1.0, 0.5]),
            ShiftSpec::none(),
            NoiseSpec::None,
            0,
        )
        .unwrap()
    }

    fn record(arms: &[usize], snaps: &[(u64, f64)]) -> RunRecord {
        let env = two_arm_env();
        let mut rec = RunRecord {
            seed: 0,
            steps: Vec::new(),
            cumulative_regret: Vec::new(),
            phases: Vec::new(),
            snapshots: snaps
                .iter()
                .map(|&(t, e)| ErrorSnapshot {
                    t,
                    anchor_error: e,
                    global_error: e,
                })
                .collect(),
            declared: None,
            audit: env.audit(1),
        };
        let mut cum = 0.0;
        for (i, &arm) in arms.iter().enumerate() {
            cum += env.regret(arm);
            rec.cumulative_regret.push(cum);
            rec.steps.push(StepLog {
                t: i as u64 + 1,
                phase: 1,
                arm,
                reward: env.mean(arm),
                regret: env.regret(arm),
                active_size: 2,
            });
        }
        rec
    }

    #[test]
    fn regret_of_alternating_arms() {
        let arms: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let rows = compute_metrics(&record(&arms, &[]), &two_arm_env());
        assert!((rows.last().unwrap().cum_regret - 2.5).abs() < 1e-12);
        assert!(rows.iter().all(|m| m.e_t.is_none()));
    }

    #[test]
    fn regret_zero_on_best_arm() {
        let rows = compute_metrics(&record(&[0; 7], &[]), &two_arm_env());
        assert!(rows.iter().all(|m| m.cum_regret == 0.0));
    }

    #[test]
    fn error_carried_forward() {
        let rows = compute_metrics(&record(&[0; 6], &[(2, 0.5), (4, 0.0)]), &two_arm_env());
        let e: Vec<Option<f64>> = rows.iter().map(|m| m.e_t).collect();
        assert_eq!(
            e,
            vec![None, Some(0.5), Some(0.5), Some(0.0), Some(0.0), Some(0.0)]
        );
        for m in &rows {
            if let (Some(e), Some(s)) = (m.e_t, m.sqrt_t_e_t) {
                assert!((s - (m.t as f64).sqrt() * e).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn envelope_uses_right_end_of_hold() {
        let rec = record(&[0; 400], &[(50, 1.0), (300, 0.1)]);
        // first snapshot held through t = 299
        let m = envelope_max(&rec).unwrap();
        assert!((m - 299f64.sqrt()).abs() < 1e-12);
        assert!(envelope_max(&record(&[0; 50], &[(10, 1.0)])).is_none());
    }

    #[test]
    fn real_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 123456.789] {
            let s = fmt_real(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("design-cert".parse::<Mode>().unwrap(), Mode::DesignCert);
        assert_eq!("error-scaling".parse::<Mode>().unwrap(), Mode::ErrorScaling);
        assert!("nope".parse::<Mode>().is_err());
    }

    #[test]
    fn config_errors_name_the_field() {
        let text = r#"{"mode":"regret","environment":{"features":{"kind":"mab","means":[0.9,0.1]}},"output":"x"}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        match cfg.validate() {
            Err(HarnessError::Config { field, .. }) => assert_eq!(field, "sbe"),
            other => panic!("{other:?}"),
        }
        let text = r#"{"mode":"regret","environment":{"features":{"kind":"inline","rows":[[1,0],[0,1]]}},"sbe":{},"output":"x"}"#;
        match ExperimentConfig::from_json(text).unwrap().validate() {
            Err(HarnessError::Config { field, .. }) => assert_eq!(field, "environment.theta"),
            other => panic!("{other:?}"),
        }
        let err = ExperimentConfig::from_json(r#"{"mode":"regret","bogus":1}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn replicate_orders_by_index() {
        let out: Vec<(u64, u64)> =
            replicate::<_, (), _>(5, 10, Some(2), |r, s| Ok((r, s))).unwrap();
        assert_eq!(out, (0..5).map(|r| (r, 10 + r)).collect::<Vec<_>>());
    }
}
