//! Phase elimination with orthogonalized designs.
//!
//! Each phase `ℓ` computes the orthogonalized design over the surviving arms
//! (anchored at the smallest surviving index), samples `n_ℓ` arms from it,
//! fits the ridge estimator on that phase's samples only, and drops every
//! arm whose estimated reward trails the leader by more than `ε_ℓ = 2^{−ℓ}`.
//! A lone survivor is declared best and played until the horizon.

use nalgebra::DVector;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{deo, DesignCertificate, DesignPolicy, DEFAULT_FW_TOL};
use crate::environment::{AssumptionAudit, Environment};
use crate::error::SbeError;
use crate::estimator::{max_estimation_error, regularizer, EstimatorState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Fixed,
    /// Minimum of the fixed schedule and a `d²/ε²` schedule free of `ln K`.
    Adaptive,
}

/// Which arm count enters the logarithm of the phase length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArmCount {
    /// Surviving arms `|A_ℓ|`.
    #[default]
    Active,
    /// All `K` arms.
    Original,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbeConfig {
    pub delta: f64,
    pub horizon: u64,
    pub c2: f64,
    pub c3: f64,
    pub schedule: Schedule,
    pub fw_tol: f64,
    pub arm_count: ArmCount,
}

impl Default for SbeConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            horizon: 100_000,
            c2: 1.0,
            c3: 1.0,
            schedule: Schedule::Fixed,
            fw_tol: DEFAULT_FW_TOL,
            arm_count: ArmCount::Active,
        }
    }
}

impl SbeConfig {
    pub fn validate(&self) -> Result<(), SbeError> {
        let bad = |m: String| Err(SbeError::InvalidConfig(m));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.c2 > 0.0) || !(self.c3 > 0.0) {
            return bad(format!(
                "c2, c3 must be positive, got {}, {}",
                self.c2, self.c3
            ));
        }
        if !(self.fw_tol > 0.0) {
            return bad(format!("fw_tol must be positive, got {}", self.fw_tol));
        }
        Ok(())
    }
}

fn to_count(x: f64, phase: u32) -> Result<u64, SbeError> {
    if !x.is_finite() || x >= 9.0e18 {
        return Err(SbeError::ScheduleOverflow { phase });
    }
    Ok(x.ceil().max(1.0) as u64)
}

/// Number of samples `n_ℓ` drawn in phase `ℓ`.
///
/// Fixed: `4·c2·⌈d/ε²·ln(dKℓ(ℓ+1)/(δε)) + d^{3/2}/ε·ln(dKℓ(ℓ+1)/δ)⌉`.
/// Adaptive: the minimum of that and `4·c3·⌈d²/ε²·ln(dℓ(ℓ+1)/(δε))⌉`.
pub fn phase_length(
    phase: u32,
    d_eff: usize,
    k_active: usize,
    cfg: &SbeConfig,
) -> Result<u64, SbeError> {
    if phase < 1 {
        return Err(SbeError::InvalidConfig("phases start at 1".into()));
    }
    let l = phase as f64;
    let d = d_eff.max(1) as f64;
    let k = k_active as f64;
    let eps = 0.5f64.powi(phase as i32);
    let delta = cfg.delta;
    let ll = l * (l + 1.0);
    let inner = d / (eps * eps) * (d * k * ll / (delta * eps)).ln()
        + d.powf(1.5) / eps * (d * k * ll / delta).ln();
    let fixed = to_count(4.0 * cfg.c2 * to_count(inner, phase)? as f64, phase)?;
    match cfg.schedule {
        Schedule::Fixed => Ok(fixed),
        Schedule::Adaptive => {
            let inner = d * d / (eps * eps) * (d * ll / (delta * eps)).ln();
            let adaptive = to_count(4.0 * cfg.c3 * to_count(inner, phase)? as f64, phase)?;
            Ok(fixed.min(adaptive))
        }
    }
}

/// Arms in `active` whose estimated reward is within `epsilon` of the best
/// estimate. Arms exactly `epsilon` behind are kept.
pub fn eliminate(
    features: &crate::design::FeatureSet,
    active: &[usize],
    theta_hat: &DVector<f64>,
    epsilon: f64,
) -> Vec<usize> {
    let est: Vec<f64> = active
        .iter()
        .map(|&i| features.feature(i).dot(theta_hat))
        .collect();
    let top = est.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    active
        .iter()
        .zip(&est)
        .filter(|(_, &v)| !(top - v > epsilon))
        .map(|(&i, _)| i)
        .collect()
}

/// `argmax_i x_iᵀθ̂`, smallest index on ties.
pub fn greedy_arm(features: &crate::design::FeatureSet, theta_hat: &DVector<f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, x) in features.features().iter().enumerate() {
        let v = x.dot(theta_hat);
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub t: u64,
    pub phase: u32,
    pub arm: usize,
    pub reward: f64,
    pub regret: f64,
    pub active_size: usize,
}

#[derive(Debug, Clone)]
pub struct PhaseLog {
    pub phase: u32,
    pub active: Vec<usize>,
    pub anchor: usize,
    pub epsilon: f64,
    /// Scheduled length `n_ℓ`.
    pub length: u64,
    /// Samples actually drawn (less than `length` when cut by the horizon).
    pub steps: u64,
    pub start: u64,
    pub certificate: DesignCertificate,
    pub policy: DesignPolicy,
    pub beta: f64,
    pub theta_hat: DVector<f64>,
    /// `max_{i ∈ A_ℓ} |(x_i − x_anchor)ᵀ(θ̂ − θ*)|`.
    pub max_error: f64,
    pub truncated: bool,
    pub survivors: Vec<usize>,
}

/// Estimation error measured at round `t` for an estimate fitted on the
/// samples available at that round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSnapshot {
    pub t: u64,
    /// Error relative to the current anchor over the current arm set.
    pub anchor_error: f64,
    /// `max_i |(x_i − x_1)ᵀ(θ̂ − θ*)|` over all arms.
    pub global_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Declaration {
    pub arm: usize,
    /// Number of rounds completed when the arm was declared.
    pub time: u64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub steps: Vec<StepLog>,
    pub cumulative_regret: Vec<f64>,
    pub phases: Vec<PhaseLog>,
    pub snapshots: Vec<ErrorSnapshot>,
    pub declared: Option<Declaration>,
    pub audit: AssumptionAudit,
}

impl RunRecord {
    fn new(seed: u64, audit: AssumptionAudit) -> Self {
        Self {
            seed,
            steps: Vec::new(),
            cumulative_regret: Vec::new(),
            phases: Vec::new(),
            snapshots: Vec::new(),
            declared: None,
            audit,
        }
    }

    fn push(&mut self, step: StepLog) {
        let prev = self.cumulative_regret.last().copied().unwrap_or(0.0);
        self.cumulative_regret.push(prev + step.regret);
        self.steps.push(step);
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    /// Cumulative regret after `t` rounds (`t` clamped to the run length).
    pub fn regret_at(&self, t: u64) -> f64 {
        if t == 0 || self.cumulative_regret.is_empty() {
            return 0.0;
        }
        let idx = (t as usize).min(self.cumulative_regret.len()) - 1;
        self.cumulative_regret[idx]
    }
}

/// Declaration time of the best arm, if any.
pub fn bai_stopping_time(record: &RunRecord) -> Option<u64> {
    record.declared.map(|d| d.time)
}

fn sampler(policy: &DesignPolicy) -> WeightedIndex<f64> {
    WeightedIndex::new(policy.probabilities()).expect("design policies have positive mass")
}

/// Runs the phase elimination algorithm for `cfg.horizon` rounds.
///
/// `seed` drives arm sampling only; rewards come from `env`'s own stream.
pub fn run_sbe(env: &Environment, cfg: &SbeConfig, seed: u64) -> Result<RunRecord, SbeError> {
    cfg.validate()?;
    let features = env.features();
    let k = features.len();
    if k < 2 {
        return Err(SbeError::InvalidConfig("need at least two arms".into()));
    }
    let audit = env.audit(cfg.horizon);
    if !audit.is_clean() {
        log::warn!("boundedness assumptions violated: {audit:?}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut record = RunRecord::new(seed, audit);
    let mut active: Vec<usize> = (0..k).collect();
    let mut estimator = EstimatorState::new(features.dim());
    let all: Vec<usize> = (0..k).collect();
    let mut t: u64 = 1;
    let mut phase: u32 = 1;

    while t <= cfg.horizon {
        if active.len() == 1 {
            let arm = active[0];
            record
                .declared
                .get_or_insert(Declaration { arm, time: t - 1 });
            let regret = env.regret(arm);
            while t <= cfg.horizon {
                let reward = env.step(arm, t)?;
                record.push(StepLog {
                    t,
                    phase,
                    arm,
                    reward,
                    regret,
                    active_size: 1,
                });
                t += 1;
            }
            break;
        }

        let anchor = active[0];
        let sub = features.subset(&active)?;
        let (sub_policy, certificate) = deo(&sub, 0, cfg.fw_tol)?;
        let policy = sub_policy.embed(&active, k);
        let k_log = match cfg.arm_count {
            ArmCount::Active => active.len(),
            ArmCount::Original => k,
        };
        let length = phase_length(phase, certificate.rank, k_log, cfg)?;
        let epsilon = 0.5f64.powi(phase as i32);
        let mean = policy.mean(features);
        let centered: Vec<DVector<f64>> = features.features().iter().map(|x| x - &mean).collect();
        let dist = sampler(&policy);

        estimator.reset();
        let start = t;
        while estimator.count() < length && t <= cfg.horizon {
            let arm = dist.sample(&mut rng);
            let reward = env.step(arm, t)?;
            estimator.update(&centered[arm], reward)?;
            record.push(StepLog {
                t,
                phase,
                arm,
                reward,
                regret: env.regret(arm),
                active_size: active.len(),
            });
            t += 1;
        }
        let steps = estimator.count();
        let truncated = steps < length;
        let beta = regularizer(length * phase as u64 * (phase as u64 + 1), cfg.delta);
        let theta_hat = estimator.solve(beta)?;
        let max_error =
            max_estimation_error(features, &active, anchor, &theta_hat, env.theta_star());
        record.snapshots.push(ErrorSnapshot {
            t: t - 1,
            anchor_error: max_error,
            global_error: max_estimation_error(features, &all, 0, &theta_hat, env.theta_star()),
        });
        let survivors = if truncated {
            active.clone()
        } else {
            eliminate(features, &active, &theta_hat, epsilon)
        };
        log::debug!(
            "phase {phase}: n = {length}, active {:?} -> {:?}, error {max_error:.4}",
            active,
            survivors
        );
        record.phases.push(PhaseLog {
            phase,
            active: active.clone(),
            anchor,
            epsilon,
            length,
            steps,
            start,
            certificate,
            policy,
            beta,
            theta_hat,
            max_error,
            truncated,
            survivors: survivors.clone(),
        });
        if truncated {
            break;
        }
        active = survivors;
        phase += 1;
        if active.len() == 1 && t > cfg.horizon {
            record.declared = Some(Declaration {
                arm: active[0],
                time: t - 1,
            });
        }
    }
    Ok(record)
}

/// When to refit the estimator during pure exploration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "stride")]
pub enum ErrorTracking {
    /// Only after the last sample.
    #[default]
    Final,
    /// Every `n` rounds and after the last sample.
    Every(u64),
}

#[derive(Debug, Clone)]
pub struct PureExploration {
    pub theta_hat: DVector<f64>,
    pub greedy_arm: usize,
    pub certificate: DesignCertificate,
    pub record: RunRecord,
}

/// Samples `budget` arms i.i.d. from the orthogonalized design over all arms
/// (anchor 0), then fits `θ̂` with `β = ln(budget/δ)` and reports the greedy
/// arm.
pub fn run_pure_exploration(
    env: &Environment,
    budget: u64,
    delta: f64,
    seed: u64,
    tracking: ErrorTracking,
) -> Result<PureExploration, SbeError> {
    if budget < 1 {
        return Err(SbeError::InvalidConfig("budget must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SbeError::InvalidConfig(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let features = env.features();
    let k = features.len();
    let (policy, certificate) = deo(features, 0, DEFAULT_FW_TOL)?;
    let mean = policy.mean(features);
    let centered: Vec<DVector<f64>> = features.features().iter().map(|x| x - &mean).collect();
    let dist = sampler(&policy);
    let all: Vec<usize> = (0..k).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut record = RunRecord::new(seed, env.audit(budget));
    let mut estimator = EstimatorState::new(features.dim());

    for t in 1..=budget {
        let arm = dist.sample(&mut rng);
        let reward = env.step(arm, t)?;
        estimator.update(&centered[arm], reward)?;
        record.push(StepLog {
            t,
            phase: 1,
            arm,
            reward,
            regret: env.regret(arm),
            active_size: k,
        });
        let snap = match tracking {
            ErrorTracking::Final => false,
            ErrorTracking::Every(n) => n > 0 && t % n == 0,
        };
        if snap && t < budget {
            let theta = estimator.solve(regularizer(t, delta))?;
            let e = max_estimation_error(features, &all, 0, &theta, env.theta_star());
            record.snapshots.push(ErrorSnapshot {
                t,
                anchor_error: e,
                global_error: e,
            });
        }
    }
    let beta = regularizer(budget, delta);
    let theta_hat = estimator.solve(beta)?;
    let e = max_estimation_error(features, &all, 0, &theta_hat, env.theta_star());
    record.snapshots.push(ErrorSnapshot {
        t: budget,
        anchor_error: e,
        global_error: e,
    });
    record.phases.push(PhaseLog {
        phase: 1,
        active: all.clone(),
        anchor: 0,
        epsilon: f64::NAN,
        length: budget,
        steps: budget,
        start: 1,
        certificate,
        policy,
        beta,
        theta_hat: theta_hat.clone(),
        max_error: e,
        truncated: false,
        survivors: all,
    });
    let greedy = greedy_arm(features, &theta_hat);
    Ok(PureExploration {
        theta_hat,
        greedy_arm: greedy,
        certificate,
        record,
    })
}

/// Sample size `⌈C₂·(d/ε²·ln(dK/(εδ)) + d^{3/2}/ε·ln(dK/δ))⌉` for an
/// `ε`-optimal greedy arm with probability `1 − δ`.
pub fn pac_budget(d: usize, k: usize, epsilon: f64, delta: f64, c2: f64) -> u64 {
    let d = d as f64;
    let k = k as f64;
    let v = c2
        * (d / (epsilon * epsilon) * (d * k / (epsilon * delta)).ln()
            + d.powf(1.5) / epsilon * (d * k / delta).ln());
    v.ceil().max(1.0) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::FeatureSet;
    use crate::environment::{make_gap_instance, NoiseSpec, ShiftKind, ShiftSpec};

    fn cfg(delta: f64) -> SbeConfig {
        SbeConfig {
            delta,
            ..SbeConfig::default()
        }
    }

    #[test]
    fn phase_length_hand_value() {
        // 4·⌈8·ln 240 + 2^{3/2}·2·ln 120⌉ = 4·⌈43.85 + 27.08⌉ = 4·71
        assert_eq!(phase_length(1, 2, 3, &cfg(0.1)).unwrap(), 284);
    }

    #[test]
    fn phase_length_quadruples() {
        let c = cfg(0.1);
        let a = phase_length(20, 3, 10, &c).unwrap() as f64;
        let b = phase_length(21, 3, 10, &c).unwrap() as f64;
        assert!((3.5..=4.5).contains(&(b / a)), "ratio {}", b / a);
    }

    #[test]
    fn adaptive_not_longer() {
        let mut c = cfg(0.1);
        let fixed = phase_length(3, 4, 1 << 30, &c).unwrap();
        c.schedule = Schedule::Adaptive;
        let adaptive = phase_length(3, 4, 1 << 30, &c).unwrap();
        assert!(adaptive < fixed);
    }

    #[test]
    fn phase_length_overflow() {
        assert!(matches!(
            phase_length(70, 10, 10, &cfg(0.1)),
            Err(SbeError::ScheduleOverflow { phase: 70 })
        ));
    }

    #[test]
    fn eliminate_examples() {
        let x = FeatureSet::standard_basis(3);
        let all = [0, 1, 2];
        assert_eq!(eliminate(&x, &all, &DVector::zeros(3), 0.1), vec![0, 1, 2]);
        let th = DVector::from_vec(vec![1.0, 0.4, 0.9]);
        assert_eq!(eliminate(&x, &all, &th, 0.25), vec![0, 2]);
        assert_eq!(eliminate(&x, &[1], &th, 0.25), vec![1]);
    }

    #[test]
    fn eliminate_keeps_exact_ties_at_epsilon() {
        let x = FeatureSet::standard_basis(2);
        let th = DVector::from_vec(vec![1.0, 0.5]);
        assert_eq!(eliminate(&x, &[0, 1], &th, 0.5), vec![0, 1]);
    }

    #[test]
    fn identical_arms_degenerate() {
        let x = FeatureSet::from_rows(&[vec![0.3, 0.3], vec![0.3, 0.3]]).unwrap();
        let env = Environment::new(
            x,
            DVector::from_vec(vec![0.5, 0.5]),
            ShiftSpec::none(),
            NoiseSpec::None,
            0,
        )
        .unwrap();
        assert!(matches!(
            run_sbe(&env, &cfg(0.1), 0),
            Err(SbeError::Design(crate::DesignError::DegenerateFeatures))
        ));
    }

    #[test]
    fn horizon_is_exact_and_regret_monotone() {
        let env = make_gap_instance(3, 6, 0.5, 4)
            .unwrap()
            .with_noise(NoiseSpec::Gaussian { sigma: 1.0 })
            .unwrap()
            .with_shift(ShiftSpec::new(ShiftKind::Sine));
        let c = SbeConfig {
            horizon: 5_000,
            ..cfg(0.1)
        };
        let rec = run_sbe(&env, &c, 9).unwrap();
        assert_eq!(rec.steps.len(), 5_000);
        assert!(rec.cumulative_regret.windows(2).all(|w| w[1] >= w[0]));
        for w in rec.phases.windows(2) {
            assert!(w[1].active.iter().all(|a| w[0].active.contains(a)));
            assert!(w[1].length >= w[0].length || w[1].active.len() < w[0].active.len());
        }
        for p in &rec.phases {
            assert!(p.policy.probability(p.anchor) >= 0.5);
            assert_eq!(p.anchor, p.active[0]);
        }
    }

    #[test]
    fn pac_budget_value() {
        // 4·(75·ln 1200 + 3^{1.5}/0.2·ln 240)
        let expect = 4.0 * (75.0 * 1200f64.ln() + 27f64.sqrt() / 0.2 * 240f64.ln());
        assert_eq!(pac_budget(3, 8, 0.2, 0.1, 4.0), expect.ceil() as u64);
    }
}
