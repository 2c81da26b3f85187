//! Reward simulator for `r_t = x_{a_t}ᵀθ* + ν_t + η_t`.
//!
//! The shift `ν_t` depends only on the round index and the noise draw `η_t`
//! comes from a counter-based stream keyed by `(seed, t)`, so neither ever
//! depends on which arm is pulled. Two runs that pull different arms at the
//! same round see the same shift and the same noise.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::FeatureSet;
use crate::error::EnvError;

const NOISE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const GAP_TOL: f64 = 1e-9;

/// Functional form of the shift sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftKind {
    None,
    /// `1 + sin(2t)`, `t` in radians.
    Sine,
    /// `max(ln(t+1)/5, 2)·(−1)^(t mod 3)`.
    LogAlternating,
    /// `min(ln(t+1)/5, 2)·(−1)^(t mod 3)`.
    LogAlternatingMin,
    Constant {
        value: f64,
    },
    /// `values[(t − 1) mod len]`.
    Table {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    #[serde(flatten)]
    pub kind: ShiftKind,
    #[serde(default)]
    pub clip_to_unit: bool,
}

impl ShiftSpec {
    pub fn new(kind: ShiftKind) -> Self {
        Self {
            kind,
            clip_to_unit: false,
        }
    }

    pub fn none() -> Self {
        Self::new(ShiftKind::None)
    }

    pub fn clipped(mut self) -> Self {
        self.clip_to_unit = true;
        self
    }

    /// `ν_t` for round `t ≥ 1`.
    pub fn value(&self, t: u64) -> f64 {
        let tf = t as f64;
        let sign = if (t % 3).is_multiple_of(2) { 1.0 } else { -1.0 };
        let raw = match &self.kind {
            ShiftKind::None => 0.0,
            ShiftKind::Sine => 1.0 + (2.0 * tf).sin(),
            ShiftKind::LogAlternating => ((tf + 1.0).ln() / 5.0).max(2.0) * sign,
            ShiftKind::LogAlternatingMin => ((tf + 1.0).ln() / 5.0).min(2.0) * sign,
            ShiftKind::Constant { value } => *value,
            ShiftKind::Table { values } => {
                if values.is_empty() {
                    0.0
                } else {
                    values[((t.max(1) - 1) % values.len() as u64) as usize]
                }
            }
        };
        if self.clip_to_unit {
            raw.clamp(-1.0, 1.0)
        } else {
            raw
        }
    }
}

pub fn shift_value(spec: &ShiftSpec, t: u64) -> f64 {
    spec.value(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    None,
    Gaussian {
        sigma: f64,
    },
    /// Uniform on `[−half_width, half_width]`.
    BoundedUniform {
        half_width: f64,
    },
}

impl NoiseSpec {
    /// Sub-Gaussian variance proxy.
    pub fn variance_proxy(&self) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Gaussian { sigma } => sigma,
            NoiseSpec::BoundedUniform { half_width } => half_width,
        }
    }

    fn validate(&self) -> Result<(), EnvError> {
        let ok = match *self {
            NoiseSpec::None => true,
            NoiseSpec::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
            NoiseSpec::BoundedUniform { half_width } => half_width >= 0.0 && half_width.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(EnvError::Invalid(format!("invalid noise spec {self:?}")))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            NoiseSpec::BoundedUniform { half_width } => {
                if half_width == 0.0 {
                    0.0
                } else {
                    rng.gen_range(-half_width..=half_width)
                }
            }
        }
    }
}

/// Violations of the boundedness assumptions found in an environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssumptionAudit {
    pub theta_norm: Option<f64>,
    pub feature_violations: Vec<usize>,
    /// Rounds in `1..=horizon` with `|ν_t| > 1`.
    pub shift_violations: u64,
}

impl AssumptionAudit {
    pub fn is_clean(&self) -> bool {
        self.theta_norm.is_none()
            && self.feature_violations.is_empty()
            && self.shift_violations == 0
    }
}

#[derive(Debug, Clone)]
pub struct Environment {
    features: FeatureSet,
    theta_star: DVector<f64>,
    shift: ShiftSpec,
    noise: NoiseSpec,
    seed: u64,
    means: Vec<f64>,
    best_arm: usize,
    gap: f64,
    /// Factor applied to the requested arm means (MAB embedding only).
    scale: f64,
}

impl Environment {
    /// A tie for the best arm is logged, and leaves `gap() == 0`.
    pub fn new(
        features: FeatureSet,
        theta_star: DVector<f64>,
        shift: ShiftSpec,
        noise: NoiseSpec,
        seed: u64,
    ) -> Result<Self, EnvError> {
        if theta_star.len() != features.dim() {
            return Err(EnvError::Invalid(format!(
                "theta has dimension {}, features have {}",
                theta_star.len(),
                features.dim()
            )));
        }
        if theta_star.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::Invalid("theta has non-finite entries".into()));
        }
        noise.validate()?;
        if theta_star.norm() > 1.0 + 1e-12 {
            log::warn!("theta_star has norm {:.4} > 1", theta_star.norm());
        }
        let means: Vec<f64> = features
            .features()
            .iter()
            .map(|x| x.dot(&theta_star))
            .collect();
        let (best_arm, gap) = best_and_gap(&means);
        if gap == 0.0 && means.len() > 1 {
            log::warn!("best arm is not unique");
        }
        Ok(Self {
            features,
            theta_star,
            shift,
            noise,
            seed,
            means,
            best_arm,
            gap,
            scale: 1.0,
        })
    }

    pub fn with_shift(mut self, shift: ShiftSpec) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Result<Self, EnvError> {
        noise.validate()?;
        self.noise = noise;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Errors unless the best arm is strictly better than every other arm.
    pub fn require_unique_best(&self) -> Result<(), EnvError> {
        if self.gap > 0.0 {
            Ok(())
        } else {
            Err(EnvError::TiedBestArm)
        }
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn shift(&self) -> &ShiftSpec {
        &self.shift
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_arms(&self) -> usize {
        self.features.len()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// `x_armᵀθ*`.
    pub fn mean(&self, arm: usize) -> f64 {
        self.means[arm]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn best_arm(&self) -> usize {
        self.best_arm
    }

    /// `x_{a*}ᵀθ* − max_{j≠a*} x_jᵀθ*`.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Instantaneous regret of pulling `arm`.
    pub fn regret(&self, arm: usize) -> f64 {
        self.means[self.best_arm] - self.means[arm]
    }

    pub fn shift_at(&self, t: u64) -> f64 {
        self.shift.value(t)
    }

    /// `η_t`, identical for every arm.
    pub fn noise_at(&self, t: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ NOISE_SALT);
        rng.set_stream(t);
        self.noise.draw(&mut rng)
    }

    /// Reward for pulling `arm` at round `t`.
    pub fn step(&self, arm: usize, t: u64) -> Result<f64, EnvError> {
        if arm >= self.num_arms() {
            return Err(EnvError::InvalidArm {
                arm,
                k: self.num_arms(),
            });
        }
        let shift = self.shift_at(t);
        Ok(self.means[arm] + shift + self.noise_at(t))
    }

    pub fn audit(&self, horizon: u64) -> AssumptionAudit {
        let norm = self.theta_star.norm();
        AssumptionAudit {
            theta_norm: (norm > 1.0 + 1e-12).then_some(norm),
            feature_violations: self.features.norm_violations(),
            shift_violations: (1..=horizon)
                .filter(|&t| self.shift_at(t).abs() > 1.0)
                .count() as u64,
        }
    }
}

fn best_and_gap(means: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &m) in means.iter().enumerate() {
        if m > means[best] {
            best = i;
        }
    }
    let runner_up = means
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, &m)| m)
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = if runner_up.is_finite() {
        means[best] - runner_up
    } else {
        f64::INFINITY
    };
    (best, gap)
}

fn unit_sphere(d: usize, rng: &mut impl Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Uniform draw from the unit ball.
pub fn unit_ball(d: usize, rng: &mut impl Rng) -> DVector<f64> {
    let radius = rng.gen::<f64>().powf(1.0 / d as f64);
    unit_sphere(d, rng) * radius
}

/// `k` features uniform in the unit ball of `R^d` and `θ*` uniform on the
/// unit sphere, noiseless and unshifted.
pub fn make_random_instance(d: usize, k: usize, seed: u64) -> Result<Environment, EnvError> {
    if d == 0 || k == 0 {
        return Err(EnvError::Invalid("need d ≥ 1 and K ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = FeatureSet::new((0..k).map(|_| unit_ball(d, &mut rng)).collect())?;
    let theta = unit_sphere(d, &mut rng);
    Environment::new(features, theta, ShiftSpec::none(), NoiseSpec::None, seed)
}

/// Random instance whose suboptimality gap is exactly `gap`.
///
/// Features start uniform in the unit ball with `θ*` on the unit sphere. The
/// best arm's mean is moved to a random level `a`, and the remaining means
/// are mapped affinely so the runner-up sits at exactly `a − gap`; each
/// adjustment moves a feature along `θ*` and then shrinks its orthogonal
/// part to keep `‖x_i‖ ≤ 1`.
pub fn make_gap_instance(d: usize, k: usize, gap: f64, seed: u64) -> Result<Environment, EnvError> {
    if !(gap > 0.0 && gap < 2.0) {
        return Err(EnvError::GenerationError(format!(
            "gap must lie in (0, 2), got {gap}"
        )));
    }
    if d == 0 || k < 2 {
        return Err(EnvError::GenerationError("need d ≥ 1 and K ≥ 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let theta = unit_sphere(d, &mut rng);
        let raw: Vec<DVector<f64>> = (0..k).map(|_| unit_ball(d, &mut rng)).collect();
        let values: Vec<f64> = raw.iter().map(|x| x.dot(&theta)).collect();
        let (best, _) = best_and_gap(&values);

        let lo = gap - 1.0;
        let top = lo + (1.0 - lo) * rng.gen_range(0.5..0.9);
        let runner = top - gap;
        let others_max = values
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let others_min = values
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let spread = others_max - others_min;
        let squeeze = if spread > 0.0 {
            ((runner + 1.0) / spread).min(1.0)
        } else {
            1.0
        };

        let mut features = Vec::with_capacity(k);
        for (i, x) in raw.iter().enumerate() {
            let target = if i == best {
                top
            } else {
                runner - squeeze * (others_max - values[i])
            };
            let perp = x - &theta * values[i];
            let room = (1.0 - target * target).max(0.0).sqrt();
            let pn = perp.norm();
            let perp = if pn > room { perp * (room / pn) } else { perp };
            features.push(&theta * target + perp);
        }
        let features = FeatureSet::new(features)?;
        let env = Environment::new(features, theta, ShiftSpec::none(), NoiseSpec::None, seed)?;
        if (env.gap() - gap).abs() <= GAP_TOL
            && env.features().norm_violations().is_empty()
            && env.features().rank() == d.min(k)
        {
            return Ok(env);
        }
    }
    Err(EnvError::GenerationError(format!(
        "could not realize gap {gap} with d = {d}, K = {k} after 10000 attempts"
    )))
}

/// Embeds a `K`-armed bandit with means `mu` as standard-basis features.
///
/// `θ*` is `mu` scaled down to unit norm when `‖mu‖ > 1`; the factor is
/// available from [`Environment::scale`].
pub fn make_mab_embedding(mu: &[f64]) -> Result<Environment, EnvError> {
    if mu.len() < 2 {
        return Err(EnvError::Invalid("need at least two arms".into()));
    }
    let mu = DVector::from_column_slice(mu);
    let scale = 1.0 / mu.norm().max(1.0);
    let env = Environment::new(
        FeatureSet::standard_basis(mu.len()),
        &mu * scale,
        ShiftSpec::none(),
        NoiseSpec::None,
        0,
    )?;
    env.require_unique_best()?;
    Ok(Environment { scale, ..env })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn shift_examples() {
        let sine = ShiftSpec::new(ShiftKind::Sine);
        assert_relative_eq!(sine.value(1), 1.0 + 2f64.sin());
        assert_relative_eq!(sine.value(1), 1.9093, epsilon = 1e-4);
        let log = ShiftSpec::new(ShiftKind::LogAlternating);
        assert_eq!(log.value(1), -2.0);
        assert_eq!(log.value(2), 2.0);
        assert_eq!(log.value(3), 2.0);
        assert_eq!(log.value(4), -2.0);
        for t in [1, 7, 1000] {
            assert_eq!(ShiftSpec::none().value(t), 0.0);
        }
    }

    #[test]
    fn log_alternating_wakes_up_late() {
        let log = ShiftSpec::new(ShiftKind::LogAlternating);
        // ln(t+1)/5 > 2 once t + 1 > e¹⁰ ≈ 22026.5
        let t = 30_000u64;
        assert_relative_eq!(log.value(t).abs(), ((t + 1) as f64).ln() / 5.0);
        let min = ShiftSpec::new(ShiftKind::LogAlternatingMin);
        assert_relative_eq!(min.value(1), -(2f64.ln()) / 5.0);
    }

    #[test]
    fn clipping_and_tables() {
        let s = ShiftSpec::new(ShiftKind::LogAlternating).clipped();
        assert_eq!(s.value(1), -1.0);
        let tab = ShiftSpec::new(ShiftKind::Table {
            values: vec![0.1, 0.2, 0.3],
        });
        assert_eq!(tab.value(1), 0.1);
        assert_eq!(tab.value(4), 0.1);
        assert_eq!(tab.value(6), 0.3);
    }

    fn small_env(shift: ShiftSpec, noise: NoiseSpec) -> Environment {
        let x = FeatureSet::from_rows(&[vec![0.5, 0.1], vec![0.2, 0.3], vec![-0.4, 0.6]]).unwrap();
        Environment::new(x, DVector::from_vec(vec![0.6, -0.3]), shift, noise, 11).unwrap()
    }

    #[test]
    fn noiseless_rewards() {
        let env = small_env(ShiftSpec::none(), NoiseSpec::None);
        for arm in 0..3 {
            assert_eq!(env.step(arm, 5).unwrap(), env.mean(arm));
        }
        let env = small_env(
            ShiftSpec::new(ShiftKind::Constant { value: 0.7 }),
            NoiseSpec::None,
        );
        assert_relative_eq!(env.step(1, 9).unwrap(), env.mean(1) + 0.7);
    }

    #[test]
    fn invalid_arm() {
        let env = small_env(ShiftSpec::none(), NoiseSpec::None);
        assert_eq!(
            env.step(3, 1).unwrap_err(),
            EnvError::InvalidArm { arm: 3, k: 3 }
        );
    }

    #[test]
    fn noise_is_keyed_by_round_only() {
        let env = small_env(
            ShiftSpec::new(ShiftKind::Sine),
            NoiseSpec::Gaussian { sigma: 1.0 },
        );
        for t in 1..50 {
            let r0 = env.step(0, t).unwrap() - env.mean(0);
            let r2 = env.step(2, t).unwrap() - env.mean(2);
            assert!((r0 - r2).abs() < 1e-12);
        }
        let again = small_env(
            ShiftSpec::new(ShiftKind::Sine),
            NoiseSpec::Gaussian { sigma: 1.0 },
        );
        assert_eq!(env.step(1, 17).unwrap(), again.step(1, 17).unwrap());
        assert_ne!(env.noise_at(3), env.clone().with_seed(12).noise_at(3));
    }

    #[test]
    fn uniform_noise_is_bounded() {
        let env = small_env(
            ShiftSpec::none(),
            NoiseSpec::BoundedUniform { half_width: 0.25 },
        );
        assert!((1..2000).all(|t| env.noise_at(t).abs() <= 0.25));
        assert_eq!(env.noise().variance_proxy(), 0.25);
    }

    #[test]
    fn gap_instance_realizes_gap() {
        let env = make_gap_instance(5, 10, 0.5, 3).unwrap();
        assert!((env.gap() - 0.5).abs() <= 1e-9);
        assert!(env.features().norm_violations().is_empty());
        assert!(env.theta_star().norm() <= 1.0 + 1e-12);
        let env = make_gap_instance(3, 2, 0.8, 1).unwrap();
        let best = env.best_arm();
        assert_eq!(
            env.means().iter().filter(|&&m| m == env.mean(best)).count(),
            1
        );
    }

    #[test]
    fn gap_instance_rejects_bad_gap() {
        assert!(matches!(
            make_gap_instance(5, 10, 0.0, 1),
            Err(EnvError::GenerationError(_))
        ));
        assert!(make_gap_instance(5, 10, 2.0, 1).is_err());
    }

    #[test]
    fn mab_embedding() {
        let env = make_mab_embedding(&[0.5, 0.3]).unwrap();
        assert_eq!(env.best_arm(), 0);
        assert_relative_eq!(env.gap(), 0.2, epsilon = 1e-15);
        assert_eq!(env.scale(), 1.0);
        assert!(matches!(
            make_mab_embedding(&[0.4, 0.4, 0.4]),
            Err(EnvError::TiedBestArm)
        ));
        let env = make_mab_embedding(&[0.9, 0.5, 0.1]).unwrap();
        assert!(env.theta_star().norm() <= 1.0 + 1e-12);
        assert_relative_eq!(env.gap() / env.scale(), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn audit_flags_unclipped_log_shift() {
        let env = small_env(ShiftSpec::new(ShiftKind::LogAlternating), NoiseSpec::None);
        assert_eq!(env.audit(10).shift_violations, 10);
        let env = env.with_shift(ShiftSpec::new(ShiftKind::LogAlternating).clipped());
        assert!(env.audit(10).is_clean());
    }
}
