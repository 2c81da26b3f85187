//! Orthogonalized ridge regression.
//!
//! Rewards are regressed on centered features `x̃ = x_a − Σ_i p_i x_i`,
//! where `p` is the policy the arm was drawn from. A shift common to all
//! arms then cancels in expectation.

use nalgebra::{DMatrix, DVector};

use crate::design::{DesignCertificate, DesignPolicy, FeatureSet};
use crate::error::EstimatorError;
use crate::linalg::{self, PsdMatrix};

/// `x_arm − Σ_i p_i x_i`.
pub fn center(features: &FeatureSet, policy: &DesignPolicy, arm: usize) -> DVector<f64> {
    features.feature(arm) - policy.mean(features)
}

/// Ridge regularizer `β_t = ln(t/δ)`.
pub fn regularizer(t: u64, delta: f64) -> f64 {
    (t.max(1) as f64 / delta).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeConfig {
    pub delta: f64,
    pub beta_override: Option<f64>,
}

impl RidgeConfig {
    pub fn new(delta: f64) -> Result<Self, EstimatorError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(EstimatorError::InvalidDelta(delta));
        }
        Ok(Self {
            delta,
            beta_override: None,
        })
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self, EstimatorError> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(EstimatorError::InvalidRegularizer(beta));
        }
        self.beta_override = Some(beta);
        Ok(self)
    }

    pub fn beta(&self, t: u64) -> f64 {
        self.beta_override
            .unwrap_or_else(|| regularizer(t, self.delta))
    }
}

/// Accumulated centered statistics `B = Σ x̃ x̃ᵀ`, `b = Σ x̃ r` and the
/// sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    gram: DMatrix<f64>,
    moment: DVector<f64>,
    count: u64,
}

impl EstimatorState {
    pub fn new(dim: usize) -> Self {
        Self {
            gram: DMatrix::zeros(dim, dim),
            moment: DVector::zeros(dim),
            count: 0,
        }
    }

    /// Batch construction from a sample log.
    pub fn from_samples<'a>(
        dim: usize,
        samples: impl IntoIterator<Item = (&'a DVector<f64>, f64)>,
    ) -> Result<Self, EstimatorError> {
        let mut state = Self::new(dim);
        for (x, r) in samples {
            state.update(x, r)?;
        }
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.moment.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn gram(&self) -> PsdMatrix {
        PsdMatrix::from_gram(self.gram.clone())
    }

    pub fn gram_matrix(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn moment(&self) -> &DVector<f64> {
        &self.moment
    }

    pub fn update(&mut self, centered: &DVector<f64>, reward: f64) -> Result<(), EstimatorError> {
        if centered.len() != self.dim() {
            return Err(linalg_dim(self.dim(), centered.len()));
        }
        if !reward.is_finite() || centered.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::InvalidSample);
        }
        self.gram.ger(1.0, centered, centered, 1.0);
        self.moment.axpy(reward, centered, 1.0);
        self.count += 1;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.gram.fill(0.0);
        self.moment.fill(0.0);
        self.count = 0;
    }

    /// `θ̂ = (B + βI)⁻¹ b` by Cholesky.
    pub fn solve(&self, beta: f64) -> Result<DVector<f64>, EstimatorError> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(EstimatorError::InvalidRegularizer(beta));
        }
        let mut a = self.gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += beta;
        }
        Ok(linalg::solve_spd(&a, &self.moment)?)
    }
}

fn linalg_dim(expected: usize, got: usize) -> EstimatorError {
    EstimatorError::Linalg(crate::error::LinalgError::DimError { expected, got })
}

/// Envelope `C1·(√(L·ln(t/δ))/√t + √L·M·ln(d/δ)/t)` on the estimation
/// error `|zᵀ(θ̂_t − θ*)|` after `t` samples from a fixed policy, with
/// `L, M` read off the design certificate and `d` its rank.
pub fn error_bound_diagnostic(cert: &DesignCertificate, t: u64, delta: f64, c1: f64) -> f64 {
    let t = t.max(1) as f64;
    let l = cert.l();
    let m = cert.m();
    let d = cert.rank.max(1) as f64;
    c1 * ((l * (t / delta).ln()).sqrt() / t.sqrt() + l.sqrt() * m * (d / delta).ln() / t)
}

/// `max_{i ∈ arms} |(x_i − x_anchor)ᵀ(θ̂ − θ*)|`.
pub fn max_estimation_error(
    features: &FeatureSet,
    arms: &[usize],
    anchor: usize,
    theta_hat: &DVector<f64>,
    theta_star: &DVector<f64>,
) -> f64 {
    let err = theta_hat - theta_star;
    let base = features.feature(anchor).dot(&err);
    arms.iter()
        .map(|&i| (features.feature(i).dot(&err) - base).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn center_examples() {
        let x = FeatureSet::from_rows(&[vec![0.4, 0.1], vec![-0.2, 0.3]]).unwrap();
        assert_eq!(center(&x, &DesignPolicy::point_mass(2, 1), 1).norm(), 0.0);

        let x = FeatureSet::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(
            center(&x, &DesignPolicy::uniform(2), 0).as_slice(),
            &[1.0, 0.0]
        );

        let x = FeatureSet::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = DesignPolicy::new(vec![0.5, 0.25, 0.25]).unwrap();
        let c = center(&x, &p, 1);
        assert_relative_eq!(c[0], 0.75);
        assert_relative_eq!(c[1], -0.25);
    }

    #[test]
    fn update_zero_vector_only_counts() {
        let mut s = EstimatorState::new(2);
        s.update(&v(&[0.0, 0.0]), 3.0).unwrap();
        assert_eq!(s.count(), 1);
        assert_eq!(s.gram_matrix().norm(), 0.0);
        assert_eq!(s.moment().norm(), 0.0);
    }

    #[test]
    fn single_update() {
        let mut s = EstimatorState::new(2);
        let x = v(&[0.5, -0.25]);
        s.update(&x, 2.0).unwrap();
        assert_eq!(s.gram_matrix(), &(&x * x.transpose()));
        assert_eq!(s.moment(), &(&x * 2.0));
    }

    #[test]
    fn update_rejects_bad_samples() {
        let mut s = EstimatorState::new(2);
        assert_eq!(
            s.update(&v(&[1.0, 0.0]), f64::NAN).unwrap_err(),
            EstimatorError::InvalidSample
        );
        assert!(s.update(&v(&[1.0]), 1.0).is_err());
        assert_eq!(s.count(), 0);
    }

    #[test]
    fn regularizer_values() {
        assert_relative_eq!(regularizer(1, (-1f64).exp()), 1.0, epsilon = 1e-15);
        assert_relative_eq!(regularizer(100, 0.01), 10000f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(regularizer(100, 0.01), 9.2103, epsilon = 1e-4);
        assert_relative_eq!(regularizer(10, 0.1), 4.6052, epsilon = 1e-4);
    }

    #[test]
    fn solve_zero_rewards() {
        let mut s = EstimatorState::new(3);
        s.update(&v(&[0.1, 0.2, 0.3]), 0.0).unwrap();
        assert_eq!(s.solve(1.0).unwrap().norm(), 0.0);
    }

    #[test]
    fn solve_single_sample_closed_form() {
        let x = v(&[0.3, -0.4, 0.12]);
        let r = 1.7;
        let beta = 2.5;
        let s = EstimatorState::from_samples(3, [(&x, r)]).unwrap();
        let theta = s.solve(beta).unwrap();
        let expect = &x * (r / (x.norm_squared() + beta));
        assert!((theta - expect).norm() < 1e-14);
    }

    #[test]
    fn solve_rejects_nonpositive_beta() {
        let s = EstimatorState::new(2);
        assert_eq!(
            s.solve(0.0).unwrap_err(),
            EstimatorError::InvalidRegularizer(0.0)
        );
        assert!(s.solve(-1.0).is_err());
    }

    #[test]
    fn ridge_config() {
        assert!(RidgeConfig::new(1.0).is_err());
        assert!(RidgeConfig::new(0.0).is_err());
        let c = RidgeConfig::new(0.1).unwrap();
        assert_relative_eq!(c.beta(10), 100f64.ln());
        assert_eq!(c.with_beta(3.0).unwrap().beta(10), 3.0);
    }

    fn cert(l: f64, m: f64, rank: usize) -> DesignCertificate {
        DesignCertificate {
            max_anchor_norm: l.sqrt(),
            max_centered_norm: m.sqrt(),
            support_size: rank + 1,
            rank,
        }
    }

    #[test]
    fn diagnostic_substitution() {
        let d = 4.0f64;
        let delta = 0.1;
        let t = d.powi(3);
        let got = error_bound_diagnostic(&cert(d, d, 4), t as u64, delta, 1.0);
        let expect =
            (d * (t / delta).ln()).sqrt() / d.powf(1.5) + d.powf(1.5) * (d / delta).ln() / t;
        assert_relative_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn diagnostic_scaling() {
        let c = cert(3.0, 3.0, 3);
        assert_eq!(
            error_bound_diagnostic(&cert(0.0, 3.0, 3), 100, 0.1, 10.0),
            0.0
        );
        let ratio = |t: u64| {
            error_bound_diagnostic(&c, 4 * t, 0.1, 10.0) / error_bound_diagnostic(&c, t, 0.1, 10.0)
        };
        // The log factor makes the approach to 1/2 slow but monotone.
        let gaps: Vec<f64> = [20, 40, 60]
            .iter()
            .map(|&e| ratio(1u64 << e) - 0.5)
            .collect();
        assert!(
            gaps.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0),
            "{gaps:?}"
        );
        assert!(gaps[2] < 0.01, "{gaps:?}");
    }

    #[test]
    fn estimation_error_zero_at_truth() {
        let x = FeatureSet::standard_basis(3);
        let th = v(&[0.2, 0.5, -0.1]);
        assert_eq!(max_estimation_error(&x, &[0, 1, 2], 0, &th, &th), 0.0);
    }
}
