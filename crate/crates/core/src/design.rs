//! Experimental designs over a finite arm set.
//!
//! [`g_optimal`] solves the classical G-optimal design
//! `min_p max_i ‖x_i‖_{M(p)⁻¹}` with `M(p) = Σ p_i x_i x_iᵀ`. By the
//! Kiefer–Wolfowitz equivalence theorem this is the D-optimal design, so we
//! maximize `log det M(p)` with Frank–Wolfe (away steps, exact line search)
//! and stop once `max_i ‖x_i‖²_{M⁻¹} ≤ r·(1 + tol)` where `r` is the rank of
//! the feature span. All computations happen in an orthonormal basis of that
//! span.
//!
//! [`deo`] builds the design for orthogonalized regression: the G-optimal
//! design on anchored differences `x_i − x_anchor`, halved, with the other
//! half of the mass on the anchor arm.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::DesignError;
use crate::linalg::{self, PsdMatrix, DEFAULT_RANGE_TOL};

/// Default Frank–Wolfe tolerance on the relative G-optimality gap.
pub const DEFAULT_FW_TOL: f64 = 1e-3;

/// Weights below this are zeroed after optimization.
const PRUNE_WEIGHT: f64 = 1e-9;

/// Iteration budget used when the caller does not supply one:
/// `max(10·d², ⌈4·d·(ln d + 1/tol)⌉)`. The second term tracks the known
/// `O(d·(ln d + 1/tol))` iteration count of away-step Frank–Wolfe here;
/// `10·d²` alone is too small for `tol = 1e-3` on random instances.
pub fn default_max_iters(dim: usize, tol: f64) -> usize {
    let d = dim.max(1) as f64;
    let kw = (4.0 * d * (d.ln() + 1.0 / tol)).ceil();
    (10 * dim * dim).max(if kw.is_finite() {
        kw as usize
    } else {
        usize::MAX
    })
}

/// The arm feature vectors `x_1, …, x_K ∈ R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    features: Vec<DVector<f64>>,
}

impl FeatureSet {
    /// Builds a feature set from at least one vector of a common positive
    /// dimension. Vectors with Euclidean norm above one are accepted with a
    /// warning.
    pub fn new(features: Vec<DVector<f64>>) -> Result<Self, DesignError> {
        let dim = features
            .first()
            .map(|f| f.len())
            .ok_or(DesignError::TooFewArms { need: 1, got: 0 })?;
        if dim == 0 {
            return Err(DesignError::InvalidFeatures("zero dimension".into()));
        }
        for (i, f) in features.iter().enumerate() {
            if f.len() != dim {
                return Err(DesignError::InvalidFeatures(format!(
                    "arm {i} has dimension {} but arm 0 has {dim}",
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(DesignError::InvalidFeatures(format!(
                    "arm {i} has non-finite entries"
                )));
            }
        }
        let set = Self { dim, features };
        let over = set.norm_violations();
        if !over.is_empty() {
            log::warn!("{} feature(s) have norm above 1: {:?}", over.len(), over);
        }
        Ok(set)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DesignError> {
        Self::new(rows.iter().map(|r| DVector::from_column_slice(r)).collect())
    }

    /// Standard basis `e_1, …, e_k` of `R^k`.
    pub fn standard_basis(k: usize) -> Self {
        let features = (0..k)
            .map(|i| {
                let mut e = DVector::zeros(k);
                e[i] = 1.0;
                e
            })
            .collect();
        Self { dim: k, features }
    }

    /// Parses the plain-text matrix format: a `d K` header line followed by
    /// `K` lines of `d` whitespace separated numbers. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, DesignError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| DesignError::InvalidFeatures("empty feature file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| DesignError::InvalidFeatures(format!("bad header {header:?}: {e}")))?;
        let [d, k] = dims[..] else {
            return Err(DesignError::InvalidFeatures(format!(
                "header must be `d K`, got {header:?}"
            )));
        };
        let mut rows = Vec::with_capacity(k);
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| DesignError::InvalidFeatures(format!("row {i}: {e}")))?;
            if row.len() != d {
                return Err(DesignError::InvalidFeatures(format!(
                    "row {i} has {} values, expected {d}",
                    row.len()
                )));
            }
            rows.push(row);
        }
        if rows.len() != k {
            return Err(DesignError::InvalidFeatures(format!(
                "expected {k} rows, found {}",
                rows.len()
            )));
        }
        Self::from_rows(&rows)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, DesignError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            DesignError::InvalidFeatures(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    /// Serializes to the plain-text matrix format.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.dim, self.len());
        for f in &self.features {
            let row: Vec<String> = f.iter().map(|v| format!("{v:.17e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of arms `K`.
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, arm: usize) -> &DVector<f64> {
        &self.features[arm]
    }

    pub fn features(&self) -> &[DVector<f64>] {
        &self.features
    }

    /// Arms whose feature norm exceeds one.
    pub fn norm_violations(&self) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.norm() > 1.0 + 1e-12)
            .map(|(i, _)| i)
            .collect()
    }

    /// Orthonormal basis of the span of the features.
    pub fn span_basis(&self) -> DMatrix<f64> {
        linalg::span_basis(&self.features, self.dim)
    }

    /// Dimension of the feature span.
    pub fn rank(&self) -> usize {
        self.span_basis().ncols()
    }

    /// The features restricted to the given arms, in the given order.
    pub fn subset(&self, arms: &[usize]) -> Result<Self, DesignError> {
        let features = arms
            .iter()
            .map(|&a| {
                self.features
                    .get(a)
                    .cloned()
                    .ok_or(DesignError::InvalidArm(a))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if features.is_empty() {
            return Err(DesignError::TooFewArms { need: 1, got: 0 });
        }
        Ok(Self {
            dim: self.dim,
            features,
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            features: self.features.iter().map(|f| f * s).collect(),
        }
    }
}

/// A sampling distribution over arms.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPolicy {
    probabilities: Vec<f64>,
}

impl DesignPolicy {
    /// Accepts nonnegative weights summing to one within 1e-12.
    pub fn new(probabilities: Vec<f64>) -> Result<Self, DesignError> {
        if probabilities.is_empty() {
            return Err(DesignError::InvalidPolicy(
                "empty probability vector".into(),
            ));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DesignError::InvalidPolicy(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(DesignError::InvalidPolicy(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { probabilities })
    }

    /// Normalizes nonnegative weights with a positive sum.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, DesignError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DesignError::InvalidPolicy(
                "weights must be nonnegative with a positive sum".into(),
            ));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn point_mass(k: usize, arm: usize) -> Self {
        let mut probabilities = vec![0.0; k];
        probabilities[arm] = 1.0;
        Self { probabilities }
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probabilities: vec![1.0 / k as f64; k],
        }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn probability(&self, arm: usize) -> f64 {
        self.probabilities[arm]
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Arms with positive probability, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.probabilities
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// `x̄_p = Σ p_i x_i`.
    pub fn mean(&self, features: &FeatureSet) -> DVector<f64> {
        let mut mean = DVector::zeros(features.dim());
        for (p, x) in self.probabilities.iter().zip(features.features()) {
            if *p > 0.0 {
                mean.axpy(*p, x, 1.0);
            }
        }
        mean
    }

    /// Lifts a policy over `arms` (a subset of `0..k`) back to all `k` arms.
    pub fn embed(&self, arms: &[usize], k: usize) -> Self {
        let mut probabilities = vec![0.0; k];
        for (&a, &p) in arms.iter().zip(&self.probabilities) {
            probabilities[a] = p;
        }
        Self { probabilities }
    }
}

impl fmt::Display for DesignPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .probabilities
            .iter()
            .map(|p| format!("{p:.4}"))
            .collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Mean and covariance of the feature of an arm drawn from a policy.
#[derive(Debug, Clone)]
pub struct PolicyMoments {
    pub mean: DVector<f64>,
    pub covariance: PsdMatrix,
}

fn check_sizes(features: &FeatureSet, policy: &DesignPolicy) -> Result<(), DesignError> {
    if features.len() != policy.len() {
        return Err(DesignError::InvalidPolicy(format!(
            "policy has {} entries for {} arms",
            policy.len(),
            features.len()
        )));
    }
    Ok(())
}

/// `x̄_p = Σ p_i x_i` and `Σ_p = Σ p_i (x_i − x̄_p)(x_i − x̄_p)ᵀ`.
pub fn policy_moments(
    features: &FeatureSet,
    policy: &DesignPolicy,
) -> Result<PolicyMoments, DesignError> {
    check_sizes(features, policy)?;
    let mean = policy.mean(features);
    let centered: Vec<_> = features.features().iter().map(|x| x - &mean).collect();
    let cov = linalg::weighted_outer_sum(
        features.dim(),
        policy.probabilities().iter().copied().zip(&centered),
    );
    Ok(PolicyMoments {
        mean,
        covariance: PsdMatrix::from_gram(cov),
    })
}

/// The pairwise form `Σ_{i<j} p_i p_j (x_i − x_j)(x_i − x_j)ᵀ`, which equals
/// the policy covariance.
pub fn covariance_pairwise(
    features: &FeatureSet,
    policy: &DesignPolicy,
) -> Result<PsdMatrix, DesignError> {
    check_sizes(features, policy)?;
    let d = features.dim();
    let p = policy.probabilities();
    let mut acc = DMatrix::zeros(d, d);
    for i in 0..features.len() {
        if p[i] == 0.0 {
            continue;
        }
        for j in (i + 1)..features.len() {
            let w = p[i] * p[j];
            if w == 0.0 {
                continue;
            }
            let diff = features.feature(i) - features.feature(j);
            acc.ger(w, &diff, &diff, 1.0);
        }
    }
    Ok(PsdMatrix::from_gram(acc))
}

/// Coordinates of `vectors` in the orthonormal basis `basis`.
fn project(basis: &DMatrix<f64>, vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let bt = basis.transpose();
    vectors.iter().map(|v| &bt * v).collect()
}

/// `max_i ‖z_i‖²_{M(p)⁻¹}` in span coordinates, or infinity if `M(p)` is
/// singular on the span.
fn max_leverage(z: &[DVector<f64>], weights: &[f64]) -> (f64, Vec<f64>) {
    let r = z[0].len();
    let m = linalg::weighted_outer_sum(r, weights.iter().copied().zip(z));
    match m.cholesky() {
        Some(chol) => {
            let l = chol.l();
            let g: Vec<f64> = z
                .iter()
                .map(|zi| {
                    l.solve_lower_triangular(zi)
                        .map(|y| y.norm_squared())
                        .unwrap_or(f64::INFINITY)
                })
                .collect();
            let max = g.iter().copied().fold(0.0, f64::max);
            (max, g)
        }
        None => (f64::INFINITY, vec![f64::INFINITY; z.len()]),
    }
}

/// G-optimality value `max_i ‖x_i‖²_{M(p)⁻¹}` of a policy, and the rank of
/// the feature span (the optimal value).
pub fn g_criterion(
    features: &FeatureSet,
    policy: &DesignPolicy,
) -> Result<(f64, usize), DesignError> {
    check_sizes(features, policy)?;
    let basis = features.span_basis();
    let r = basis.ncols();
    if r == 0 {
        return Err(DesignError::DegenerateFeatures);
    }
    let z = project(&basis, features.features());
    let m = PsdMatrix::from_gram(linalg::weighted_outer_sum(
        r,
        policy.probabilities().iter().copied().zip(&z),
    ));
    let eig = linalg::eig_sym(m.as_matrix())?;
    let mut worst: f64 = 0.0;
    for zi in &z {
        worst = worst.max(linalg::norm_from_eigen(&eig, zi, DEFAULT_RANGE_TOL).value());
    }
    Ok((worst * worst, r))
}

/// Picks `r` arms spanning the space by pivoted Gram–Schmidt.
fn greedy_spanning_subset(z: &[DVector<f64>], r: usize) -> Vec<usize> {
    let mut residual: Vec<DVector<f64>> = z.to_vec();
    let mut chosen = Vec::with_capacity(r);
    for _ in 0..r {
        let (best, norm) = residual
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(i))
            .map(|(i, v)| (i, v.norm()))
            .fold(
                (usize::MAX, -1.0),
                |acc, (i, n)| if n > acc.1 { (i, n) } else { acc },
            );
        if best == usize::MAX || norm <= 0.0 {
            break;
        }
        chosen.push(best);
        let q = &residual[best] / norm;
        for v in residual.iter_mut() {
            let c = q.dot(v);
            v.axpy(-c, &q, 1.0);
        }
    }
    chosen.sort_unstable();
    chosen
}

struct FwOutcome {
    weights: Vec<f64>,
    max_g: f64,
    iterations: usize,
    converged: bool,
}

/// Frank–Wolfe with away steps on `log det M(p)` over arms in `allowed`.
fn frank_wolfe(
    z: &[DVector<f64>],
    mut p: Vec<f64>,
    allowed: &[bool],
    tol: f64,
    max_iters: usize,
) -> FwOutcome {
    let r = z[0].len() as f64;
    let target = r * (1.0 + tol);
    let mut iterations = 0;
    loop {
        let (_, g) = max_leverage(z, &p);
        let (fw, g_fw) = g.iter().enumerate().filter(|(i, _)| allowed[*i]).fold(
            (usize::MAX, f64::NEG_INFINITY),
            |acc, (i, &v)| {
                if v > acc.1 {
                    (i, v)
                } else {
                    acc
                }
            },
        );
        if g_fw <= target {
            return FwOutcome {
                weights: p,
                max_g: g_fw,
                iterations,
                converged: true,
            };
        }
        if iterations >= max_iters || !g_fw.is_finite() {
            return FwOutcome {
                weights: p,
                max_g: g_fw,
                iterations,
                converged: false,
            };
        }
        iterations += 1;

        let support = p.iter().filter(|w| **w > 0.0).count();
        let (aw, g_aw) = g.iter().enumerate().filter(|(i, _)| p[*i] > 0.0).fold(
            (usize::MAX, f64::INFINITY),
            |acc, (i, &v)| {
                if v < acc.1 {
                    (i, v)
                } else {
                    acc
                }
            },
        );

        if support > 1 && r - g_aw > g_fw - r {
            // away step: p ← (1+γ)p − γ e_aw
            let gamma_max = p[aw] / (1.0 - p[aw]);
            let gamma = if g_aw > 1.0 {
                ((r - g_aw) / (r * (g_aw - 1.0))).min(gamma_max)
            } else {
                gamma_max
            };
            for w in p.iter_mut() {
                *w *= 1.0 + gamma;
            }
            if gamma >= gamma_max {
                p[aw] = 0.0;
            } else {
                p[aw] -= gamma;
            }
        } else {
            // toward step: p ← (1−γ)p + γ e_fw
            let gamma = ((g_fw - r) / (r * (g_fw - 1.0))).clamp(0.0, 1.0);
            for w in p.iter_mut() {
                *w *= 1.0 - gamma;
            }
            p[fw] += gamma;
        }
        let total: f64 = p.iter().sum();
        for w in p.iter_mut() {
            *w /= total;
        }
    }
}

fn normalize(p: &mut [f64]) {
    let total: f64 = p.iter().sum();
    for w in p.iter_mut() {
        *w /= total;
    }
}

/// Merges arms with identical outer products `z zᵀ` (i.e. `z_j = ±z_i`)
/// into the lowest index.
fn merge_duplicates(z: &[DVector<f64>], p: &mut [f64]) {
    let support: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    for (a, &i) in support.iter().enumerate() {
        if p[i] == 0.0 {
            continue;
        }
        let scale = z[i].norm().max(1e-300);
        for &j in &support[a + 1..] {
            if p[j] == 0.0 {
                continue;
            }
            let same =
                (&z[i] - &z[j]).norm() <= 1e-12 * scale || (&z[i] + &z[j]).norm() <= 1e-12 * scale;
            if same {
                p[i] += p[j];
                p[j] = 0.0;
            }
        }
    }
}

/// Upper-triangular entries of `z zᵀ`.
fn vech_outer(z: &DVector<f64>) -> Vec<f64> {
    let r = z.len();
    let mut out = Vec::with_capacity(r * (r + 1) / 2);
    for i in 0..r {
        for j in i..r {
            out.push(z[i] * z[j]);
        }
    }
    out
}

/// Carathéodory reduction: moves weight along null directions of
/// `[vech(z zᵀ); 1]` so `M(p)` and `Σ p` are preserved while the support
/// shrinks to at most `r(r+1)/2 + 1` arms.
fn caratheodory_reduce(z: &[DVector<f64>], p: &mut [f64]) {
    let r = z[0].len();
    let rows = r * (r + 1) / 2 + 1;
    loop {
        let support: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
        if support.len() <= rows {
            return;
        }
        let cols = &support[..rows + 1];
        let mut a = DMatrix::zeros(rows, cols.len());
        for (c, &arm) in cols.iter().enumerate() {
            for (row, v) in vech_outer(&z[arm]).into_iter().enumerate() {
                a[(row, c)] = v;
            }
            a[(rows - 1, c)] = 1.0;
        }
        let gram = a.transpose() * &a;
        let eig = match linalg::eig_sym(&gram) {
            Ok(e) => e,
            Err(_) => return,
        };
        let mut null = eig.vectors.column(cols.len() - 1).into_owned();
        if null.iter().all(|v| *v <= 0.0) {
            null = -null;
        }
        let (drop, step) = cols
            .iter()
            .enumerate()
            .filter(|(c, _)| null[*c] > 0.0)
            .map(|(c, &arm)| (c, p[arm] / null[c]))
            .fold((usize::MAX, f64::INFINITY), |acc, x| {
                if x.1 < acc.1 {
                    x
                } else {
                    acc
                }
            });
        if drop == usize::MAX {
            return;
        }
        for (c, &arm) in cols.iter().enumerate() {
            p[arm] = (p[arm] - step * null[c]).max(0.0);
        }
        p[cols[drop]] = 0.0;
        normalize(p);
    }
}

/// Solves the G-optimal design `min_p max_i ‖x_i‖_{M(p)⁻¹}`.
///
/// The returned policy satisfies `max_i ‖x_i‖²_{M(p)⁻¹} ≤ r·(1 + fw_tol)`
/// where `r` is the rank of the feature span, and has at most `r(r+1)/2`
/// arms in its support.
pub fn g_optimal(
    features: &FeatureSet,
    fw_tol: f64,
    max_iters: usize,
) -> Result<DesignPolicy, DesignError> {
    if !(fw_tol > 0.0) {
        return Err(DesignError::InvalidPolicy(format!(
            "fw_tol must be positive, got {fw_tol}"
        )));
    }
    let basis = features.span_basis();
    let r = basis.ncols();
    if r == 0 {
        return Err(DesignError::DegenerateFeatures);
    }
    let z = project(&basis, features.features());
    let k = z.len();
    let target = r as f64 * (1.0 + fw_tol);

    let mut init = vec![0.0; k];
    let seeds = greedy_spanning_subset(&z, r);
    for &i in &seeds {
        init[i] = 1.0 / seeds.len() as f64;
    }
    let all = vec![true; k];
    let out = frank_wolfe(&z, init, &all, fw_tol, max_iters);
    if !out.converged {
        let best = DesignPolicy::from_weights(out.weights)?;
        return Err(DesignError::ConvergenceError {
            iterations: out.iterations,
            max_norm_sq: out.max_g,
            target,
            best: Box::new(best),
        });
    }
    log::debug!(
        "g_optimal: rank {r}, {} arms, {} iterations, max leverage {:.6}",
        k,
        out.iterations,
        out.max_g
    );

    let mut p = out.weights;
    for w in p.iter_mut() {
        if *w < PRUNE_WEIGHT {
            *w = 0.0;
        }
    }
    normalize(&mut p);
    merge_duplicates(&z, &mut p);

    let limit = r * (r + 1) / 2;
    let mut polish_budget = max_iters.max(100);
    let polish = |p: Vec<f64>, budget: usize| {
        let allowed: Vec<bool> = p.iter().map(|w| *w > 0.0).collect();
        frank_wolfe(&z, p, &allowed, fw_tol, budget).weights
    };
    if p.iter().filter(|w| **w > 0.0).count() > limit {
        caratheodory_reduce(&z, &mut p);
        if max_leverage(&z, &p).0 > target {
            p = polish(p, polish_budget);
        }
    }
    while p.iter().filter(|w| **w > 0.0).count() > limit {
        // greedy: drop the arm whose removal degrades the certificate least
        let support: Vec<usize> = (0..k).filter(|&i| p[i] > 0.0).collect();
        let (_, best) = support
            .iter()
            .map(|&i| {
                let mut q = p.clone();
                q[i] = 0.0;
                normalize(&mut q);
                (max_leverage(&z, &q).0, q)
            })
            .fold((f64::INFINITY, None), |acc, (v, q)| {
                if v < acc.0 {
                    (v, Some(q))
                } else {
                    acc
                }
            });
        p = match best {
            Some(q) => polish(q, polish_budget),
            None => break,
        };
        polish_budget = polish_budget.saturating_sub(1).max(100);
    }
    for w in p.iter_mut() {
        if *w < PRUNE_WEIGHT {
            *w = 0.0;
        }
    }
    let policy = DesignPolicy::from_weights(p)?;
    let (value, _) = max_leverage(&z, policy.probabilities());
    if value > target {
        return Err(DesignError::ConvergenceError {
            iterations: out.iterations,
            max_norm_sq: value,
            target,
            best: Box::new(policy),
        });
    }
    Ok(policy)
}

/// Guarantees attached to an orthogonalized-regression design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignCertificate {
    /// `max_i ‖x_i − x_anchor‖_{Σ⁻¹}`.
    pub max_anchor_norm: f64,
    /// `max_i ‖x_i − x̄_p‖_{Σ⁻¹}`.
    pub max_centered_norm: f64,
    pub support_size: usize,
    /// Rank of the span of `x_i − x_anchor`.
    pub rank: usize,
}

impl DesignCertificate {
    /// `L = max_anchor_norm²`.
    pub fn l(&self) -> f64 {
        self.max_anchor_norm * self.max_anchor_norm
    }

    /// `M = max_centered_norm²`.
    pub fn m(&self) -> f64 {
        self.max_centered_norm * self.max_centered_norm
    }

    pub fn anchor_bound(&self) -> f64 {
        2.0 * (self.rank as f64).sqrt()
    }

    pub fn centered_bound(&self) -> f64 {
        4.0 * (self.rank as f64).sqrt()
    }
}

/// Evaluates the anchored and centered worst-case norms of `policy` under
/// its own covariance, within the span of `x_i − x_anchor`.
pub fn design_certificate(
    features: &FeatureSet,
    policy: &DesignPolicy,
    anchor: usize,
) -> Result<DesignCertificate, DesignError> {
    check_sizes(features, policy)?;
    if anchor >= features.len() {
        return Err(DesignError::InvalidArm(anchor));
    }
    let x0 = features.feature(anchor);
    let diffs: Vec<_> = features.features().iter().map(|x| x - x0).collect();
    let basis = linalg::span_basis(&diffs, features.dim());
    let r = basis.ncols();
    if r == 0 {
        return Err(DesignError::DegenerateFeatures);
    }
    let z = project(&basis, &diffs);
    let projected = FeatureSet {
        dim: r,
        features: z,
    };
    let moments = policy_moments(&projected, policy)?;
    let eig = linalg::eig_sym(moments.covariance.as_matrix())?;
    let mut anchor_norm: f64 = 0.0;
    let mut centered_norm: f64 = 0.0;
    for zi in projected.features() {
        let a = linalg::norm_from_eigen(&eig, zi, DEFAULT_RANGE_TOL);
        let c = linalg::norm_from_eigen(&eig, &(zi - &moments.mean), DEFAULT_RANGE_TOL);
        anchor_norm = anchor_norm.max(a.value());
        centered_norm = centered_norm.max(c.value());
    }
    Ok(DesignCertificate {
        max_anchor_norm: anchor_norm,
        max_centered_norm: centered_norm,
        support_size: policy.support().len(),
        rank: r,
    })
}

/// Design of experiment for orthogonalized regression.
///
/// Runs [`g_optimal`] on `b_i = x_i − x_anchor` (`i ≠ anchor`) and returns
/// `p_anchor = 1/2`, `p_i = p̃_i / 2`.
pub fn deo(
    features: &FeatureSet,
    anchor: usize,
    fw_tol: f64,
) -> Result<(DesignPolicy, DesignCertificate), DesignError> {
    let k = features.len();
    if k < 2 {
        return Err(DesignError::TooFewArms { need: 2, got: k });
    }
    if anchor >= k {
        return Err(DesignError::InvalidArm(anchor));
    }
    let x0 = features.feature(anchor);
    let others: Vec<usize> = (0..k).filter(|&i| i != anchor).collect();
    let diffs = FeatureSet {
        dim: features.dim(),
        features: others.iter().map(|&i| features.feature(i) - x0).collect(),
    };
    let inner = g_optimal(&diffs, fw_tol, default_max_iters(features.dim(), fw_tol))?;
    let mut p = vec![0.0; k];
    p[anchor] = 0.5;
    for (&arm, &q) in others.iter().zip(inner.probabilities()) {
        p[arm] = 0.5 * q;
    }
    let policy = DesignPolicy::from_weights(p)?;
    let cert = design_certificate(features, &policy, anchor)?;
    Ok((policy, cert))
}

/// `‖x‖²` of every arm under `M(p)` projected on the span; exposed for
/// stationarity checks.
pub fn leverages(features: &FeatureSet, policy: &DesignPolicy) -> Result<Vec<f64>, DesignError> {
    check_sizes(features, policy)?;
    let basis = features.span_basis();
    if basis.ncols() == 0 {
        return Err(DesignError::DegenerateFeatures);
    }
    let z = project(&basis, features.features());
    Ok(max_leverage(&z, policy.probabilities()).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fs(rows: &[&[f64]]) -> FeatureSet {
        FeatureSet::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn g_optimal_standard_basis_is_uniform() {
        let x = FeatureSet::standard_basis(3);
        let p = g_optimal(&x, 1e-6, 1000).unwrap();
        for &q in p.probabilities() {
            assert_relative_eq!(q, 1.0 / 3.0, epsilon = 1e-6);
        }
        let (v, r) = g_criterion(&x, &p).unwrap();
        assert_eq!(r, 3);
        assert_relative_eq!(v, 3.0, epsilon = 1e-5);
    }

    #[test]
    fn g_optimal_collinear_prefers_longer_vector() {
        // on the line, ‖x_i‖²/M with M = p₁ + 4p₂; max is 4/M at x₂ unless
        // p₁ = 0, where both leverages are ≤ 1 (grid check in tests/oracles.rs)
        let x = fs(&[&[1.0, 0.0], &[2.0, 0.0]]);
        let p = g_optimal(&x, 1e-3, 200).unwrap();
        assert_eq!(p.probabilities(), &[0.0, 1.0]);
        let (v, r) = g_criterion(&x, &p).unwrap();
        assert_eq!(r, 1);
        assert_relative_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn g_optimal_duplicates_merge() {
        let x = fs(&[&[0.3, 0.4], &[0.3, 0.4]]);
        let p = g_optimal(&x, 1e-3, 200).unwrap();
        assert_eq!(p.support().len(), 1);
        let (v, _) = g_criterion(&x, &p).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn g_optimal_zero_features() {
        let x = fs(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(
            g_optimal(&x, 1e-3, 10).unwrap_err(),
            DesignError::DegenerateFeatures
        );
    }

    #[test]
    fn g_optimal_reports_non_convergence() {
        let x = fs(&[
            &[1.0, 0.0, 0.0],
            &[0.6, 0.8, 0.0],
            &[0.1, 0.2, 0.9],
            &[-0.5, 0.5, 0.5],
            &[0.3, -0.9, 0.1],
        ]);
        match g_optimal(&x, 1e-12, 1) {
            Err(DesignError::ConvergenceError { best, .. }) => {
                assert_relative_eq!(
                    best.probabilities().iter().sum::<f64>(),
                    1.0,
                    epsilon = 1e-12
                )
            }
            other => panic!("expected ConvergenceError, got {other:?}"),
        }
    }

    #[test]
    fn deo_three_point_example() {
        let x = fs(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let (p, cert) = deo(&x, 0, 1e-6).unwrap();
        assert_relative_eq!(p.probability(0), 0.5);
        assert_relative_eq!(p.probability(1), 0.25, epsilon = 1e-6);
        assert_relative_eq!(p.probability(2), 0.25, epsilon = 1e-6);
        let m = policy_moments(&x, &p).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 3.0]) / 16.0;
        assert!((m.covariance.as_matrix() - expect).norm() < 1e-6);
        assert_relative_eq!(cert.max_anchor_norm, 6f64.sqrt(), epsilon = 1e-5);
        assert!(cert.max_anchor_norm <= 2.0 * 2f64.sqrt());
        assert_eq!(cert.rank, 2);
    }

    #[test]
    fn deo_two_arms_is_tight() {
        let x = fs(&[&[0.2, -0.1, 0.3], &[-0.4, 0.5, 0.1]]);
        let (p, cert) = deo(&x, 0, 1e-3).unwrap();
        assert_eq!(p.probabilities(), &[0.5, 0.5]);
        assert_eq!(cert.rank, 1);
        assert_relative_eq!(cert.max_anchor_norm, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn deo_identical_arms_degenerate() {
        let x = fs(&[&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]]);
        assert_eq!(
            deo(&x, 0, 1e-3).unwrap_err(),
            DesignError::DegenerateFeatures
        );
    }

    #[test]
    fn deo_single_arm_rejected() {
        let x = fs(&[&[0.5, 0.5]]);
        assert!(matches!(
            deo(&x, 0, 1e-3),
            Err(DesignError::TooFewArms { .. })
        ));
    }

    #[test]
    fn moments_point_mass_and_two_point() {
        let x = fs(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let m = policy_moments(&x, &DesignPolicy::point_mass(2, 0)).unwrap();
        assert_eq!(m.mean.as_slice(), &[1.0, 0.0]);
        assert_eq!(m.covariance.as_matrix().norm(), 0.0);
        let m = policy_moments(&x, &DesignPolicy::uniform(2)).unwrap();
        assert_eq!(m.mean.norm(), 0.0);
        assert_relative_eq!(m.covariance.as_matrix()[(0, 0)], 1.0);
        assert_eq!(m.covariance.as_matrix()[(1, 1)], 0.0);
    }

    #[test]
    fn pairwise_examples() {
        let x = fs(&[&[0.2, 0.7], &[-0.3, 0.1], &[0.9, -0.4]]);
        let c = covariance_pairwise(&x, &DesignPolicy::point_mass(3, 1)).unwrap();
        assert_eq!(c.as_matrix().norm(), 0.0);
        let two = x.subset(&[0, 1]).unwrap();
        let c = covariance_pairwise(&two, &DesignPolicy::uniform(2)).unwrap();
        let diff = two.feature(0) - two.feature(1);
        assert!((c.as_matrix() - &diff * diff.transpose() * 0.25).norm() < 1e-15);
    }

    #[test]
    fn policy_validation() {
        assert!(DesignPolicy::new(vec![0.5, 0.4]).is_err());
        assert!(DesignPolicy::new(vec![1.5, -0.5]).is_err());
        let p = DesignPolicy::new(vec![0.25, 0.0, 0.75]).unwrap();
        assert_eq!(p.support(), vec![0, 2]);
    }

    #[test]
    fn parse_round_trip() {
        let x = fs(&[&[0.1, -0.2], &[0.3, 0.4], &[1e-3, 0.5]]);
        let y = FeatureSet::parse(&x.to_text()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn parse_errors() {
        assert!(FeatureSet::parse("").is_err());
        assert!(FeatureSet::parse("2 2\n1 2\n3").is_err());
        assert!(FeatureSet::parse("2 3\n1 2\n3 4").is_err());
        assert!(FeatureSet::parse("2 x\n1 2").is_err());
    }
}
