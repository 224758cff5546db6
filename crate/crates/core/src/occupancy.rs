//! Occupancy distributions and the two occupancy critics: the count-based
//! Monte Carlo estimator and the maximum-likelihood density fit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sample_states_geometric, TabularMdp, Trajectory};
use crate::policy::{softmax_into, SoftmaxPolicy};
use crate::rng::RngSeed;

/// Tolerance on the total mass of an [`OccupancyDistribution`].
pub const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    States,
    /// Entries ordered by `s * n_actions + a`.
    StateActions { n_actions: usize },
}

/// A probability vector over states or state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyDistribution {
    support: Support,
    probs: Vec<f64>,
}

fn validate(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::invalid("occupancy distribution", "empty support"));
    }
    if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid(
            "occupancy distribution",
            format!("entry {i} is {}", probs[i]),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > MASS_TOL {
        return Err(Error::invalid(
            "occupancy distribution",
            format!("mass is {sum}, expected 1"),
        ));
    }
    Ok(())
}

impl OccupancyDistribution {
    pub fn over_states(probs: Vec<f64>) -> Result<Self> {
        validate(&probs)?;
        Ok(Self::states_unchecked(probs))
    }

    pub fn over_pairs(probs: Vec<f64>, n_actions: usize) -> Result<Self> {
        validate(&probs)?;
        if n_actions == 0 || !probs.len().is_multiple_of(n_actions) {
            return Err(Error::invalid(
                "occupancy distribution",
                format!("{} entries is not a multiple of {n_actions} actions", probs.len()),
            ));
        }
        Ok(Self::pairs_unchecked(probs, n_actions))
    }

    /// Nonnegative pair measure with any total mass. Utilities extend to such
    /// measures, which is what finite differences off the simplex need.
    pub fn pair_measure(probs: Vec<f64>, n_actions: usize) -> Result<Self> {
        if let Some(v) = probs.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid("pair measure", format!("entry {v} is not a finite nonnegative number")));
        }
        if n_actions == 0 || !probs.len().is_multiple_of(n_actions) {
            return Err(Error::invalid(
                "pair measure",
                format!("{} entries is not a multiple of {n_actions} actions", probs.len()),
            ));
        }
        Ok(Self::pairs_unchecked(probs, n_actions))
    }

    pub(crate) fn states_unchecked(probs: Vec<f64>) -> Self {
        Self {
            support: Support::States,
            probs,
        }
    }

    pub(crate) fn pairs_unchecked(probs: Vec<f64>, n_actions: usize) -> Self {
        Self {
            support: Support::StateActions { n_actions },
            probs,
        }
    }

    pub fn uniform_states(n: usize) -> Self {
        Self::states_unchecked(vec![1.0 / n as f64; n])
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn n_actions(&self) -> Option<usize> {
        match self.support {
            Support::States => None,
            Support::StateActions { n_actions } => Some(n_actions),
        }
    }

    /// `mu(s) = sum_a lambda(s, a)`; identity for state distributions.
    pub fn state_marginal(&self) -> OccupancyDistribution {
        match self.support {
            Support::States => self.clone(),
            Support::StateActions { n_actions } => Self::states_unchecked(
                self.probs.chunks(n_actions).map(|c| c.iter().sum()).collect(),
            ),
        }
    }

    /// `lambda(s, a) = d(s) pi(a|s)` for a state distribution `d`.
    pub fn with_policy(&self, policy: &SoftmaxPolicy) -> Result<OccupancyDistribution> {
        if self.support != Support::States || self.probs.len() != policy.n_states() {
            return Err(Error::Usage(
                "with_policy needs a state distribution matching the policy".into(),
            ));
        }
        let n_actions = policy.n_actions();
        let table = policy.prob_table();
        let probs = table
            .iter()
            .enumerate()
            .map(|(i, p)| self.probs[i / n_actions] * p)
            .collect();
        Ok(Self::pairs_unchecked(probs, n_actions))
    }
}

/// Total variation `0.5 * ||p - q||_1`.
pub fn tv_distance(p: &OccupancyDistribution, q: &OccupancyDistribution) -> Result<f64> {
    if p.support != q.support || p.probs.len() != q.probs.len() {
        return Err(Error::Usage(format!(
            "cannot compare distributions over {:?}/{} and {:?}/{}",
            p.support,
            p.probs.len(),
            q.support,
            q.probs.len()
        )));
    }
    Ok(0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Count-based estimate of `lambda^pi`: the average of the truncated discounted
/// visitation masses `sum_{h<H} gamma^h delta_{s_h, a_h}`, rescaled by
/// `(1 - gamma) / (1 - gamma^H)` and renormalized to unit mass.
pub fn count_based_estimate(
    trajectories: &[Trajectory],
    gamma: f64,
    n_states: usize,
    n_actions: usize,
) -> Result<OccupancyDistribution> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::Usage("count-based estimate needs at least one trajectory".into()))?;
    let horizon = first.horizon();
    if horizon == 0 {
        return Err(Error::Usage("trajectories must be non-empty".into()));
    }
    let mut mass = vec![0.0; n_states * n_actions];
    for tau in trajectories {
        if tau.horizon() != horizon {
            return Err(Error::Usage(format!(
                "trajectories must share one horizon ({} vs {horizon})",
                tau.horizon()
            )));
        }
        let mut w = 1.0;
        for &(s, a) in &tau.steps {
            if s >= n_states || a >= n_actions {
                return Err(Error::Usage(format!("pair ({s}, {a}) out of range")));
            }
            mass[s * n_actions + a] += w;
            w *= gamma;
        }
    }
    let scale = (1.0 - gamma) / (1.0 - gamma.powi(horizon as i32)) / trajectories.len() as f64;
    for m in &mut mass {
        *m *= scale;
    }
    let total: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= total;
    }
    Ok(OccupancyDistribution::pairs_unchecked(mass, n_actions))
}

/// State feature table `psi(s) in R^dim`, row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    n_states: usize,
    dim: usize,
    table: Vec<f64>,
}

impl StateFeatures {
    pub fn new(n_states: usize, dim: usize, table: Vec<f64>) -> Result<Self> {
        if dim == 0 || table.len() != n_states * dim {
            return Err(Error::invalid(
                "state features",
                format!("expected {n_states} rows of positive length {dim}"),
            ));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("state features", "non-finite entry"));
        }
        Ok(Self {
            n_states,
            dim,
            table,
        })
    }

    pub fn one_hot(n_states: usize) -> Self {
        let mut table = vec![0.0; n_states * n_states];
        for s in 0..n_states {
            table[s * n_states + s] = 1.0;
        }
        Self {
            n_states,
            dim: n_states,
            table,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.table[s * self.dim..(s + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityKind {
    /// One logit per state.
    TabularSoftmax,
    /// Logit of `s` is `<psi(s), omega>`.
    FeatureSoftmax(Arc<StateFeatures>),
}

/// Softmax density `p_omega(s) = exp(psi_omega(s)) / Z(omega)` with
/// `||omega||_inf <= omega_box`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    n_states: usize,
    kind: DensityKind,
    omega: Vec<f64>,
    omega_box: f64,
}

impl DensityModel {
    pub fn tabular(n_states: usize, omega_box: f64) -> Self {
        Self {
            n_states,
            kind: DensityKind::TabularSoftmax,
            omega: vec![0.0; n_states],
            omega_box,
        }
    }

    pub fn feature(features: Arc<StateFeatures>, omega_box: f64) -> Self {
        Self {
            n_states: features.n_states,
            omega: vec![0.0; features.dim],
            kind: DensityKind::FeatureSoftmax(features),
            omega_box,
        }
    }

    pub fn with_omega(&self, omega: Vec<f64>) -> Result<Self> {
        if omega.len() != self.omega.len() {
            return Err(Error::Config(format!(
                "density model needs {} parameters, got {}",
                self.omega.len(),
                omega.len()
            )));
        }
        if omega.iter().any(|w| !w.is_finite() || w.abs() > self.omega_box) {
            return Err(Error::invalid(
                "density model",
                format!("parameters must be finite and within +-{}", self.omega_box),
            ));
        }
        Ok(Self {
            omega,
            ..self.clone()
        })
    }

    /// Same parameters under a different box; fails if they fall outside it.
    pub fn with_box(&self, omega_box: f64) -> Result<Self> {
        Self {
            omega_box,
            ..self.clone()
        }
        .with_omega(self.omega.clone())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn omega_box(&self) -> f64 {
        self.omega_box
    }

    fn logits_of(&self, omega: &[f64]) -> Vec<f64> {
        match &self.kind {
            DensityKind::TabularSoftmax => omega.to_vec(),
            DensityKind::FeatureSoftmax(f) => (0..self.n_states)
                .map(|s| f.row(s).iter().zip(omega).map(|(x, w)| x * w).sum())
                .collect(),
        }
    }

    fn probs_of(&self, omega: &[f64]) -> Vec<f64> {
        let logits = self.logits_of(omega);
        let mut p = vec![0.0; logits.len()];
        softmax_into(&logits, &mut p);
        p
    }

    pub fn probs(&self) -> Vec<f64> {
        self.probs_of(&self.omega)
    }

    pub fn distribution(&self) -> OccupancyDistribution {
        OccupancyDistribution::states_unchecked(self.probs())
    }

    /// `sum_s freq(s) log p_omega(s)`.
    fn avg_log_likelihood_of(&self, omega: &[f64], freq: &[f64]) -> f64 {
        let logits = self.logits_of(omega);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        freq.iter()
            .zip(&logits)
            .filter(|(f, _)| **f > 0.0)
            .map(|(f, l)| f * (l - lse))
            .sum()
    }

    /// Average log-likelihood `(1/n) sum_i log p_omega(s_i)`.
    pub fn avg_log_likelihood(&self, samples: &[usize]) -> Result<f64> {
        let freq = frequencies(samples, self.n_states)?;
        Ok(self.avg_log_likelihood_of(&self.omega, &freq))
    }

    fn gradient_of(&self, omega: &[f64], freq: &[f64]) -> Vec<f64> {
        let p = self.probs_of(omega);
        match &self.kind {
            DensityKind::TabularSoftmax => freq.iter().zip(&p).map(|(f, q)| f - q).collect(),
            DensityKind::FeatureSoftmax(feat) => {
                let mut g = vec![0.0; feat.dim];
                for s in 0..self.n_states {
                    let w = freq[s] - p[s];
                    if w != 0.0 {
                        for (gk, x) in g.iter_mut().zip(feat.row(s)) {
                            *gk += w * x;
                        }
                    }
                }
                g
            }
        }
    }

    pub fn to_file(&self) -> DensityFile {
        let (kind, state_features) = match &self.kind {
            DensityKind::TabularSoftmax => ("tabular_softmax".to_string(), None),
            DensityKind::FeatureSoftmax(f) => (
                "feature_softmax".to_string(),
                Some(f.table.chunks(f.dim).map(<[f64]>::to_vec).collect()),
            ),
        };
        DensityFile {
            kind,
            n_states: self.n_states,
            omega: self.omega.clone(),
            b_omega: self.omega_box,
            state_features,
        }
    }

    pub fn from_file(file: DensityFile) -> Result<Self> {
        let base = match file.kind.as_str() {
            "tabular_softmax" => Self::tabular(file.n_states, file.b_omega),
            "feature_softmax" => {
                let rows = file.state_features.ok_or_else(|| {
                    Error::invalid("density checkpoint", "feature_softmax requires state_features")
                })?;
                let dim = rows.first().map(Vec::len).unwrap_or(0);
                if rows.len() != file.n_states || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::invalid(
                        "density checkpoint",
                        "state_features must have n_states rows of equal length",
                    ));
                }
                let f = StateFeatures::new(file.n_states, dim, rows.into_iter().flatten().collect())?;
                Self::feature(Arc::new(f), file.b_omega)
            }
            other => {
                return Err(Error::invalid(
                    "density checkpoint",
                    format!("unknown kind {other:?}"),
                ))
            }
        };
        base.with_omega(file.omega)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("density serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DensityFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<density>".into(),
            msg: e.to_string(),
        })?;
        Self::from_file(file)
    }
}

/// On-disk fitted density model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityFile {
    pub kind: String,
    pub n_states: usize,
    pub omega: Vec<f64>,
    #[serde(rename = "B_omega")]
    pub b_omega: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_features: Option<Vec<Vec<f64>>>,
}

fn frequencies(samples: &[usize], n_states: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Usage("maximum likelihood needs at least one sample".into()));
    }
    let mut freq = vec![0.0; n_states];
    for &s in samples {
        if s >= n_states {
            return Err(Error::Usage(format!("sample state {s} out of range")));
        }
        freq[s] += 1.0;
    }
    let n = samples.len() as f64;
    for f in &mut freq {
        *f /= n;
    }
    Ok(freq)
}

/// Settings of the projected gradient ascent used to fit a [`DensityModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub max_iters: usize,
    pub learning_rate: f64,
    pub grad_tol: f64,
    #[serde(rename = "B_omega")]
    pub omega_box: f64,
}

impl MleConfig {
    pub fn tabular_default() -> Self {
        Self {
            max_iters: 5000,
            learning_rate: 0.5,
            grad_tol: 1e-6,
            omega_box: 30.0,
        }
    }

    pub fn feature_default() -> Self {
        Self {
            learning_rate: 0.1,
            ..Self::tabular_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("mle max_iters must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.grad_tol > 0.0 && self.omega_box > 0.0) {
            return Err(Error::Config(
                "mle learning_rate, grad_tol and B_omega must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleIterate {
    pub iter: usize,
    pub avg_loglik: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct MleFit {
    pub model: DensityModel,
    pub history: Vec<MleIterate>,
}

impl MleFit {
    /// Diagnostic CSV `iter,avg_loglik,grad_norm`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iter,avg_loglik,grad_norm\n");
        for h in &self.history {
            out.push_str(&format!("{},{},{}\n", h.iter, h.avg_loglik, h.grad_norm));
        }
        out
    }
}

/// Maximum-likelihood fit of a softmax density by projected gradient ascent.
///
/// Each step is clipped to the `B_omega` box. A step that would lower the
/// likelihood is halved until it does not, so the returned likelihood is never
/// below the initial one. Stops once the projected-gradient sup-norm drops
/// below `grad_tol` or after `max_iters` steps.
pub fn mle_fit(samples: &[usize], init: &DensityModel, cfg: &MleConfig) -> Result<MleFit> {
    cfg.validate()?;
    let freq = frequencies(samples, init.n_states)?;
    let bound = cfg.omega_box;
    let clip = |w: f64| w.clamp(-bound, bound);
    if init.omega.iter().any(|w| w.abs() > bound) {
        return Err(Error::Config(format!(
            "initial density parameters lie outside the B_omega = {bound} box"
        )));
    }
    let mut omega = init.omega.clone();
    let mut ll = init.avg_log_likelihood_of(&omega, &freq);
    if !ll.is_finite() {
        return Err(Error::Internal("non-finite log-likelihood at init".into()));
    }
    let mut history = Vec::new();
    let mut step = cfg.learning_rate;
    for iter in 0..cfg.max_iters {
        let grad = init.gradient_of(&omega, &freq);
        let grad_norm = omega
            .iter()
            .zip(&grad)
            .map(|(w, g)| (clip(w + g) - w).abs())
            .fold(0.0, f64::max);
        history.push(MleIterate {
            iter,
            avg_loglik: ll,
            grad_norm,
        });
        if grad_norm < cfg.grad_tol {
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = omega.iter().zip(&grad).map(|(w, g)| clip(w + step * g)).collect();
            let cand_ll = init.avg_log_likelihood_of(&cand, &freq);
            if !cand_ll.is_finite() {
                return Err(Error::Internal("non-finite log-likelihood".into()));
            }
            if cand_ll >= ll {
                omega = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let model = DensityModel {
        omega,
        omega_box: bound,
        ..init.clone()
    };
    Ok(MleFit { model, history })
}

/// MLE critic: draws `n_samples` i.i.d. states from `d^pi` with the
/// geometric-horizon sampler, fits `model_init`, and returns
/// `(d_hat, lambda_hat = d_hat * pi)` together with the fit.
pub fn mle_occupancy_estimate(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    n_samples: usize,
    model_init: &DensityModel,
    cfg: &MleConfig,
    seed: RngSeed,
) -> Result<(OccupancyDistribution, OccupancyDistribution, MleFit)> {
    if n_samples == 0 {
        return Err(Error::Usage("n_samples must be >= 1".into()));
    }
    if model_init.n_states != mdp.n_states() {
        return Err(Error::Config(format!(
            "density model is over {} states, MDP has {}",
            model_init.n_states,
            mdp.n_states()
        )));
    }
    let samples = sample_states_geometric(mdp, policy, n_samples, seed)?;
    let fit = mle_fit(&samples, model_init, cfg)?;
    let d_hat = fit.model.distribution();
    let lambda_hat = d_hat.with_policy(policy)?;
    Ok((d_hat, lambda_hat, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::{chain, single};
    use crate::mdp::exact_occupancy;
    use proptest::prelude::*;

    fn states(p: &[f64]) -> OccupancyDistribution {
        OccupancyDistribution::over_states(p.to_vec()).unwrap()
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&states(&[0.3, 0.7]), &states(&[0.3, 0.7])).unwrap(), 0.0);
        assert_eq!(tv_distance(&states(&[1.0, 0.0]), &states(&[0.0, 1.0])).unwrap(), 1.0);
        assert!((tv_distance(&states(&[0.25, 0.75]), &states(&[0.5, 0.5])).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(
            tv_distance(&states(&[1.0]), &states(&[0.5, 0.5])),
            Err(Error::Usage(_))
        ));
        let pairs = OccupancyDistribution::over_pairs(vec![0.5, 0.5], 2).unwrap();
        assert!(tv_distance(&states(&[0.5, 0.5]), &pairs).is_err());
    }

    #[test]
    fn rejects_invalid_distributions() {
        assert!(OccupancyDistribution::over_states(vec![0.5, 0.4]).is_err());
        assert!(OccupancyDistribution::over_states(vec![1.5, -0.5]).is_err());
        assert!(OccupancyDistribution::over_pairs(vec![0.2, 0.3, 0.5], 2).is_err());
    }

    #[test]
    fn count_based_single_cell() {
        let tau = Trajectory {
            steps: vec![(0, 0), (0, 0)],
        };
        let est = count_based_estimate(&[tau], 0.5, 1, 1).unwrap();
        assert_eq!(est.probs(), &[1.0]);
    }

    #[test]
    fn count_based_gamma_zero_counts_first_pairs() {
        let taus = vec![
            Trajectory { steps: vec![(0, 1), (1, 1), (1, 0)] },
            Trajectory { steps: vec![(1, 0), (0, 0), (0, 0)] },
            Trajectory { steps: vec![(0, 1), (0, 0), (1, 1)] },
            Trajectory { steps: vec![(1, 1), (1, 1), (1, 1)] },
        ];
        let est = count_based_estimate(&taus, 0.0, 2, 2).unwrap();
        assert_eq!(est.probs(), &[0.0, 0.5, 0.25, 0.25]);
    }

    #[test]
    fn count_based_chain_example() {
        let tau = Trajectory {
            steps: vec![(0, 0), (1, 0)],
        };
        let est = count_based_estimate(&[tau], 0.5, 2, 1).unwrap();
        assert!((est.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((est.probs()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn count_based_usage_errors() {
        assert!(matches!(count_based_estimate(&[], 0.5, 2, 1), Err(Error::Usage(_))));
        let a = Trajectory { steps: vec![(0, 0)] };
        let b = Trajectory { steps: vec![(0, 0), (1, 0)] };
        assert!(matches!(count_based_estimate(&[a, b], 0.5, 2, 1), Err(Error::Usage(_))));
    }

    #[test]
    fn mle_degenerate_samples_hit_the_box() {
        let cfg = MleConfig {
            omega_box: 20.0,
            ..MleConfig::tabular_default()
        };
        let fit = mle_fit(&[0; 50], &DensityModel::tabular(2, 20.0), &cfg).unwrap();
        assert!(fit.model.probs()[0] >= 0.999);
        assert!(fit.model.omega().iter().all(|w| w.abs() <= 20.0));
    }

    #[test]
    fn mle_recovers_empirical_frequencies() {
        let cfg = MleConfig::tabular_default();
        let samples = [0, 1, 1, 1];
        let fit = mle_fit(&samples, &DensityModel::tabular(2, 30.0), &cfg).unwrap();
        let tv = tv_distance(&fit.model.distribution(), &states(&[0.25, 0.75])).unwrap();
        assert!(tv < 10.0 * cfg.grad_tol, "tv {tv}");
    }

    #[test]
    fn one_hot_feature_fit_matches_tabular() {
        let samples = [0, 1, 1, 2, 2, 2, 3, 3, 3, 3, 2, 1];
        let tab = mle_fit(&samples, &DensityModel::tabular(4, 30.0), &MleConfig::tabular_default())
            .unwrap();
        let feat = DensityModel::feature(Arc::new(StateFeatures::one_hot(4)), 30.0);
        let fit = mle_fit(&samples, &feat, &MleConfig::feature_default()).unwrap();
        let tv = tv_distance(&tab.model.distribution(), &fit.model.distribution()).unwrap();
        assert!(tv < 1e-6, "tv {tv}");
    }

    #[test]
    fn mle_history_and_checkpoint() {
        let samples = [0, 0, 1, 2];
        let fit = mle_fit(&samples, &DensityModel::tabular(3, 30.0), &MleConfig::tabular_default())
            .unwrap();
        let csv = fit.history_csv();
        assert!(csv.starts_with("iter,avg_loglik,grad_norm\n0,"));
        let back = DensityModel::from_json(&fit.model.to_json()).unwrap();
        assert_eq!(back, fit.model);

        let f = Arc::new(StateFeatures::new(3, 2, vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0]).unwrap());
        let m = DensityModel::feature(f, 5.0).with_omega(vec![0.25, -1.0 / 3.0]).unwrap();
        assert_eq!(DensityModel::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn mle_rejects_bad_input() {
        let cfg = MleConfig::tabular_default();
        assert!(matches!(mle_fit(&[], &DensityModel::tabular(2, 30.0), &cfg), Err(Error::Usage(_))));
        assert!(matches!(mle_fit(&[5], &DensityModel::tabular(2, 30.0), &cfg), Err(Error::Usage(_))));
    }

    #[test]
    fn mle_estimate_single_state() {
        let mdp = single(0.9);
        let pi = SoftmaxPolicy::tabular(1, 1);
        let (d, l, _) = mle_occupancy_estimate(
            &mdp,
            &pi,
            10,
            &DensityModel::tabular(1, 30.0),
            &MleConfig::tabular_default(),
            RngSeed(1),
        )
        .unwrap();
        assert_eq!(d.probs(), &[1.0]);
        assert_eq!(l.probs(), &[1.0]);
    }

    #[test]
    fn mle_estimate_chain() {
        let mdp = chain(2, 0.5);
        let pi = SoftmaxPolicy::tabular_with_theta(2, 2, vec![0.4, -0.2, 1.0, 0.0]).unwrap();
        let (d, l, _) = mle_occupancy_estimate(
            &mdp,
            &pi,
            10_000,
            &DensityModel::tabular(2, 30.0),
            &MleConfig::tabular_default(),
            RngSeed(17),
        )
        .unwrap();
        let (exact, _) = exact_occupancy(&mdp, &pi).unwrap();
        assert!(tv_distance(&d, &exact).unwrap() < 0.05);
        for s in 0..2 {
            let probs = pi.action_probs(s);
            for (a, &pa) in probs.iter().enumerate() {
                let ratio = l.probs()[s * 2 + a] / d.probs()[s];
                assert!((ratio - pa).abs() < 1e-15);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn mle_is_monotone(samples in prop::collection::vec(0usize..5, 1..60),
                           init in prop::collection::vec(-3.0f64..3.0, 5)) {
            let model = DensityModel::tabular(5, 30.0).with_omega(init).unwrap();
            let before = model.avg_log_likelihood(&samples).unwrap();
            let fit = mle_fit(&samples, &model, &MleConfig { max_iters: 200, ..MleConfig::tabular_default() }).unwrap();
            let after = fit.model.avg_log_likelihood(&samples).unwrap();
            prop_assert!(after >= before);
        }

        #[test]
        fn full_support_fit_matches_empirical(counts in prop::collection::vec(1usize..40, 2..8)) {
            let samples: Vec<usize> = counts.iter().enumerate().flat_map(|(s, &c)| std::iter::repeat_n(s, c)).collect();
            let n = samples.len() as f64;
            let emp: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
            let fit = mle_fit(&samples, &DensityModel::tabular(counts.len(), 20.0), &MleConfig { omega_box: 20.0, ..MleConfig::tabular_default() }).unwrap();
            let tv = tv_distance(&fit.model.distribution(), &states(&emp)).unwrap();
            prop_assert!(tv < 1e-3, "tv {}", tv);
        }
    }
}
