//! Softmax policies whose logits are linear in the parameters.
//!
//! Two parametrizations are supported: `Tabular`, with one logit per
//! state-action pair (`theta[s * n_actions + a]`), and `FeatureLinear`, where
//! the logit of `(s, a)` is `<phi(s, a), theta>` for a fixed feature table.
//! Both give analytic score functions, so no autodiff is needed.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature table `phi(s, a) in R^dim`, stored row-major by `s * n_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionFeatures {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    table: Vec<f64>,
}

impl ActionFeatures {
    pub fn new(n_states: usize, n_actions: usize, dim: usize, table: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("action features", "dimension must be positive"));
        }
        if table.len() != n_states * n_actions * dim {
            return Err(Error::invalid(
                "action features",
                format!(
                    "expected {} entries for {}x{}x{}, got {}",
                    n_states * n_actions * dim,
                    n_states,
                    n_actions,
                    dim,
                    table.len()
                ),
            ));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("action features", "non-finite entry"));
        }
        Ok(Self {
            n_states,
            n_actions,
            dim,
            table,
        })
    }

    /// One-hot action features `phi(s, a) = e_a`; shares logits across states.
    pub fn one_hot_actions(n_states: usize, n_actions: usize) -> Self {
        let mut table = vec![0.0; n_states * n_actions * n_actions];
        for s in 0..n_states {
            for a in 0..n_actions {
                table[(s * n_actions + a) * n_actions + a] = 1.0;
            }
        }
        Self {
            n_states,
            n_actions,
            dim: n_actions,
            table,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.dim;
        &self.table[start..start + self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    Tabular,
    FeatureLinear(Arc<ActionFeatures>),
}

/// A strictly positive softmax policy `pi_theta(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    kind: PolicyKind,
    theta: Vec<f64>,
}

/// Numerically stable softmax, written into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

impl SoftmaxPolicy {
    /// Tabular policy with all-zero logits (uniform over actions).
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            kind: PolicyKind::Tabular,
            theta: vec![0.0; n_states * n_actions],
        }
    }

    pub fn tabular_with_theta(n_states: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != n_states * n_actions {
            return Err(Error::Config(format!(
                "tabular policy needs {} parameters, got {}",
                n_states * n_actions,
                theta.len()
            )));
        }
        Self::check_finite(&theta)?;
        Ok(Self {
            n_states,
            n_actions,
            kind: PolicyKind::Tabular,
            theta,
        })
    }

    pub fn feature_linear(features: Arc<ActionFeatures>, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != features.dim {
            return Err(Error::Config(format!(
                "feature policy needs {} parameters, got {}",
                features.dim,
                theta.len()
            )));
        }
        Self::check_finite(&theta)?;
        Ok(Self {
            n_states: features.n_states,
            n_actions: features.n_actions,
            kind: PolicyKind::FeatureLinear(features),
            theta,
        })
    }

    fn check_finite(theta: &[f64]) -> Result<()> {
        match theta.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numerical(format!("theta[{i}] is not finite"))),
            None => Ok(()),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Parameter dimension `d`.
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Same parametrization, new parameters.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.theta.len(),
                theta.len()
            )));
        }
        Self::check_finite(&theta)?;
        Ok(Self {
            theta,
            ..self.clone()
        })
    }

    pub fn logits_into(&self, s: usize, out: &mut [f64]) {
        match &self.kind {
            PolicyKind::Tabular => {
                out.copy_from_slice(&self.theta[s * self.n_actions..(s + 1) * self.n_actions])
            }
            PolicyKind::FeatureLinear(f) => {
                for (a, o) in out.iter_mut().enumerate() {
                    *o = f.row(s, a).iter().zip(&self.theta).map(|(x, t)| x * t).sum();
                }
            }
        }
    }

    pub fn action_probs_into(&self, s: usize, out: &mut [f64]) {
        self.logits_into(s, out);
        let logits = out.to_vec();
        softmax_into(&logits, out);
    }

    /// `pi_theta(.|s)`.
    pub fn action_probs(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions];
        self.action_probs_into(s, &mut out);
        out
    }

    /// Row-major `|S| x |A|` table of action probabilities.
    pub fn prob_table(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states * self.n_actions];
        for s in 0..self.n_states {
            self.action_probs_into(s, &mut out[s * self.n_actions..(s + 1) * self.n_actions]);
        }
        out
    }

    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        let mut logits = vec![0.0; self.n_actions];
        self.logits_into(s, &mut logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits[a] - lse
    }

    /// Adds `weight * grad log pi_theta(a|s)` to `out`.
    ///
    /// `probs` must hold `pi_theta(.|s)`.
    pub fn add_scaled_score(&self, s: usize, a: usize, probs: &[f64], weight: f64, out: &mut [f64]) {
        match &self.kind {
            PolicyKind::Tabular => {
                let block = &mut out[s * self.n_actions..(s + 1) * self.n_actions];
                for (b, (o, &p)) in block.iter_mut().zip(probs).enumerate() {
                    let ind = if b == a { 1.0 } else { 0.0 };
                    *o += weight * (ind - p);
                }
            }
            PolicyKind::FeatureLinear(f) => {
                for (k, o) in out.iter_mut().enumerate() {
                    let mean: f64 = (0..self.n_actions).map(|b| probs[b] * f.row(s, b)[k]).sum();
                    *o += weight * (f.row(s, a)[k] - mean);
                }
            }
        }
    }

    /// `grad_theta log pi_theta(a|s)` as a dense vector.
    pub fn score(&self, s: usize, a: usize) -> Vec<f64> {
        let probs = self.action_probs(s);
        let mut out = vec![0.0; self.dim()];
        self.add_scaled_score(s, a, &probs, 1.0, &mut out);
        out
    }

    /// `theta + alpha * gradient`, as a new policy.
    pub fn ascent_step(&self, gradient: &[f64], alpha: f64) -> Result<Self> {
        if gradient.len() != self.dim() {
            return Err(Error::Config(format!(
                "gradient has {} entries, policy has {} parameters",
                gradient.len(),
                self.dim()
            )));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("step size must be finite and >= 0, got {alpha}")));
        }
        if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("gradient[{i}] is not finite")));
        }
        let theta: Vec<f64> = self
            .theta
            .iter()
            .zip(gradient)
            .map(|(t, g)| t + alpha * g)
            .collect();
        self.with_theta(theta)
    }

    pub fn to_file(&self) -> PolicyFile {
        let (kind, feature_spec) = match &self.kind {
            PolicyKind::Tabular => ("tabular".to_string(), None),
            PolicyKind::FeatureLinear(f) => (
                "feature_linear".to_string(),
                Some(FeatureSpec {
                    dim: f.dim,
                    features: f.table.chunks(f.dim).map(<[f64]>::to_vec).collect(),
                }),
            ),
        };
        PolicyFile {
            kind,
            n_states: self.n_states,
            n_actions: self.n_actions,
            theta: self.theta.clone(),
            feature_spec,
        }
    }

    pub fn from_file(file: PolicyFile) -> Result<Self> {
        match file.kind.as_str() {
            "tabular" => Self::tabular_with_theta(file.n_states, file.n_actions, file.theta),
            "feature_linear" => {
                let spec = file.feature_spec.ok_or_else(|| {
                    Error::invalid("policy checkpoint", "feature_linear requires feature_spec")
                })?;
                if spec.features.len() != file.n_states * file.n_actions
                    || spec.features.iter().any(|r| r.len() != spec.dim)
                {
                    return Err(Error::invalid(
                        "policy checkpoint",
                        "feature_spec.features must have n_states*n_actions rows of length dim",
                    ));
                }
                let table = spec.features.into_iter().flatten().collect();
                let f = ActionFeatures::new(file.n_states, file.n_actions, spec.dim, table)?;
                Self::feature_linear(Arc::new(f), file.theta)
            }
            other => Err(Error::invalid(
                "policy checkpoint",
                format!("unknown kind {other:?}"),
            )),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<policy>".into(),
            msg: e.to_string(),
        })?;
        Self::from_file(file)
    }
}

/// On-disk policy checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub kind: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_spec: Option<FeatureSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub dim: usize,
    /// One row per `(s, a)`, ordered by `s * n_actions + a`.
    pub features: Vec<Vec<f64>>,
}
