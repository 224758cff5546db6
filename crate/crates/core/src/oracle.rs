//! Brute-force and statistical oracles that the tests and the acceptance
//! suite check the implementation against. Nothing here shares a code path
//! with the estimators it is used to verify.

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, Trajectory};
use crate::occupancy::OccupancyDistribution;
use crate::policy::SoftmaxPolicy;

/// Cap on the number of weighted paths [`enumerate_trajectory_expectation`] visits.
pub const ENUMERATION_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSpec {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for FdSpec {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-6,
        }
    }
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn fd_gradient<F>(f: F, x: &[f64], spec: &FdSpec) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if spec.step.is_nan() || spec.step <= 0.0 {
        return Err(Error::Usage("finite-difference step must be > 0".into()));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + spec.step;
        let fp = f(&probe);
        probe[i] = x[i] - spec.step;
        let fm = f(&probe);
        probe[i] = x[i];
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::Numerical(format!(
                "oracle: f is not finite around coordinate {i}"
            )));
        }
        grad.push((fp - fm) / (2.0 * spec.step));
    }
    Ok(grad)
}

/// Largest absolute coordinate difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Exact `E_{rho, pi}[f(tau)]` over all length-`horizon` paths, by exhaustive
/// weighted enumeration. Zero-probability branches are pruned.
pub fn enumerate_trajectory_expectation<F>(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    horizon: usize,
    f: F,
) -> Result<Vec<f64>>
where
    F: Fn(&Trajectory) -> Vec<f64>,
{
    mdp.check_policy(policy)?;
    if horizon == 0 {
        return Err(Error::Usage("horizon must be >= 1".into()));
    }
    let paths = (mdp.n_pairs() as f64).powi(horizon as i32);
    if paths > ENUMERATION_LIMIT {
        return Err(Error::Usage(format!(
            "enumeration of {paths:e} paths exceeds the {ENUMERATION_LIMIT:e} guard"
        )));
    }
    let probs = policy.prob_table();
    let n_actions = mdp.n_actions();

    struct Walk<'a, F> {
        mdp: &'a TabularMdp,
        probs: &'a [f64],
        n_actions: usize,
        horizon: usize,
        f: F,
        acc: Option<Vec<f64>>,
    }

    impl<F: Fn(&Trajectory) -> Vec<f64>> Walk<'_, F> {
        fn visit(&mut self, tau: &mut Trajectory, s: usize, weight: f64) {
            for a in 0..self.n_actions {
                let wa = weight * self.probs[s * self.n_actions + a];
                if wa == 0.0 {
                    continue;
                }
                tau.steps.push((s, a));
                if tau.steps.len() == self.horizon {
                    let v = (self.f)(tau);
                    let acc = self.acc.get_or_insert_with(|| vec![0.0; v.len()]);
                    for (x, y) in acc.iter_mut().zip(&v) {
                        *x += wa * y;
                    }
                } else {
                    let row = self.mdp.row(s, a).to_vec();
                    for (next, p) in row {
                        self.visit(tau, next, wa * p);
                    }
                }
                tau.steps.pop();
            }
        }
    }

    let mut walk = Walk {
        mdp,
        probs: &probs,
        n_actions,
        horizon,
        f,
        acc: None,
    };
    let mut tau = Trajectory {
        steps: Vec::with_capacity(horizon),
    };
    for (s, &r) in mdp.rho().iter().enumerate() {
        if r > 0.0 {
            walk.visit(&mut tau, s, r);
        }
    }
    walk.acc
        .ok_or_else(|| Error::Internal("no path has positive probability".into()))
}

/// Gradient of the truncated return `E[sum_{t<H} gamma^t r(s_t, a_t)]` by
/// forward-mode differentiation of the marginal recursion
/// `p_{t+1}(s') = sum_{s,a} p_t(s) pi(a|s) P(s'|s,a)`.
pub fn truncated_return_gradient(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    reward: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    let (ns, na, d) = (mdp.n_states(), mdp.n_actions(), policy.dim());
    let mut p = mdp.rho().to_vec();
    let mut dp = vec![vec![0.0; d]; ns];
    let mut grad = vec![0.0; d];
    let mut discount = 1.0;
    for _ in 0..horizon {
        let mut p_next = vec![0.0; ns];
        let mut dp_next = vec![vec![0.0; d]; ns];
        for s in 0..ns {
            let probs = policy.action_probs(s);
            for a in 0..na {
                let q = p[s] * probs[a];
                let score = policy.score(s, a);
                let dq: Vec<f64> = (0..d)
                    .map(|k| dp[s][k] * probs[a] + q * score[k])
                    .collect();
                for k in 0..d {
                    grad[k] += discount * reward[s * na + a] * dq[k];
                }
                for &(sp, pr) in mdp.row(s, a) {
                    p_next[sp] += q * pr;
                    for k in 0..d {
                        dp_next[sp][k] += dq[k] * pr;
                    }
                }
            }
        }
        p = p_next;
        dp = dp_next;
        discount *= mdp.gamma();
    }
    Ok(grad)
}

/// Unnormalized truncated occupancy `sum_{t<H} gamma^t P(s_t = s, a_t = a)`
/// by propagating marginals.
pub fn truncated_pair_occupancy(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    horizon: usize,
) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    let na = mdp.n_actions();
    let probs = policy.prob_table();
    let mut p = mdp.rho().to_vec();
    let mut out = vec![0.0; mdp.n_pairs()];
    let mut discount = 1.0;
    for _ in 0..horizon {
        let mut next = vec![0.0; mdp.n_states()];
        for (s, &ps) in p.iter().enumerate() {
            for a in 0..na {
                let q = ps * probs[s * na + a];
                out[s * na + a] += discount * q;
                for &(sp, pr) in mdp.row(s, a) {
                    next[sp] += q * pr;
                }
            }
        }
        p = next;
        discount *= mdp.gamma();
    }
    Ok(out)
}

/// Normalized state occupancy truncated after `terms` steps:
/// `(1 - gamma) sum_{t<T} gamma^t rho^T P_pi^t`.
pub fn power_series_occupancy(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    terms: usize,
) -> Result<Vec<f64>> {
    let p_pi = mdp.policy_transition(policy)?;
    let g = mdp.gamma();
    let mut marginal = nalgebra::DVector::from_column_slice(mdp.rho());
    let mut out = nalgebra::DVector::zeros(mdp.n_states());
    let mut discount = 1.0 - g;
    let p_t = p_pi.transpose();
    for _ in 0..terms {
        out += discount * &marginal;
        marginal = &p_t * marginal;
        discount *= g;
    }
    Ok(out.iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvCheck {
    pub passed: bool,
    /// TV between the empirical distribution and the target.
    pub statistic: f64,
    pub threshold: f64,
}

/// Tests whether `samples` look like draws from `target`: passes iff
/// `TV(empirical, target) <= sqrt(|S| ln(2/alpha) / 2n) + sqrt(|S| / n)`.
pub fn tv_confidence_check(
    samples: &[usize],
    target: &OccupancyDistribution,
    alpha_level: f64,
) -> Result<TvCheck> {
    let k = target.len();
    let n = samples.len();
    if n < 30 * k {
        return Err(Error::Usage(format!(
            "need at least {} samples for {k} states, got {n}",
            30 * k
        )));
    }
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(Error::Usage("alpha_level must lie in (0, 1)".into()));
    }
    let mut counts = vec![0usize; k];
    for &s in samples {
        if s >= k {
            return Err(Error::Usage(format!("sample {s} out of range")));
        }
        counts[s] += 1;
    }
    let nf = n as f64;
    let statistic = 0.5
        * counts
            .iter()
            .zip(target.probs())
            .map(|(&c, &p)| (c as f64 / nf - p).abs())
            .sum::<f64>();
    let kf = k as f64;
    let threshold = (kf * (2.0 / alpha_level).ln() / (2.0 * nf)).sqrt() + (kf / nf).sqrt();
    Ok(TvCheck {
        passed: statistic <= threshold,
        statistic,
        threshold,
    })
}
