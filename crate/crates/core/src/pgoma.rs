//! The PG-OMA driver: an occupancy critic (MLE, count-based, or the exact
//! oracle) produces pseudo-rewards `grad_lambda F(lambda_hat)`, and a
//! REINFORCE actor ascends the truncated policy-gradient estimate.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{exact_occupancy, sample_trajectories, TabularMdp, Trajectory};
use crate::occupancy::{
    count_based_estimate, mle_fit, tv_distance, DensityModel, MleConfig, OccupancyDistribution,
};
use crate::policy::SoftmaxPolicy;
use crate::rng::RngSeed;
use crate::utility::Utility;

/// Above this many state-action pairs the MLE critic's pseudo-reward is
/// evaluated on demand instead of materialized.
pub const LAZY_PSEUDO_REWARD_THRESHOLD: usize = 100_000;

/// Size guard of [`exact_utility_gradient`].
pub const EXACT_GRADIENT_MAX_PAIRS: usize = 10_000;

const STREAM_CRITIC: u64 = 0;
const STREAM_ACTOR: u64 = 1;

/// Source of `r(s, a)` for the policy-gradient estimate.
pub trait RewardSource {
    fn reward(&self, s: usize, a: usize) -> f64;
}

/// Dense reward table indexed by `s * n_actions + a`.
#[derive(Debug, Clone, Copy)]
pub struct DenseReward<'a> {
    pub values: &'a [f64],
    pub n_actions: usize,
}

impl RewardSource for DenseReward<'_> {
    fn reward(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }
}

/// Truncated REINFORCE estimate
/// `g = sum_{t<H} (sum_{h=t}^{H-1} gamma^h r(s_h, a_h)) grad log pi(a_t|s_t)`,
/// accumulated in one backward pass over the trajectory.
pub fn pg_estimate<R: RewardSource + ?Sized>(
    tau: &Trajectory,
    policy: &SoftmaxPolicy,
    reward: &R,
    gamma: f64,
) -> Vec<f64> {
    let h = tau.horizon();
    let mut discounts = Vec::with_capacity(h);
    let mut w = 1.0;
    for _ in 0..h {
        discounts.push(w);
        w *= gamma;
    }
    let mut grad = vec![0.0; policy.dim()];
    let mut probs = vec![0.0; policy.n_actions()];
    let mut tail = 0.0;
    for t in (0..h).rev() {
        let (s, a) = tau.steps[t];
        tail += discounts[t] * reward.reward(s, a);
        if tail != 0.0 {
            policy.action_probs_into(s, &mut probs);
            policy.add_scaled_score(s, a, &probs, tail, &mut grad);
        }
    }
    grad
}

/// Exact `grad_theta <lambda^pi, r>` for a fixed reward vector:
/// `sum_{s,a} lambda(s,a) A(s,a) grad log pi(a|s)` with `A = Q - V` from a
/// dense linear solve.
pub fn exact_return_gradient(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    lambda: &OccupancyDistribution,
    reward: &[f64],
) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let probs = policy.prob_table();
    let p_pi = mdp.policy_transition(policy)?;
    let r_pi = DVector::from_iterator(
        ns,
        (0..ns).map(|s| (0..na).map(|a| probs[s * na + a] * reward[s * na + a]).sum()),
    );
    let lhs = DMatrix::identity(ns, ns) - mdp.gamma() * p_pi;
    let v = lhs
        .lu()
        .solve(&r_pi)
        .ok_or_else(|| Error::Internal("value equation is singular".into()))?;
    let mut grad = vec![0.0; policy.dim()];
    for s in 0..ns {
        let state_probs = &probs[s * na..(s + 1) * na];
        for a in 0..na {
            let weight = lambda.probs()[s * na + a];
            if weight == 0.0 {
                continue;
            }
            let q: f64 = reward[s * na + a]
                + mdp.gamma() * mdp.row(s, a).iter().map(|&(j, p)| p * v[j]).sum::<f64>();
            policy.add_scaled_score(s, a, state_probs, weight * (q - v[s]), &mut grad);
        }
    }
    Ok(grad)
}

/// `grad_theta F(lambda^{pi_theta})` via the chain rule, with the exact
/// occupancy as critic.
pub fn exact_utility_gradient(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    utility: &Utility,
) -> Result<Vec<f64>> {
    if mdp.n_pairs() > EXACT_GRADIENT_MAX_PAIRS {
        return Err(Error::Usage(format!(
            "exact gradient is limited to {EXACT_GRADIENT_MAX_PAIRS} state-action pairs, MDP has {}",
            mdp.n_pairs()
        )));
    }
    let (_, lambda) = exact_occupancy(mdp, policy)?;
    let reward = utility.pseudo_reward(&lambda)?;
    exact_return_gradient(mdp, policy, &lambda, &reward)
}

/// `F(lambda^{pi_theta})` under the exact occupancy.
pub fn exact_utility_value(mdp: &TabularMdp, policy: &SoftmaxPolicy, utility: &Utility) -> Result<f64> {
    let (_, lambda) = exact_occupancy(mdp, policy)?;
    utility.value(&lambda)
}

/// Pseudo-reward handed to the actor.
#[derive(Debug, Clone)]
pub enum PseudoReward {
    Dense { values: Vec<f64>, n_actions: usize },
    /// Evaluated per visited pair from `d_hat`, the policy and the utility.
    Lazy {
        utility: Arc<Utility>,
        d_hat: Arc<Vec<f64>>,
        policy: SoftmaxPolicy,
        evaluations: Arc<AtomicUsize>,
    },
}

impl PseudoReward {
    pub fn lookup(&self, s: usize, a: usize) -> f64 {
        match self {
            PseudoReward::Dense { values, n_actions } => values[s * n_actions + a],
            PseudoReward::Lazy {
                utility,
                d_hat,
                policy,
                evaluations,
            } => {
                evaluations.fetch_add(1, Ordering::Relaxed);
                let probs = policy.action_probs(s);
                let cells: Vec<f64> = probs.iter().map(|p| d_hat[s] * p).collect();
                let mu: f64 = cells.iter().sum();
                utility.pseudo_reward_at(s * probs.len() + a, cells[a], mu)
            }
        }
    }

    /// Builds the on-demand form from a state density estimate.
    pub fn lazy(utility: Arc<Utility>, d_hat: &OccupancyDistribution, policy: &SoftmaxPolicy) -> Self {
        PseudoReward::Lazy {
            utility,
            d_hat: Arc::new(d_hat.probs().to_vec()),
            policy: policy.clone(),
            evaluations: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Number of cells evaluated so far by the on-demand form.
    pub fn lazy_evaluations(&self) -> Option<usize> {
        match self {
            PseudoReward::Dense { .. } => None,
            PseudoReward::Lazy { evaluations, .. } => Some(evaluations.load(Ordering::Relaxed)),
        }
    }

    pub fn dense_values(&self) -> Option<&[f64]> {
        match self {
            PseudoReward::Dense { values, .. } => Some(values),
            PseudoReward::Lazy { .. } => None,
        }
    }
}

impl RewardSource for PseudoReward {
    fn reward(&self, s: usize, a: usize) -> f64 {
        self.lookup(s, a)
    }
}

/// `r_hat(s, a)`, on demand.
pub fn pseudo_reward_lookup(r_hat: &PseudoReward, s: usize, a: usize) -> f64 {
    r_hat.lookup(s, a)
}

/// Which occupancy critic feeds the pseudo-reward.
#[derive(Debug, Clone)]
pub enum CriticConfig {
    /// Fit `model` to `n_samples` geometric-horizon state samples.
    Mle {
        n_samples: usize,
        model: DensityModel,
        mle: MleConfig,
    },
    /// Count-based estimate from `batch` rollouts of the actor's horizon.
    CountBased { batch: usize },
    ExactOracle,
}

#[derive(Debug, Clone)]
pub struct PgomaConfig {
    pub iters: usize,
    pub batch: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub critic: CriticConfig,
    pub seed: RngSeed,
    /// Iterations between trace rows; 0 disables evaluation.
    pub eval_every: usize,
    /// Iterations between critic refits (1 refits every iteration).
    pub refit_every: usize,
    /// Fill `wall_ms`; off keeps traces byte-reproducible.
    pub record_wall_time: bool,
    /// Times the step size is halved after a divergence before giving up.
    pub max_alpha_halvings: usize,
}

impl PgomaConfig {
    pub fn new(iters: usize, batch: usize, horizon: usize, alpha: f64, critic: CriticConfig, seed: u64) -> Self {
        Self {
            iters,
            batch,
            horizon,
            alpha,
            critic,
            seed: RngSeed(seed),
            eval_every: 1,
            refit_every: 1,
            record_wall_time: false,
            max_alpha_halvings: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 || self.batch == 0 || self.horizon == 0 {
            return Err(Error::Config("iters, batch and horizon must be >= 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha = {} must be finite and >= 0", self.alpha)));
        }
        if self.refit_every == 0 {
            return Err(Error::Config("refit_every must be >= 1".into()));
        }
        match &self.critic {
            CriticConfig::Mle { n_samples, mle, .. } => {
                if *n_samples == 0 {
                    return Err(Error::Config("critic needs n_samples >= 1".into()));
                }
                mle.validate()
            }
            CriticConfig::CountBased { batch } if *batch == 0 => {
                Err(Error::Config("count-based critic needs batch >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub f_exact: f64,
    pub grad_norm: f64,
    pub tv_critic: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// Step size actually used, after any divergence fallbacks.
    pub alpha_used: f64,
}

pub const TRACE_HEADER: &str = "iter,F_exact,grad_norm,tv_critic,wall_ms";

impl RunTrace {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRACE_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iter, r.f_exact, r.grad_norm, r.tv_critic, r.wall_ms
            ));
        }
        out
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

/// What a critic produced for one policy.
#[derive(Debug, Clone)]
pub enum CriticEstimate {
    /// A state-action occupancy (exact or count-based).
    Pairs(OccupancyDistribution),
    /// A state density `d_hat`; the pair estimate is `d_hat * pi`.
    States(OccupancyDistribution),
}

impl CriticEstimate {
    pub fn to_pairs(&self, policy: &SoftmaxPolicy) -> Result<OccupancyDistribution> {
        match self {
            CriticEstimate::Pairs(l) => Ok(l.clone()),
            CriticEstimate::States(d) => d.with_policy(policy),
        }
    }
}

/// Everything one iteration of the driver produced.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub iter: usize,
    pub estimate: CriticEstimate,
    pub pseudo_reward: Arc<PseudoReward>,
    /// `(1/N) sum_i g(tau_i, theta_t, r_hat_t)`.
    pub gradient: Vec<f64>,
}

/// Iterative PG-OMA state. [`run_pgoma`] drives it to completion.
pub struct Pgoma<'a> {
    mdp: &'a TabularMdp,
    utility: Arc<Utility>,
    cfg: PgomaConfig,
    alpha: f64,
    policy: SoftmaxPolicy,
    iter: usize,
    density: Option<DensityModel>,
    estimate: Option<CriticEstimate>,
}

impl<'a> Pgoma<'a> {
    pub fn new(
        mdp: &'a TabularMdp,
        policy_init: SoftmaxPolicy,
        utility: Arc<Utility>,
        cfg: PgomaConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        mdp.check_policy(&policy_init)?;
        if let CriticConfig::Mle { model, .. } = &cfg.critic {
            if model.n_states() != mdp.n_states() {
                return Err(Error::Config(format!(
                    "density model is over {} states, MDP has {}",
                    model.n_states(),
                    mdp.n_states()
                )));
            }
        }
        let density = match &cfg.critic {
            CriticConfig::Mle { model, .. } => Some(model.clone()),
            _ => None,
        };
        Ok(Self {
            mdp,
            utility,
            alpha: cfg.alpha,
            cfg,
            policy: policy_init,
            iter: 0,
            density,
            estimate: None,
        })
    }

    pub fn policy(&self) -> &SoftmaxPolicy {
        &self.policy
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha;
    }

    /// Runs the configured critic on the current policy, using the critic
    /// stream of iteration `t`.
    fn fit_critic(&mut self, t: usize) -> Result<CriticEstimate> {
        let seed = self.cfg.seed.derive_path(&[t as u64, STREAM_CRITIC]);
        Ok(match &self.cfg.critic {
            CriticConfig::ExactOracle => {
                CriticEstimate::Pairs(exact_occupancy(self.mdp, &self.policy)?.1)
            }
            CriticConfig::CountBased { batch } => {
                let taus = sample_trajectories(self.mdp, &self.policy, *batch, self.cfg.horizon, seed)?;
                CriticEstimate::Pairs(count_based_estimate(
                    &taus,
                    self.mdp.gamma(),
                    self.mdp.n_states(),
                    self.mdp.n_actions(),
                )?)
            }
            CriticConfig::Mle { n_samples, mle, .. } => {
                let init = self.density.as_ref().expect("mle critic keeps a model");
                let samples =
                    crate::mdp::sample_states_geometric(self.mdp, &self.policy, *n_samples, seed)?;
                let fit = mle_fit(&samples, init, mle)?;
                let d_hat = fit.model.distribution();
                self.density = Some(fit.model);
                CriticEstimate::States(d_hat)
            }
        })
    }

    fn pseudo_reward_for(&self, estimate: &CriticEstimate) -> Result<PseudoReward> {
        let n_actions = self.mdp.n_actions();
        if let Utility::Linear { reward } = self.utility.as_ref() {
            return Ok(PseudoReward::Dense {
                values: reward.clone(),
                n_actions,
            });
        }
        match estimate {
            CriticEstimate::States(d) if self.mdp.n_pairs() > LAZY_PSEUDO_REWARD_THRESHOLD => {
                Ok(PseudoReward::lazy(self.utility.clone(), d, &self.policy))
            }
            _ => Ok(PseudoReward::Dense {
                values: self.utility.pseudo_reward(&estimate.to_pairs(&self.policy)?)?,
                n_actions,
            }),
        }
    }

    /// Current critic estimate, refitting when the cadence says so.
    fn critic(&mut self, t: usize) -> Result<CriticEstimate> {
        if t.is_multiple_of(self.cfg.refit_every) || self.estimate.is_none() {
            let est = self.fit_critic(t)?;
            self.estimate = Some(est);
        }
        Ok(self.estimate.clone().expect("just set"))
    }

    fn actor_gradient(&self, t: usize, pseudo_reward: &PseudoReward) -> Result<Vec<f64>> {
        let seed = self.cfg.seed.derive_path(&[t as u64, STREAM_ACTOR]);
        let taus = sample_trajectories(self.mdp, &self.policy, self.cfg.batch, self.cfg.horizon, seed)?;
        let gamma = self.mdp.gamma();
        let per_tau: Vec<Vec<f64>> = taus
            .par_iter()
            .map(|tau| pg_estimate(tau, &self.policy, pseudo_reward, gamma))
            .collect();
        let mut gradient = vec![0.0; self.policy.dim()];
        for g in &per_tau {
            for (acc, v) in gradient.iter_mut().zip(g) {
                *acc += v;
            }
        }
        let n = self.cfg.batch as f64;
        for v in &mut gradient {
            *v /= n;
        }
        Ok(gradient)
    }

    fn apply(&mut self, t: usize, gradient: &[f64]) -> Result<()> {
        let next = self
            .policy
            .ascent_step(gradient, self.alpha)
            .map_err(|e| Error::Divergence {
                iter: t,
                msg: e.to_string(),
            })?;
        if next.theta().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iter: t,
                msg: "policy parameters are no longer finite".into(),
            });
        }
        self.policy = next;
        self.iter += 1;
        Ok(())
    }

    /// One iteration: critic, pseudo-reward, `N` rollouts, ascent step.
    pub fn step(&mut self) -> Result<StepReport> {
        let t = self.iter;
        let estimate = self.critic(t)?;
        let pseudo_reward = Arc::new(self.pseudo_reward_for(&estimate)?);
        let gradient = self.actor_gradient(t, &pseudo_reward)?;
        self.apply(t, &gradient)?;
        Ok(StepReport {
            iter: t,
            estimate,
            pseudo_reward,
            gradient,
        })
    }

    fn evaluate(&self, t: usize, estimate: &CriticEstimate, started: Instant) -> Result<TraceRow> {
        let (_, lambda) = exact_occupancy(self.mdp, &self.policy)?;
        let f_exact = self.utility.value(&lambda)?;
        let reward = self.utility.pseudo_reward(&lambda)?;
        let grad = exact_return_gradient(self.mdp, &self.policy, &lambda, &reward)?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let tv_critic = tv_distance(&estimate.to_pairs(&self.policy)?, &lambda)?;
        let wall_ms = if self.cfg.record_wall_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        Ok(TraceRow {
            iter: t,
            f_exact,
            grad_norm,
            tv_critic,
            wall_ms,
        })
    }

    fn run_once(mut self) -> Result<(SoftmaxPolicy, RunTrace)> {
        let started = Instant::now();
        let mut trace = RunTrace {
            rows: Vec::new(),
            alpha_used: self.alpha,
        };
        let every = self.cfg.eval_every;
        for t in 0..self.cfg.iters {
            let estimate = self.critic(t)?;
            if every > 0 && t % every == 0 {
                trace.rows.push(self.evaluate(t, &estimate, started)?);
            }
            let pseudo_reward = self.pseudo_reward_for(&estimate)?;
            let gradient = self.actor_gradient(t, &pseudo_reward)?;
            self.apply(t, &gradient)?;
        }
        if every > 0 {
            let t = self.cfg.iters;
            let estimate = self.critic(t)?;
            trace.rows.push(self.evaluate(t, &estimate, started)?);
        }
        Ok((self.policy, trace))
    }
}

/// Runs PG-OMA for `cfg.iters` iterations and returns `theta_T` and the trace.
///
/// If the parameters diverge, the whole run restarts with half the step size,
/// at most `cfg.max_alpha_halvings` times.
pub fn run_pgoma(
    mdp: &TabularMdp,
    policy_init: &SoftmaxPolicy,
    utility: Arc<Utility>,
    cfg: &PgomaConfig,
) -> Result<(SoftmaxPolicy, RunTrace)> {
    let mut alpha = cfg.alpha;
    let mut last_err = None;
    for _ in 0..=cfg.max_alpha_halvings {
        let mut run = Pgoma::new(mdp, policy_init.clone(), utility.clone(), cfg.clone())?;
        run.set_alpha(alpha);
        match run.run_once() {
            Err(e @ Error::Divergence { .. }) => {
                last_err = Some(e);
                alpha *= 0.5;
            }
            other => return other,
        }
    }
    Err(last_err.expect("at least one attempt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::{random, single};
    use crate::oracle::{enumerate_trajectory_expectation, fd_gradient, max_abs_diff, truncated_return_gradient, FdSpec};
    use crate::rng::RngSeed;
    use rand::Rng;

    fn random_theta(pi: &SoftmaxPolicy, seed: u64) -> SoftmaxPolicy {
        let mut rng = RngSeed(seed).rng();
        pi.with_theta((0..pi.dim()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn random_reward(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngSeed(seed).rng();
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn utilities(mdp: &TabularMdp, seed: u64) -> Vec<Utility> {
        let r = random_reward(mdp.n_pairs(), seed);
        let expert_pi = random_theta(&SoftmaxPolicy::tabular(mdp.n_states(), mdp.n_actions()), seed + 1);
        let expert = exact_occupancy(mdp, &expert_pi).unwrap().1;
        vec![
            Utility::linear(r.clone()).unwrap(),
            Utility::Entropy,
            Utility::kl_imitation(r, 0.7, expert, crate::utility::DEFAULT_EPS_CLIP).unwrap(),
        ]
    }

    #[test]
    fn single_step_estimate_is_reward_times_score() {
        let mdp = random(1, 3, 2, 0.9);
        let pi = random_theta(&SoftmaxPolicy::tabular(3, 2), 2);
        let r = random_reward(6, 3);
        let tau = Trajectory { steps: vec![(1, 0)] };
        let g = pg_estimate(&tau, &pi, &DenseReward { values: &r, n_actions: 2 }, mdp.gamma());
        let expected: Vec<f64> = pi.score(1, 0).iter().map(|x| x * r[2]).collect();
        assert_eq!(g, expected);
    }

    #[test]
    fn zero_reward_gives_zero_estimate() {
        let pi = random_theta(&SoftmaxPolicy::tabular(3, 2), 2);
        let tau = Trajectory {
            steps: vec![(0, 1), (2, 0), (1, 1)],
        };
        let g = pg_estimate(&tau, &pi, &DenseReward { values: &[0.0; 6], n_actions: 2 }, 0.9);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn enumerated_estimate_equals_truncated_gradient() {
        let mdp = random(7, 2, 2, 0.8);
        let pi = random_theta(&SoftmaxPolicy::tabular(2, 2), 8);
        let r = random_reward(4, 9);
        let mean = enumerate_trajectory_expectation(&mdp, &pi, 3, |tau| {
            pg_estimate(tau, &pi, &DenseReward { values: &r, n_actions: 2 }, mdp.gamma())
        })
        .unwrap();
        let analytic = truncated_return_gradient(&mdp, &pi, &r, 3).unwrap();
        assert!(max_abs_diff(&mean, &analytic) < 1e-10);
    }

    #[test]
    fn linear_gradient_matches_value_differences() {
        for seed in 0..5 {
            let mdp = random(seed, 4, 3, 0.9);
            let pi = random_theta(&SoftmaxPolicy::tabular(4, 3), seed + 10);
            let u = Utility::linear(random_reward(12, seed + 20)).unwrap();
            let g = exact_utility_gradient(&mdp, &pi, &u).unwrap();
            let fd = fd_gradient(
                |th| exact_utility_value(&mdp, &pi.with_theta(th.to_vec()).unwrap(), &u).unwrap(),
                pi.theta(),
                &FdSpec::default(),
            )
            .unwrap();
            assert!(max_abs_diff(&g, &fd) < 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn chain_rule_gradient_matches_differences_for_every_utility() {
        for seed in 0..5 {
            let mdp = random(seed + 100, 5, 3, 0.85);
            let pi = random_theta(&SoftmaxPolicy::tabular(5, 3), seed + 200);
            for u in utilities(&mdp, seed + 300) {
                let g = exact_utility_gradient(&mdp, &pi, &u).unwrap();
                let fd = fd_gradient(
                    |th| exact_utility_value(&mdp, &pi.with_theta(th.to_vec()).unwrap(), &u).unwrap(),
                    pi.theta(),
                    &FdSpec::default(),
                )
                .unwrap();
                let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                assert!(max_abs_diff(&g, &fd) <= 1e-4 * scale + 1e-8, "seed {seed} {u:?}");
            }
        }
    }

    #[test]
    fn entropy_gradient_vanishes_on_one_state() {
        let mdp = single(0.9);
        let g = exact_utility_gradient(&mdp, &SoftmaxPolicy::tabular(1, 1), &Utility::Entropy).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn exact_gradient_guards_size() {
        let n = 101;
        let kernel = (0..n * n).map(|r| {
            let mut row = vec![0.0; n];
            row[r / n] = 1.0;
            row
        });
        let mut rho = vec![0.0; n];
        rho[0] = 1.0;
        let mdp = TabularMdp::new(n, n, 0.5, rho, kernel.collect()).unwrap();
        let err = exact_utility_gradient(&mdp, &SoftmaxPolicy::tabular(n, n), &Utility::Entropy);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    fn exact_cfg(iters: usize, alpha: f64) -> PgomaConfig {
        PgomaConfig::new(iters, 8, 10, alpha, CriticConfig::ExactOracle, 5)
    }

    #[test]
    fn zero_step_returns_initial_policy() {
        let mdp = random(3, 4, 2, 0.9);
        let pi = random_theta(&SoftmaxPolicy::tabular(4, 2), 4);
        let critics = [
            CriticConfig::ExactOracle,
            CriticConfig::CountBased { batch: 5 },
            CriticConfig::Mle {
                n_samples: 50,
                model: DensityModel::tabular(4, 30.0),
                mle: MleConfig::tabular_default(),
            },
        ];
        for critic in critics {
            let cfg = PgomaConfig::new(1, 4, 6, 0.0, critic, 1);
            let (out, trace) = run_pgoma(&mdp, &pi, Arc::new(Utility::Entropy), &cfg).unwrap();
            assert_eq!(out.theta(), pi.theta());
            assert_eq!(trace.rows.len(), 2);
            assert_eq!(trace.rows[0].f_exact, trace.rows[1].f_exact);
        }
    }

    #[test]
    fn linear_utility_keeps_pseudo_reward_fixed() {
        let mdp = random(5, 3, 2, 0.9);
        let r = random_reward(6, 6);
        let mut run = Pgoma::new(
            &mdp,
            SoftmaxPolicy::tabular(3, 2),
            Arc::new(Utility::linear(r.clone()).unwrap()),
            exact_cfg(5, 0.5),
        )
        .unwrap();
        for _ in 0..5 {
            let report = run.step().unwrap();
            assert_eq!(report.pseudo_reward.dense_values().unwrap(), r.as_slice());
        }
    }

    #[test]
    fn lazy_lookup_matches_dense_bitwise() {
        let mdp = random(11, 6, 3, 0.9);
        let pi = random_theta(&SoftmaxPolicy::tabular(6, 3), 12);
        let d = exact_occupancy(&mdp, &pi).unwrap().0;
        for u in utilities(&mdp, 13) {
            let u = Arc::new(u);
            let dense = u.pseudo_reward(&d.with_policy(&pi).unwrap()).unwrap();
            let lazy = PseudoReward::lazy(u.clone(), &d, &pi);
            for s in 0..6 {
                for a in 0..3 {
                    assert_eq!(lazy.lookup(s, a).to_bits(), dense[s * 3 + a].to_bits());
                }
            }
        }
    }

    #[test]
    fn linear_lookup_is_table_lookup() {
        let r = random_reward(6, 1);
        let pr = PseudoReward::Dense {
            values: r.clone(),
            n_actions: 2,
        };
        assert_eq!(pseudo_reward_lookup(&pr, 2, 1), r[5]);
    }

    #[test]
    fn large_state_space_evaluates_only_visited_cells() {
        let (n, na) = (10_000, 16);
        let rows: Vec<Vec<(usize, f64)>> = (0..n * na)
            .map(|r| {
                let (s, a) = (r / na, r % na);
                vec![((s + a + 1) % n, 0.5), ((s * 7 + a) % n, 0.5)]
            })
            .collect();
        let mut rho = vec![0.0; n];
        rho[0] = 1.0;
        let mdp = TabularMdp::from_sparse_rows(n, na, 0.95, rho, rows).unwrap();
        let mle = MleConfig {
            max_iters: 20,
            ..MleConfig::tabular_default()
        };
        let critic = CriticConfig::Mle {
            n_samples: 500,
            model: DensityModel::tabular(n, 30.0),
            mle,
        };
        let cfg = PgomaConfig {
            eval_every: 0,
            ..PgomaConfig::new(1, 20, 50, 0.1, critic, 3)
        };
        let mut run = Pgoma::new(&mdp, SoftmaxPolicy::tabular(n, na), Arc::new(Utility::Entropy), cfg).unwrap();
        let report = run.step().unwrap();
        let touched = report.pseudo_reward.lazy_evaluations().expect("lazy path");
        assert!(touched > 0 && touched <= 1000, "{touched}");
    }

    #[test]
    fn runs_are_deterministic() {
        let mdp = random(21, 5, 3, 0.9);
        let critic = CriticConfig::Mle {
            n_samples: 200,
            model: DensityModel::tabular(5, 30.0),
            mle: MleConfig::tabular_default(),
        };
        let cfg = PgomaConfig::new(6, 10, 15, 0.3, critic, 77);
        let pi = SoftmaxPolicy::tabular(5, 3);
        let a = run_pgoma(&mdp, &pi, Arc::new(Utility::Entropy), &cfg).unwrap();
        let b = run_pgoma(&mdp, &pi, Arc::new(Utility::Entropy), &cfg).unwrap();
        assert_eq!(a.0.theta(), b.0.theta());
        assert_eq!(a.1.to_csv(), b.1.to_csv());
        assert_eq!(a.1.rows.len(), 7);
        assert!(a.1.rows.windows(2).all(|w| w[0].iter < w[1].iter));
    }

    #[test]
    fn divergence_is_reported_after_fallbacks() {
        let mdp = random(2, 3, 2, 0.9);
        let u = Arc::new(Utility::linear(vec![1e300; 6]).unwrap());
        let cfg = exact_cfg(3, 1e300);
        let err = run_pgoma(&mdp, &SoftmaxPolicy::tabular(3, 2), u, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn refit_cadence_reuses_critic() {
        let mdp = random(4, 3, 2, 0.9);
        let mut cfg = PgomaConfig::new(4, 5, 8, 0.2, CriticConfig::CountBased { batch: 3 }, 9);
        cfg.refit_every = 2;
        let mut run = Pgoma::new(&mdp, SoftmaxPolicy::tabular(3, 2), Arc::new(Utility::Entropy), cfg).unwrap();
        let r0 = run.step().unwrap();
        let r1 = run.step().unwrap();
        let r2 = run.step().unwrap();
        let pairs = |r: &StepReport| match &r.estimate {
            CriticEstimate::Pairs(l) => l.probs().to_vec(),
            CriticEstimate::States(_) => unreachable!(),
        };
        assert_eq!(pairs(&r0), pairs(&r1));
        assert_ne!(pairs(&r1), pairs(&r2));
    }
}
