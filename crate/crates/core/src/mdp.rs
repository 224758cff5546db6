//! Finite discounted MDPs, rollouts, the geometric-horizon state sampler and
//! the exact occupancy oracle.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonpos::{line_of, Seg};
use crate::occupancy::OccupancyDistribution;
use crate::policy::SoftmaxPolicy;
use crate::rng::{sample_categorical, sample_sparse, RngSeed};

/// Tolerance on row sums of the kernel and of `rho`.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Maximum number of continuation steps in [`sample_state_geometric`].
pub const GEOMETRIC_STEP_CAP: usize = 1_000_000;

/// Largest state space handled by the dense occupancy solve.
pub const DENSE_SOLVE_MAX_STATES: usize = 6000;

/// A finite MDP `(S, A, P, rho, gamma)` with a sparse transition kernel.
///
/// Row `s * n_actions + a` of the kernel holds the `(s', P(s'|s,a))` pairs with
/// positive probability, sorted by `s'`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rho: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
}

fn check_distribution(what: &'static str, p: &[f64]) -> Result<()> {
    if let Some(i) = p.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(what, format!("entry {i} is {} (must be >= 0)", p[i])));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid(what, format!("sums to {sum}, expected 1")));
    }
    Ok(())
}

impl TabularMdp {
    /// Builds an MDP from a dense `|S||A| x |S|` kernel.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        rho: Vec<f64>,
        kernel: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if kernel.len() != n_states * n_actions {
            return Err(Error::invalid(
                "kernel",
                format!("expected {} rows, got {}", n_states * n_actions, kernel.len()),
            ));
        }
        let mut rows = Vec::with_capacity(kernel.len());
        for (r, row) in kernel.iter().enumerate() {
            if row.len() != n_states {
                return Err(Error::invalid(
                    "kernel",
                    format!("row {r} has {} entries, expected {n_states}", row.len()),
                ));
            }
            rows.push(
                row.iter()
                    .enumerate()
                    .filter(|(_, &p)| p != 0.0)
                    .map(|(j, &p)| (j, p))
                    .collect(),
            );
        }
        Self::from_sparse_rows(n_states, n_actions, gamma, rho, rows)
    }

    /// Builds an MDP from sparse rows; duplicate targets within a row are merged.
    pub fn from_sparse_rows(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        rho: Vec<f64>,
        rows: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("mdp", "n_states and n_actions must be positive"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid("gamma", format!("{gamma} is outside [0, 1)")));
        }
        if rho.len() != n_states {
            return Err(Error::invalid(
                "rho",
                format!("has {} entries, expected {n_states}", rho.len()),
            ));
        }
        check_distribution("rho", &rho)?;
        if rows.len() != n_states * n_actions {
            return Err(Error::invalid(
                "kernel",
                format!("expected {} rows, got {}", n_states * n_actions, rows.len()),
            ));
        }
        let mut merged = Vec::with_capacity(rows.len());
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (j, p) in row {
                if j >= n_states {
                    return Err(Error::invalid("kernel", format!("row {r} targets state {j}")));
                }
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::invalid(
                        "kernel",
                        format!("row {r} has entry {p} for state {j} (must be >= 0)"),
                    ));
                }
                match out.last_mut() {
                    Some(last) if last.0 == j => last.1 += p,
                    _ if p > 0.0 => out.push((j, p)),
                    _ => {}
                }
            }
            let sum: f64 = out.iter().map(|e| e.1).sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::invalid(
                    "kernel",
                    format!(
                        "row {r} (state {}, action {}) sums to {sum}, expected 1",
                        r / n_actions,
                        r % n_actions
                    ),
                ));
            }
            merged.push(out);
        }
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            rho,
            rows: merged,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Same dynamics with another discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid("gamma", format!("{gamma} is outside [0, 1)")));
        }
        Ok(Self {
            gamma,
            ..self.clone()
        })
    }

    /// Nonzero entries of `P(.|s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.rows[s * self.n_actions + a]
    }

    pub fn kernel_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; self.n_states];
                for &(j, p) in row {
                    dense[j] = p;
                }
                dense
            })
            .collect()
    }

    pub fn check_policy(&self, policy: &SoftmaxPolicy) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::Config(format!(
                "policy is over {}x{} but the MDP has {} states and {} actions",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    /// Dense policy-induced chain `P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a)`.
    pub fn policy_transition(&self, policy: &SoftmaxPolicy) -> Result<DMatrix<f64>> {
        self.check_policy(policy)?;
        let n = self.n_states;
        let mut m = DMatrix::zeros(n, n);
        let mut probs = vec![0.0; self.n_actions];
        for s in 0..n {
            policy.action_probs_into(s, &mut probs);
            for (a, &pa) in probs.iter().enumerate() {
                for &(j, p) in self.row(s, a) {
                    m[(s, j)] += pa * p;
                }
            }
        }
        Ok(m)
    }

    pub fn to_file(&self) -> MdpFile {
        MdpFile {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            rho: self.rho.clone(),
            kernel: self.kernel_dense(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("mdp serializes")
    }

    /// Parses and validates an MDP; failures name the source line.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<mdp>".into(),
            msg: e.to_string(),
        })?;
        if let Some(bad) = file.checks(Some(text)).into_iter().find(|c| !c.passed) {
            return Err(Error::Parse {
                path: "<mdp>".into(),
                msg: format!("{}: {}", bad.name, bad.detail),
            });
        }
        file.into_mdp()
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::Parse {
                path: path.display().to_string(),
                msg,
            },
            other => other,
        })
    }
}

/// On-disk MDP: dense kernel with rows ordered by `s * n_actions + a`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub kernel: Vec<Vec<f64>>,
}

/// Outcome of one structural check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn pass(name: &str) -> Self {
        Check {
            name: name.into(),
            passed: true,
            detail: String::new(),
        }
    }

    fn fail(name: &str, detail: String) -> Self {
        Check {
            name: name.into(),
            passed: false,
            detail,
        }
    }
}

fn at_line(text: Option<&str>, path: &[Seg]) -> String {
    text.and_then(|t| line_of(t, path))
        .map(|l| format!(" (line {l})"))
        .unwrap_or_default()
}

impl MdpFile {
    /// Runs every structural invariant. `source` enables line numbers.
    pub fn checks(&self, source: Option<&str>) -> Vec<Check> {
        let mut out = Vec::new();
        if self.n_states == 0 || self.n_actions == 0 {
            out.push(Check::fail(
                "dimensions",
                format!("n_states and n_actions must be positive{}", at_line(source, &[Seg::Key("n_states")])),
            ));
            return out;
        }
        out.push(Check::pass("dimensions"));

        if (0.0..1.0).contains(&self.gamma) {
            out.push(Check::pass("gamma"));
        } else {
            out.push(Check::fail(
                "gamma",
                format!("{} is outside [0, 1){}", self.gamma, at_line(source, &[Seg::Key("gamma")])),
            ));
        }

        let rho_check = if self.rho.len() != self.n_states {
            Check::fail(
                "rho",
                format!(
                    "rho has {} entries, expected {}{}",
                    self.rho.len(),
                    self.n_states,
                    at_line(source, &[Seg::Key("rho")])
                ),
            )
        } else if let Some(i) = self.rho.iter().position(|v| !v.is_finite() || *v < 0.0) {
            Check::fail(
                "rho",
                format!(
                    "rho[{i}] = {} is negative{}",
                    self.rho[i],
                    at_line(source, &[Seg::Key("rho"), Seg::Index(i)])
                ),
            )
        } else {
            let sum: f64 = self.rho.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                Check::fail(
                    "rho",
                    format!("rho sums to {sum}, expected 1{}", at_line(source, &[Seg::Key("rho")])),
                )
            } else {
                Check::pass("rho")
            }
        };
        out.push(rho_check);

        let expected_rows = self.n_states * self.n_actions;
        let kernel_check = if self.kernel.len() != expected_rows {
            Check::fail(
                "kernel",
                format!(
                    "kernel has {} rows, expected {expected_rows}{}",
                    self.kernel.len(),
                    at_line(source, &[Seg::Key("kernel")])
                ),
            )
        } else {
            let bad = self.kernel.iter().enumerate().find_map(|(r, row)| {
                let line = || at_line(source, &[Seg::Key("kernel"), Seg::Index(r)]);
                if row.len() != self.n_states {
                    return Some(format!(
                        "kernel row {r} has {} entries, expected {}{}",
                        row.len(),
                        self.n_states,
                        line()
                    ));
                }
                if let Some(j) = row.iter().position(|v| !v.is_finite() || *v < 0.0) {
                    return Some(format!("kernel row {r} entry {j} = {} is negative{}", row[j], line()));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Some(format!(
                        "kernel row {r} (state {}, action {}) sums to {sum}, expected 1{}",
                        r / self.n_actions,
                        r % self.n_actions,
                        line()
                    ));
                }
                None
            });
            match bad {
                Some(msg) => Check::fail("kernel", msg),
                None => Check::pass("kernel"),
            }
        };
        out.push(kernel_check);
        out
    }

    pub fn into_mdp(self) -> Result<TabularMdp> {
        TabularMdp::new(self.n_states, self.n_actions, self.gamma, self.rho, self.kernel)
    }
}

/// A length-`H` rollout `(s_0, a_0), ..., (s_{H-1}, a_{H-1})`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }
}

/// Simulates `s_0 ~ rho`, `a_t ~ pi(.|s_t)`, `s_{t+1} ~ P(.|s_t, a_t)` for `horizon` steps.
pub fn sample_trajectory<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    mdp.check_policy(policy)?;
    if horizon == 0 {
        return Err(Error::Usage("trajectory horizon must be >= 1".into()));
    }
    let mut probs = vec![0.0; mdp.n_actions];
    let mut steps = Vec::with_capacity(horizon);
    let mut s = sample_categorical(&mdp.rho, rng);
    for t in 0..horizon {
        policy.action_probs_into(s, &mut probs);
        let a = sample_categorical(&probs, rng);
        steps.push((s, a));
        if t + 1 < horizon {
            s = sample_sparse(mdp.row(s, a), rng);
        }
    }
    Ok(Trajectory { steps })
}

/// Draws one state from the normalized occupancy `d^pi` by running the chain
/// and stopping with probability `1 - gamma` before every transition.
pub fn sample_state_geometric<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    rng: &mut R,
) -> Result<usize> {
    mdp.check_policy(policy)?;
    let mut probs = vec![0.0; mdp.n_actions];
    let mut s = sample_categorical(&mdp.rho, rng);
    policy.action_probs_into(s, &mut probs);
    let mut a = sample_categorical(&probs, rng);
    for _ in 0..GEOMETRIC_STEP_CAP {
        let u: f64 = rng.random();
        if u >= mdp.gamma {
            return Ok(s);
        }
        s = sample_sparse(mdp.row(s, a), rng);
        policy.action_probs_into(s, &mut probs);
        a = sample_categorical(&probs, rng);
    }
    Err(Error::Numerical(format!(
        "geometric sampler exceeded {GEOMETRIC_STEP_CAP} steps"
    )))
}

/// Exact normalized occupancies `(d^pi, lambda^pi)` by solving the flow equation
/// `(I - gamma P_pi^T) d = (1 - gamma) rho` with a dense LU factorization.
pub fn exact_occupancy(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
) -> Result<(OccupancyDistribution, OccupancyDistribution)> {
    if mdp.n_states > DENSE_SOLVE_MAX_STATES {
        return Err(Error::Usage(format!(
            "exact occupancy is limited to {DENSE_SOLVE_MAX_STATES} states, MDP has {}",
            mdp.n_states
        )));
    }
    let p_pi = mdp.policy_transition(policy)?;
    let n = mdp.n_states;
    let mut lhs = -mdp.gamma * p_pi.transpose();
    for i in 0..n {
        lhs[(i, i)] += 1.0;
    }
    let rhs = DVector::from_iterator(n, mdp.rho.iter().map(|r| (1.0 - mdp.gamma) * r));
    let d = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Internal("flow equation is singular".into()))?;
    let d: Vec<f64> = d.iter().map(|&v| v.max(0.0)).collect();
    let probs = policy.prob_table();
    let lambda: Vec<f64> = (0..n * mdp.n_actions)
        .map(|i| d[i / mdp.n_actions] * probs[i])
        .collect();
    Ok((
        OccupancyDistribution::states_unchecked(d),
        OccupancyDistribution::pairs_unchecked(lambda, mdp.n_actions),
    ))
}

/// Trajectories per derived stream when sampling in parallel.
const ROLLOUT_CHUNK: usize = 16;

/// `n` rollouts of length `horizon`; chunk `k` uses stream `seed.derive(k)`.
///
/// Chunks run on the rayon pool and are concatenated in chunk order, so the
/// output does not depend on the number of threads.
pub fn sample_trajectories(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    n: usize,
    horizon: usize,
    seed: RngSeed,
) -> Result<Vec<Trajectory>> {
    let chunks = n.div_ceil(ROLLOUT_CHUNK);
    let parts: Result<Vec<Vec<Trajectory>>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed.derive(k as u64).rng();
            let len = ROLLOUT_CHUNK.min(n - k * ROLLOUT_CHUNK);
            (0..len)
                .map(|_| sample_trajectory(mdp, policy, horizon, &mut rng))
                .collect()
        })
        .collect();
    Ok(parts?.into_iter().flatten().collect())
}

/// States per derived stream in [`sample_states_geometric`].
const STATE_CHUNK: usize = 1024;

/// `n` i.i.d. draws from `d^pi`, chunked over derived streams like
/// [`sample_trajectories`].
pub fn sample_states_geometric(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    n: usize,
    seed: RngSeed,
) -> Result<Vec<usize>> {
    let chunks = n.div_ceil(STATE_CHUNK);
    let parts: Result<Vec<Vec<usize>>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed.derive(k as u64).rng();
            let len = STATE_CHUNK.min(n - k * STATE_CHUNK);
            (0..len)
                .map(|_| sample_state_geometric(mdp, policy, &mut rng))
                .collect()
        })
        .collect();
    Ok(parts?.into_iter().flatten().collect())
}

/// A low-rank MDP `P(s'|s,a) = <phi(s,a), mu(s')>` together with its factors.
#[derive(Debug, Clone)]
pub struct LowRankMdp {
    pub mdp: TabularMdp,
    /// `phi[s * n_actions + a]` in `R^rank`.
    pub phi: Vec<Vec<f64>>,
    /// `mu[k]` is the k-th density feature, a vector over states.
    pub mu: Vec<Vec<f64>>,
}

impl LowRankMdp {
    pub fn build(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        rho: Vec<f64>,
        phi: Vec<Vec<f64>>,
        mu: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let rank = mu.len();
        if rank == 0 || mu.iter().any(|m| m.len() != n_states) {
            return Err(Error::invalid(
                "low-rank factorization",
                format!("need >= 1 density features of length {n_states}"),
            ));
        }
        if phi.len() != n_states * n_actions || phi.iter().any(|f| f.len() != rank) {
            return Err(Error::invalid(
                "low-rank factorization",
                format!("need {} feature rows of length {rank}", n_states * n_actions),
            ));
        }
        let kernel = phi
            .iter()
            .map(|f| {
                (0..n_states)
                    .map(|sp| f.iter().zip(&mu).map(|(x, m)| x * m[sp]).sum())
                    .collect()
            })
            .collect();
        let mdp = TabularMdp::new(n_states, n_actions, gamma, rho, kernel).map_err(|e| {
            Error::invalid("low-rank factorization", e.to_string())
        })?;
        Ok(Self { mdp, phi, mu })
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// `s0 -> s1 -> s1` under every action, starting in `s0`.
    pub fn chain(n_actions: usize, gamma: f64) -> TabularMdp {
        let mut kernel = Vec::new();
        for _s in 0..2 {
            for _ in 0..n_actions {
                kernel.push(vec![0.0, 1.0]);
            }
        }
        TabularMdp::new(2, n_actions, gamma, vec![1.0, 0.0], kernel).unwrap()
    }

    pub fn single(gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, gamma, vec![1.0], vec![vec![1.0]]).unwrap()
    }

    /// Random dense MDP; every entry strictly positive.
    pub fn random(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> TabularMdp {
        let mut rng = crate::rng::RngSeed(seed).rng();
        let mut norm = |n: usize| {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = v.iter().sum();
            v.into_iter().map(|x| x / z).collect::<Vec<f64>>()
        };
        let rho = norm(n_states);
        let kernel = (0..n_states * n_actions).map(|_| norm(n_states)).collect();
        TabularMdp::new(n_states, n_actions, gamma, rho, kernel).unwrap()
    }
}
