//! General utilities `F(lambda)` over state-action occupancies and their
//! gradients `grad_lambda F`, which act as pseudo-rewards for the actor.

use crate::error::{Error, Result};
use crate::occupancy::{OccupancyDistribution, Support};

/// Floor applied to the state marginal inside the entropy pseudo-reward log.
pub const ENTROPY_LOG_FLOOR: f64 = 1e-12;

/// Default clamp inside the KL logarithms.
pub const DEFAULT_EPS_CLIP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum Utility {
    /// `<r, lambda>`.
    Linear { reward: Vec<f64> },
    /// Shannon entropy of the state marginal `mu(s) = sum_a lambda(s, a)`.
    Entropy,
    /// `<r, lambda> - c * KL(lambda || lambda_E)` with logs clamped at `eps_clip`.
    KlImitation {
        reward: Vec<f64>,
        c: f64,
        expert: OccupancyDistribution,
        eps_clip: f64,
    },
}

impl Utility {
    pub fn linear(reward: Vec<f64>) -> Result<Self> {
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("linear utility", "reward must be finite"));
        }
        Ok(Utility::Linear { reward })
    }

    pub fn kl_imitation(
        reward: Vec<f64>,
        c: f64,
        expert: OccupancyDistribution,
        eps_clip: f64,
    ) -> Result<Self> {
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("kl utility", "reward must be finite"));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("kl utility", format!("weight c = {c} must be > 0")));
        }
        if !(eps_clip > 0.0 && eps_clip <= 1e-3) {
            return Err(Error::invalid(
                "kl utility",
                format!("eps_clip = {eps_clip} must lie in (0, 1e-3]"),
            ));
        }
        if expert.n_actions().is_none() || expert.len() != reward.len() {
            return Err(Error::invalid(
                "kl utility",
                "expert occupancy must be over the same state-action pairs as the reward",
            ));
        }
        Ok(Utility::KlImitation {
            reward,
            c,
            expert,
            eps_clip,
        })
    }

    fn check(&self, lambda: &OccupancyDistribution) -> Result<usize> {
        let n_actions = match lambda.support() {
            Support::StateActions { n_actions } => n_actions,
            Support::States => {
                return Err(Error::Usage("utilities take state-action occupancies".into()))
            }
        };
        let expected = match self {
            Utility::Linear { reward } | Utility::KlImitation { reward, .. } => Some(reward.len()),
            Utility::Entropy => None,
        };
        if let Some(n) = expected {
            if n != lambda.len() {
                return Err(Error::Usage(format!(
                    "utility is over {n} pairs, occupancy over {}",
                    lambda.len()
                )));
            }
        }
        Ok(n_actions)
    }

    /// `F(lambda)`.
    pub fn value(&self, lambda: &OccupancyDistribution) -> Result<f64> {
        self.check(lambda)?;
        let l = lambda.probs();
        Ok(match self {
            Utility::Linear { reward } => dot(reward, l),
            Utility::Entropy => -lambda
                .state_marginal()
                .probs()
                .iter()
                .filter(|&&m| m > 0.0)
                .map(|&m| m * m.ln())
                .sum::<f64>(),
            Utility::KlImitation {
                reward,
                c,
                expert,
                eps_clip,
            } => {
                let kl: f64 = l
                    .iter()
                    .zip(expert.probs())
                    .map(|(&x, &e)| x * (x.max(*eps_clip) / e.max(*eps_clip)).ln())
                    .sum();
                dot(reward, l) - c * kl
            }
        })
    }

    /// `KL(lambda || lambda_E)` part of a KL utility, with the same clamping.
    pub fn kl_divergence(&self, lambda: &OccupancyDistribution) -> Option<f64> {
        match self {
            Utility::KlImitation {
                expert, eps_clip, ..
            } => Some(
                lambda
                    .probs()
                    .iter()
                    .zip(expert.probs())
                    .map(|(&x, &e)| x * (x.max(*eps_clip) / e.max(*eps_clip)).ln())
                    .sum(),
            ),
            _ => None,
        }
    }

    /// Pseudo-reward of one pair, given `lambda(s, a)` and `mu(s)`.
    ///
    /// `index` is `s * n_actions + a`. Shared by the dense and lazy paths so
    /// both agree bit for bit.
    pub fn pseudo_reward_at(&self, index: usize, lambda_sa: f64, mu_s: f64) -> f64 {
        match self {
            Utility::Linear { reward } => reward[index],
            Utility::Entropy => -(mu_s.max(ENTROPY_LOG_FLOOR).ln() + 1.0),
            Utility::KlImitation {
                reward,
                c,
                expert,
                eps_clip,
            } => {
                let e = expert.probs()[index];
                reward[index] - c * ((lambda_sa.max(*eps_clip) / e.max(*eps_clip)).ln() + 1.0)
            }
        }
    }

    /// Dense `grad_lambda F(lambda)`.
    pub fn pseudo_reward(&self, lambda: &OccupancyDistribution) -> Result<Vec<f64>> {
        let n_actions = self.check(lambda)?;
        if let Utility::Linear { reward } = self {
            return Ok(reward.clone());
        }
        let mu = lambda.state_marginal();
        Ok(lambda
            .probs()
            .iter()
            .enumerate()
            .map(|(i, &x)| self.pseudo_reward_at(i, x, mu.probs()[i / n_actions]))
            .collect())
    }

    /// True when the pseudo-reward does not depend on `lambda`.
    pub fn is_linear(&self) -> bool {
        matches!(self, Utility::Linear { .. })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{fd_gradient, FdSpec};
    use proptest::prelude::*;

    fn pairs(p: Vec<f64>, n_actions: usize) -> OccupancyDistribution {
        OccupancyDistribution::over_pairs(p, n_actions).unwrap()
    }

    #[test]
    fn linear_unit_reward_has_unit_value() {
        let u = Utility::linear(vec![1.0; 6]).unwrap();
        let l = pairs(vec![0.1, 0.2, 0.3, 0.0, 0.25, 0.15], 2);
        assert!((u.value(&l).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(u.pseudo_reward(&l).unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn entropy_uniform() {
        let l = pairs(vec![1.0 / 12.0; 12], 3);
        let v = Utility::Entropy.value(&l).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-14);
        for r in Utility::Entropy.pseudo_reward(&l).unwrap() {
            assert!((r - (4f64.ln() - 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn entropy_hand_value() {
        let l = pairs(vec![0.5, 0.25, 0.25], 1);
        let v = Utility::Entropy.value(&l).unwrap();
        assert!((v - 1.0397207708399179).abs() < 1e-12, "{v}");
    }

    #[test]
    fn entropy_zero_mass_contributes_nothing() {
        let l = pairs(vec![0.5, 0.5, 0.0, 0.0], 2);
        assert_eq!(Utility::Entropy.value(&l).unwrap(), 0.0);
        let r = Utility::Entropy.pseudo_reward(&l).unwrap();
        assert!((r[2] - (-(1e-12f64.ln()) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn kl_validation() {
        let e = pairs(vec![0.5, 0.5], 2);
        assert!(Utility::kl_imitation(vec![0.0; 2], 0.0, e.clone(), 1e-8).is_err());
        assert!(Utility::kl_imitation(vec![0.0; 2], 1.0, e.clone(), 1e-2).is_err());
        assert!(Utility::kl_imitation(vec![0.0; 3], 1.0, e.clone(), 1e-8).is_err());
        let u = Utility::kl_imitation(vec![0.0; 2], 1.0, e.clone(), 1e-8).unwrap();
        assert!(u.value(&e).unwrap().abs() < 1e-15);
        assert_eq!(u.kl_divergence(&e), Some(0.0));
    }

    fn interior(raw: &[f64]) -> Vec<f64> {
        // project to the simplex while keeping every entry >= 1e-3
        let n = raw.len() as f64;
        let z: f64 = raw.iter().sum();
        raw.iter().map(|x| 1e-3 + (1.0 - 1e-3 * n) * x / z).collect()
    }

    fn utilities(n_pairs: usize, seed: &[f64]) -> Vec<Utility> {
        let reward: Vec<f64> = (0..n_pairs).map(|i| (i as f64 * 0.37).sin()).collect();
        let expert = pairs(interior(&seed.iter().rev().copied().collect::<Vec<_>>()), 2);
        vec![
            Utility::linear(reward.clone()).unwrap(),
            Utility::Entropy,
            Utility::kl_imitation(reward, 0.7, expert, DEFAULT_EPS_CLIP).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn pseudo_reward_matches_finite_differences(raw in prop::collection::vec(0.05f64..1.0, 8)) {
            let x = interior(&raw);
            let lambda = pairs(x.clone(), 2);
            for u in utilities(8, &raw) {
                let dense = u.pseudo_reward(&lambda).unwrap();
                let f = |v: &[f64]| u.value(&OccupancyDistribution::pairs_unchecked(v.to_vec(), 2)).unwrap();
                let fd = fd_gradient(f, &x, &FdSpec { step: 1e-6, tolerance: 1e-4 }).unwrap();
                for (a, b) in dense.iter().zip(&fd) {
                    prop_assert!((a - b).abs() < 1e-4, "{:?}: {} vs {}", u, a, b);
                }
            }
        }

        #[test]
        fn concave_utilities_are_concave(
            raw1 in prop::collection::vec(0.05f64..1.0, 8),
            raw2 in prop::collection::vec(0.05f64..1.0, 8),
        ) {
            let (x, y) = (interior(&raw1), interior(&raw2));
            for u in utilities(8, &raw1).into_iter().skip(1) {
                let fx = u.value(&pairs(x.clone(), 2)).unwrap();
                let fy = u.value(&pairs(y.clone(), 2)).unwrap();
                for t in [0.25, 0.5, 0.75] {
                    let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
                    let fm = u.value(&OccupancyDistribution::pairs_unchecked(mix, 2)).unwrap();
                    prop_assert!(fm >= t * fx + (1.0 - t) * fy - 1e-9);
                }
            }
        }
    }
}
