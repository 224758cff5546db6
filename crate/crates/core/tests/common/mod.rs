#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;
use rlgu::rng::SimRng;
use rlgu::{RngSeed, SoftmaxPolicy, TabularMdp};

pub fn rng(seed: u64) -> SimRng {
    RngSeed(seed).rng()
}

fn random_simplex(rng: &mut SimRng, n: usize, sparse: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            if sparse && rng.random_bool(0.4) {
                0.0
            } else {
                rng.random_range(0.01..1.0)
            }
        })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        let k = rng.random_range(0..n);
        v[k] = 1.0;
    }
    let z: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= z);
    v
}

/// Random MDP; with `sparse` some kernel and start entries are exactly zero.
pub fn random_mdp(rng: &mut SimRng, n_states: usize, n_actions: usize, gamma: f64, sparse: bool) -> TabularMdp {
    let rho = random_simplex(rng, n_states, sparse);
    let kernel = (0..n_states * n_actions)
        .map(|_| random_simplex(rng, n_states, sparse))
        .collect();
    TabularMdp::new(n_states, n_actions, gamma, rho, kernel).unwrap()
}

pub fn random_policy(rng: &mut SimRng, n_states: usize, n_actions: usize, scale: f64) -> SoftmaxPolicy {
    let theta = (0..n_states * n_actions)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    SoftmaxPolicy::tabular_with_theta(n_states, n_actions, theta).unwrap()
}

pub fn random_vec(rng: &mut SimRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Directory holding the bundled configs.
pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}
