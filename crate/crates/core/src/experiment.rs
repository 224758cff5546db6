//! Experiment configs and the `run`, `estimate` and `validate` commands.
//!
//! A config is one JSON document naming an environment, a utility, an
//! initial policy, driver settings and a seed list. Relative paths inside a
//! config resolve against the config file's directory; `output_dir` resolves
//! against the working directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{build_gridworld, expert_policy, tile_features, GridSpec, Gridworld, DEFAULT_EXPERT_BETA};
use crate::error::{Error, Result};
use crate::jsonpos::{line_of, Seg};
use crate::mdp::{exact_occupancy, sample_states_geometric, sample_trajectories, Check, MdpFile, TabularMdp};
use crate::occupancy::{
    count_based_estimate, mle_fit, tv_distance, DensityModel, MleConfig, OccupancyDistribution,
};
use crate::pgoma::{run_pgoma, CriticConfig, PgomaConfig, RunTrace};
use crate::policy::SoftmaxPolicy;
use crate::rng::RngSeed;
use crate::utility::{Utility, DEFAULT_EPS_CLIP};

pub const ESTIMATE_HEADER: &str = "n,tv_mean,tv_std,seeds";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ESTIMATE_FILE: &str = "estimate.csv";

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Grid { grid: GridSpec, gamma: f64 },
    Mdp { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedReward {
    /// The environment's goal reward (gridworlds only).
    Env,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RewardSpec {
    Named(NamedReward),
    Values(Vec<f64>),
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec::Named(NamedReward::Env)
    }
}

fn default_beta() -> f64 {
    DEFAULT_EXPERT_BETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpertSpec {
    /// Softmax over `beta * Q*` for the environment reward.
    SoftenedOptimal {
        #[serde(default = "default_beta")]
        beta: f64,
    },
    /// A saved policy file.
    Policy { path: PathBuf },
}

fn default_eps_clip() -> f64 {
    DEFAULT_EPS_CLIP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilitySpec {
    Linear {
        #[serde(default)]
        reward: RewardSpec,
    },
    Entropy,
    KlImitation {
        #[serde(default)]
        reward: RewardSpec,
        c: f64,
        expert: ExpertSpec,
        #[serde(default = "default_eps_clip")]
        eps_clip: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Tabular softmax with all logits zero (the uniform policy).
    #[default]
    Tabular,
    Path { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    #[default]
    TabularSoftmax,
    /// Feature softmax with one indicator per `tile x tile` block (gridworlds only).
    TileSoftmax { tile: usize },
    /// Saved density model; its parameters are the starting point.
    Path { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CriticSpec {
    ExactOracle,
    CountBased {
        #[serde(default)]
        batch: Option<usize>,
    },
    Mle {
        #[serde(default)]
        n_samples: Option<usize>,
        #[serde(default)]
        model: ModelSpec,
        #[serde(default)]
        mle: Option<MleConfig>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgomaSpec {
    pub iters: usize,
    pub batch: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub critic: CriticSpec,
    #[serde(default = "one")]
    pub eval_every: usize,
    #[serde(default = "one")]
    pub refit_every: usize,
    #[serde(default)]
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSpec {
    pub ladder: Vec<usize>,
    pub critic: CriticSpec,
    /// Rollout length for the count-based critic.
    #[serde(default)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    pub utility: UtilitySpec,
    #[serde(default)]
    pub pgoma: Option<PgomaSpec>,
    #[serde(default)]
    pub estimate: Option<EstimateSpec>,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
}

/// A parsed config with its source text and base directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    pub source: String,
    base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str(&source, path)
    }

    /// Parses `source` as if it had been read from `path`.
    pub fn from_str(source: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let config: ExperimentConfig = serde_json::from_str(source).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self {
            config,
            path: path.to_path_buf(),
            source: source.to_string(),
            base,
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn anchored(&self, at: &[Seg], msg: impl Into<String>) -> Error {
        let msg = msg.into();
        let msg = match line_of(&self.source, at) {
            Some(l) => format!("line {l}: {msg}"),
            None => msg,
        };
        Error::Parse {
            path: self.path.display().to_string(),
            msg,
        }
    }

    /// Applies command-line overrides.
    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(dir) = &overrides.output_dir {
            self.config.output_dir = dir.clone();
        }
        if let Some(seed) = overrides.seed {
            self.config.seeds = vec![seed];
        }
    }
}

/// Command-line overrides of config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub parallel_seeds: bool,
}

/// Everything a command needs, built from a config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub mdp: TabularMdp,
    pub grid: Option<Gridworld>,
    pub utility: Arc<Utility>,
    pub policy: SoftmaxPolicy,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

fn resolve_reward(
    loaded: &LoadedConfig,
    spec: &RewardSpec,
    mdp: &TabularMdp,
    grid: Option<&Gridworld>,
) -> Result<Vec<f64>> {
    let at = [Seg::Key("utility"), Seg::Key("reward")];
    match spec {
        RewardSpec::Named(NamedReward::Zero) => Ok(vec![0.0; mdp.n_pairs()]),
        RewardSpec::Named(NamedReward::Env) => grid
            .map(|g| g.reward.clone())
            .ok_or_else(|| loaded.anchored(&at, "reward \"env\" needs a grid environment")),
        RewardSpec::Values(v) if v.len() != mdp.n_pairs() => Err(loaded.anchored(
            &at,
            format!("reward has {} entries, expected {}", v.len(), mdp.n_pairs()),
        )),
        RewardSpec::Values(v) => Ok(v.clone()),
    }
}

fn load_policy_file(path: &Path) -> Result<SoftmaxPolicy> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SoftmaxPolicy::from_json(&text)
}

impl Experiment {
    pub fn build(loaded: &LoadedConfig) -> Result<Self> {
        let cfg = &loaded.config;
        let (mdp, grid) = match &cfg.env {
            EnvSpec::Grid { grid, gamma } => {
                let g = build_gridworld(grid, *gamma)
                    .map_err(|e| loaded.anchored(&[Seg::Key("env")], e.to_string()))?;
                (g.mdp.clone(), Some(g))
            }
            EnvSpec::Mdp { path } => (TabularMdp::load(loaded.resolve(path))?, None),
        };

        let utility = match &cfg.utility {
            UtilitySpec::Linear { reward } => {
                Utility::linear(resolve_reward(loaded, reward, &mdp, grid.as_ref())?)?
            }
            UtilitySpec::Entropy => Utility::Entropy,
            UtilitySpec::KlImitation {
                reward,
                c,
                expert,
                eps_clip,
            } => {
                let r = resolve_reward(loaded, reward, &mdp, grid.as_ref())?;
                let at = [Seg::Key("utility"), Seg::Key("expert")];
                let expert_pi = match expert {
                    ExpertSpec::SoftenedOptimal { beta } => {
                        let g = grid.as_ref().ok_or_else(|| {
                            loaded.anchored(&at, "softened_optimal expert needs a grid environment")
                        })?;
                        expert_policy(&mdp, &g.reward, *beta)
                            .map_err(|e| loaded.anchored(&at, e.to_string()))?
                    }
                    ExpertSpec::Policy { path } => load_policy_file(&loaded.resolve(path))?,
                };
                mdp.check_policy(&expert_pi)
                    .map_err(|e| loaded.anchored(&at, e.to_string()))?;
                let lambda_e = exact_occupancy(&mdp, &expert_pi)?.1;
                Utility::kl_imitation(r, *c, lambda_e, *eps_clip)
                    .map_err(|e| loaded.anchored(&[Seg::Key("utility")], e.to_string()))?
            }
        };

        let policy = match &cfg.policy {
            PolicySpec::Tabular => SoftmaxPolicy::tabular(mdp.n_states(), mdp.n_actions()),
            PolicySpec::Path { path } => load_policy_file(&loaded.resolve(path))?,
        };
        mdp.check_policy(&policy)
            .map_err(|e| loaded.anchored(&[Seg::Key("policy")], e.to_string()))?;

        if cfg.seeds.is_empty() {
            return Err(loaded.anchored(&[Seg::Key("seeds")], "at least one seed is required"));
        }
        Ok(Self {
            mdp,
            grid,
            utility: Arc::new(utility),
            policy,
            seeds: cfg.seeds.clone(),
            output_dir: cfg.output_dir.clone(),
        })
    }

    /// Turns a critic spec into a driver critic; `n` fills a missing sample
    /// count or batch.
    pub fn critic(
        &self,
        loaded: &LoadedConfig,
        spec: &CriticSpec,
        at: &[Seg],
        n: Option<usize>,
    ) -> Result<CriticConfig> {
        match spec {
            CriticSpec::ExactOracle => Ok(CriticConfig::ExactOracle),
            CriticSpec::CountBased { batch } => match n.or(*batch) {
                Some(batch) => Ok(CriticConfig::CountBased { batch }),
                None => Err(loaded.anchored(at, "count_based critic needs a batch")),
            },
            CriticSpec::Mle {
                n_samples,
                model,
                mle,
            } => {
                let n_samples = n
                    .or(*n_samples)
                    .ok_or_else(|| loaded.anchored(at, "mle critic needs n_samples"))?;
                let (model, default_mle) = match model {
                    ModelSpec::TabularSoftmax => (
                        DensityModel::tabular(self.mdp.n_states(), MleConfig::tabular_default().omega_box),
                        MleConfig::tabular_default(),
                    ),
                    ModelSpec::TileSoftmax { tile } => {
                        let g = self.grid.as_ref().ok_or_else(|| {
                            loaded.anchored(at, "tile_softmax model needs a grid environment")
                        })?;
                        let f = tile_features(g, *tile).map_err(|e| loaded.anchored(at, e.to_string()))?;
                        (
                            DensityModel::feature(f, MleConfig::feature_default().omega_box),
                            MleConfig::feature_default(),
                        )
                    }
                    ModelSpec::Path { path } => {
                        let path = loaded.resolve(path);
                        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                        let m = DensityModel::from_json(&text)?;
                        let mut d = MleConfig::feature_default();
                        d.omega_box = m.omega_box();
                        (m, d)
                    }
                };
                let mle = mle.unwrap_or(default_mle);
                mle.validate().map_err(|e| loaded.anchored(at, e.to_string()))?;
                if model.n_states() != self.mdp.n_states() {
                    return Err(loaded.anchored(
                        at,
                        format!(
                            "density model covers {} states, MDP has {}",
                            model.n_states(),
                            self.mdp.n_states()
                        ),
                    ));
                }
                let model = model
                    .with_box(mle.omega_box)
                    .map_err(|e| loaded.anchored(at, e.to_string()))?;
                Ok(CriticConfig::Mle {
                    n_samples,
                    model,
                    mle,
                })
            }
        }
    }

    /// Driver settings for `seed`.
    pub fn pgoma_config(&self, loaded: &LoadedConfig, seed: u64) -> Result<PgomaConfig> {
        let at = [Seg::Key("pgoma")];
        let spec = loaded
            .config
            .pgoma
            .as_ref()
            .ok_or_else(|| loaded.anchored(&[], "the run command needs a \"pgoma\" section"))?;
        let critic = self.critic(loaded, &spec.critic, &[Seg::Key("pgoma"), Seg::Key("critic")], None)?;
        let cfg = PgomaConfig {
            eval_every: spec.eval_every,
            refit_every: spec.refit_every,
            record_wall_time: spec.record_wall_time,
            ..PgomaConfig::new(spec.iters, spec.batch, spec.horizon, spec.alpha, critic, seed)
        };
        let field = if !(spec.alpha >= 0.0 && spec.alpha.is_finite()) {
            Some("alpha")
        } else if spec.refit_every == 0 {
            Some("refit_every")
        } else {
            ["iters", "batch", "horizon"]
                .into_iter()
                .zip([spec.iters, spec.batch, spec.horizon])
                .find(|(_, v)| *v == 0)
                .map(|(k, _)| k)
        };
        cfg.validate().map_err(|e| match field {
            Some(k) => loaded.anchored(&[Seg::Key("pgoma"), Seg::Key(k)], e.to_string()),
            None => loaded.anchored(&at, e.to_string()),
        })?;
        if cfg.eval_every == 0 {
            return Err(loaded.anchored(
                &[Seg::Key("pgoma"), Seg::Key("eval_every")],
                "eval_every must be >= 1 for the run command",
            ));
        }
        Ok(cfg)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Contents of `summary.json`. Standard deviations are sample deviations
/// across seeds (0 for a single seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(rename = "final_F_mean")]
    pub final_f_mean: f64,
    #[serde(rename = "final_F_std")]
    pub final_f_std: f64,
    pub final_tv_mean: f64,
    pub seeds: Vec<u64>,
    #[serde(rename = "final_F")]
    pub final_f: Vec<f64>,
    pub alpha_used: Vec<f64>,
}

/// Result of a completed `run`.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub traces: Vec<(u64, RunTrace)>,
    pub policies: Vec<(u64, SoftmaxPolicy)>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn map_seeds<T: Send>(
    seeds: &[u64],
    parallel: bool,
    f: impl Fn(u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if parallel {
        seeds.par_iter().map(|&s| f(s)).collect()
    } else {
        seeds.iter().map(|&s| f(s)).collect()
    }
}

/// Runs PG-OMA once per seed and writes `trace_seed<k>.csv`,
/// `policy_seed<k>.json` and `summary.json` into the output directory.
pub fn cmd_run(loaded: &LoadedConfig, overrides: &Overrides) -> Result<RunOutput> {
    let mut loaded = loaded.clone();
    loaded.apply(overrides);
    let exp = Experiment::build(&loaded)?;
    let configs: Vec<PgomaConfig> = exp
        .seeds
        .iter()
        .map(|&s| exp.pgoma_config(&loaded, s))
        .collect::<Result<_>>()?;
    prepare_dir(&exp.output_dir)?;

    let results = map_seeds(&exp.seeds, overrides.parallel_seeds, |seed| {
        let cfg = configs
            .iter()
            .find(|c| c.seed == RngSeed(seed))
            .expect("one config per seed");
        let (policy, trace) = run_pgoma(&exp.mdp, &exp.policy, exp.utility.clone(), cfg)?;
        write(&exp.output_dir.join(trace_file_name(seed)), &trace.to_csv())?;
        write(
            &exp.output_dir.join(format!("policy_seed{seed}.json")),
            &policy.to_json(),
        )?;
        Ok((seed, policy, trace))
    })?;

    let tails: Vec<_> = results
        .iter()
        .map(|(_, _, t)| *t.last().expect("run traces end with a final row"))
        .collect();
    let final_f: Vec<f64> = tails.iter().map(|r| r.f_exact).collect();
    let (final_f_mean, final_f_std) = mean_std(&final_f);
    let (final_tv_mean, _) = mean_std(&tails.iter().map(|r| r.tv_critic).collect::<Vec<_>>());
    let summary = RunSummary {
        final_f_mean,
        final_f_std,
        final_tv_mean,
        seeds: exp.seeds.clone(),
        final_f,
        alpha_used: results.iter().map(|(_, _, t)| t.alpha_used).collect(),
    };
    write(
        &exp.output_dir.join(SUMMARY_FILE),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    let mut traces = Vec::new();
    let mut policies = Vec::new();
    for (seed, policy, trace) in results {
        traces.push((seed, trace));
        policies.push((seed, policy));
    }
    Ok(RunOutput {
        summary,
        traces,
        policies,
    })
}

/// One line of the estimate CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRow {
    pub n: usize,
    pub tv_mean: f64,
    pub tv_std: f64,
    pub seeds: usize,
}

pub fn estimate_csv(rows: &[EstimateRow]) -> String {
    let mut out = format!("{ESTIMATE_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.n, r.tv_mean, r.tv_std, r.seeds));
    }
    out
}

/// TV distance between one critic estimate at sample size `n` and the exact
/// pair occupancy.
pub fn critic_tv_error(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    critic: &CriticConfig,
    horizon: usize,
    exact: &OccupancyDistribution,
    seed: RngSeed,
) -> Result<f64> {
    let estimate = match critic {
        CriticConfig::ExactOracle => exact.clone(),
        CriticConfig::CountBased { batch } => {
            let taus = sample_trajectories(mdp, policy, *batch, horizon, seed)?;
            count_based_estimate(&taus, mdp.gamma(), mdp.n_states(), mdp.n_actions())?
        }
        CriticConfig::Mle {
            n_samples,
            model,
            mle,
        } => {
            let samples = sample_states_geometric(mdp, policy, *n_samples, seed)?;
            mle_fit(&samples, model, mle)?.model.distribution().with_policy(policy)?
        }
    };
    tv_distance(&estimate, exact)
}

/// Measures critic error against the exact occupancy across the sample
/// ladder and writes `estimate.csv`.
pub fn cmd_estimate(loaded: &LoadedConfig, overrides: &Overrides) -> Result<Vec<EstimateRow>> {
    let mut loaded = loaded.clone();
    loaded.apply(overrides);
    let exp = Experiment::build(&loaded)?;
    let spec = loaded
        .config
        .estimate
        .as_ref()
        .ok_or_else(|| loaded.anchored(&[], "the estimate command needs an \"estimate\" section"))?;
    let at = [Seg::Key("estimate")];
    if spec.ladder.is_empty() || spec.ladder.contains(&0) {
        return Err(loaded.anchored(
            &[Seg::Key("estimate"), Seg::Key("ladder")],
            "ladder must list positive sample sizes",
        ));
    }
    let horizon = spec
        .horizon
        .or(loaded.config.pgoma.as_ref().map(|p| p.horizon))
        .unwrap_or(1);
    if horizon == 0 {
        return Err(loaded.anchored(&at, "horizon must be >= 1"));
    }
    let exact = exact_occupancy(&exp.mdp, &exp.policy)?.1;
    let mut rows = Vec::with_capacity(spec.ladder.len());
    for &n in &spec.ladder {
        let critic = exp.critic(&loaded, &spec.critic, &[Seg::Key("estimate"), Seg::Key("critic")], Some(n))?;
        let errors = map_seeds(&exp.seeds, overrides.parallel_seeds, |seed| {
            critic_tv_error(
                &exp.mdp,
                &exp.policy,
                &critic,
                horizon,
                &exact,
                RngSeed(seed).derive(n as u64),
            )
        })?;
        let (tv_mean, tv_std) = mean_std(&errors);
        rows.push(EstimateRow {
            n,
            tv_mean,
            tv_std,
            seeds: errors.len(),
        });
    }
    prepare_dir(&exp.output_dir)?;
    write(&exp.output_dir.join(ESTIMATE_FILE), &estimate_csv(&rows))?;
    Ok(rows)
}

/// PASS/FAIL list printed by `validate`.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                if c.passed {
                    format!("PASS {}", c.name)
                } else {
                    format!("FAIL {}: {}", c.name, c.detail)
                }
            })
            .collect()
    }

    fn push(&mut self, name: &str, outcome: Result<()>) {
        self.checks.push(match outcome {
            Ok(()) => Check {
                name: name.into(),
                passed: true,
                detail: String::new(),
            },
            Err(e) => Check {
                name: name.into(),
                passed: false,
                detail: e.to_string(),
            },
        });
    }
}

/// Structural checks for an MDP file or an experiment config, chosen by
/// whether the document has a `kernel` field.
pub fn cmd_validate(path: impl AsRef<Path>) -> Result<ValidationReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut report = ValidationReport::default();
    if value.get("kernel").is_some() {
        match serde_json::from_str::<MdpFile>(&text) {
            Ok(file) => report.checks = file.checks(Some(&text)),
            Err(e) => report.push(
                "schema",
                Err(Error::Parse {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                }),
            ),
        }
        return Ok(report);
    }

    let loaded = match LoadedConfig::from_str(&text, path) {
        Ok(l) => {
            report.push("schema", Ok(()));
            l
        }
        Err(e) => {
            report.push("schema", Err(e));
            return Ok(report);
        }
    };
    if let EnvSpec::Mdp { path: p } = &loaded.config.env {
        let mdp_path = loaded.resolve(p);
        match fs::read_to_string(&mdp_path) {
            Ok(t) => match serde_json::from_str::<MdpFile>(&t) {
                Ok(file) => report.checks.extend(file.checks(Some(&t))),
                Err(e) => report.push(
                    "mdp",
                    Err(Error::Parse {
                        path: mdp_path.display().to_string(),
                        msg: e.to_string(),
                    }),
                ),
            },
            Err(e) => report.push("mdp", Err(Error::io(&mdp_path, e))),
        }
    }
    let exp = match Experiment::build(&loaded) {
        Ok(exp) => {
            report.push("experiment", Ok(()));
            exp
        }
        Err(e) => {
            report.push("experiment", Err(e));
            return Ok(report);
        }
    };
    if loaded.config.pgoma.is_some() {
        let seed = exp.seeds[0];
        report.push("pgoma", exp.pgoma_config(&loaded, seed).map(|_| ()));
    }
    if let Some(spec) = &loaded.config.estimate {
        let outcome = if spec.ladder.is_empty() || spec.ladder.contains(&0) {
            Err(loaded.anchored(
                &[Seg::Key("estimate"), Seg::Key("ladder")],
                "ladder must list positive sample sizes",
            ))
        } else {
            exp.critic(
                &loaded,
                &spec.critic,
                &[Seg::Key("estimate"), Seg::Key("critic")],
                Some(spec.ladder[0]),
            )
            .map(|_| ())
        };
        report.push("estimate", outcome);
    }
    Ok(report)
}
