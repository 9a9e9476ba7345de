//! TOML configuration schema and resolution.
//!
//! Config files are flat TOML with one section per concern. Experiment runs
//! read `[experiment]` (tag, master seed, output directory) plus at most one
//! knob section matching the tag — `[convergence]`, `[sweep]`,
//! `[attribution]`, or `[selection]` — where every knob is optional and
//! defaults to the library's canonical value. The dataset utilities read
//! `[gen]` and `[train]`. Unknown sections or keys are rejected, every
//! message names the offending dotted path, and the `SGNN_SEED` environment
//! variable overrides any configured seed.

use std::path::PathBuf;

use serde::Deserialize;
use sgnn_core::attribution::AttributionConfig;
use sgnn_core::bounds::SweepConfig;
use sgnn_core::convergence::ConvergenceConfig;
use sgnn_core::datagen::{MismatchSpec, TargetSpec, TaskSpec};
use sgnn_core::modelselect::SelectionConfig;
use sgnn_core::nnet::{Activation, BandwidthMode};
use sgnn_core::params::PriorSpec;
use sgnn_core::sim::{ModelTag, ObservationSpec};

use crate::error::{CliError, Result};

/// Environment variable that overrides every configured seed.
pub const SEED_ENV: &str = "SGNN_SEED";

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

// ---------------------------------------------------------------------------
// Raw on-disk schema: everything optional, unknown keys rejected.
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<RawExperiment>,
    pub convergence: Option<RawConvergence>,
    pub sweep: Option<RawSweep>,
    pub attribution: Option<RawAttribution>,
    pub selection: Option<RawSelection>,
    pub gen: Option<RawGen>,
    pub train: Option<RawTrain>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawExperiment {
    pub tag: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConvergence {
    pub train_sizes: Option<Vec<usize>>,
    pub library_size: Option<usize>,
    pub test_size: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub process_sigma: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSweep {
    pub dim: Option<usize>,
    pub sigma: Option<f64>,
    pub a0_diag: Option<Vec<f64>>,
    pub deltas: Option<Vec<f64>>,
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAttribution {
    pub library_size: Option<usize>,
    pub train_size: Option<usize>,
    pub query_count: Option<usize>,
    pub moment_query_count: Option<usize>,
    pub lambda: Option<f64>,
    pub obs_sigma: Option<f64>,
    /// Fixed embedding-kernel bandwidth h²; omitted = median per epoch.
    pub bandwidth_h_sq: Option<f64>,
    pub subsample: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSelection {
    pub n_total: Option<usize>,
    pub train_fraction: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub multistart: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGen {
    pub model: Option<String>,
    pub target: Option<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub observed: Option<Vec<usize>>,
    pub process_sigma: Option<f64>,
    pub input_len: Option<usize>,
    pub horizon: Option<usize>,
    pub param_names: Option<Vec<String>>,
    pub param_lo: Option<Vec<f64>>,
    pub param_hi: Option<Vec<f64>>,
    pub mismatch_delta: Option<f64>,
    pub mismatch_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTrain {
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
}

/// Parse a config file's bytes. TOML syntax errors and unknown keys are
/// config errors; toml's messages already name the offending key.
pub fn parse_config(text: &str) -> Result<RawConfig> {
    toml::from_str(text).map_err(|e| cfg_err(format!("invalid config: {e}")))
}

/// Read the seed override from the environment, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| cfg_err(format!("{SEED_ENV} must be an unsigned integer, got `{raw}`"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(cfg_err(format!("cannot read {SEED_ENV}: {e}"))),
    }
}

// ---------------------------------------------------------------------------
// Experiment plans.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentTag {
    BayesConvergence,
    MismatchSweep,
    Attribution,
    ModelSelection,
}

impl ExperimentTag {
    pub fn parse(s: &str) -> Option<ExperimentTag> {
        match s {
            "bayes_convergence" => Some(ExperimentTag::BayesConvergence),
            "mismatch_sweep" => Some(ExperimentTag::MismatchSweep),
            "attribution" => Some(ExperimentTag::Attribution),
            "model_selection" => Some(ExperimentTag::ModelSelection),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentTag::BayesConvergence => "bayes_convergence",
            ExperimentTag::MismatchSweep => "mismatch_sweep",
            ExperimentTag::Attribution => "attribution",
            ExperimentTag::ModelSelection => "model_selection",
        }
    }

    /// The knob section this tag reads.
    fn section(&self) -> &'static str {
        match self {
            ExperimentTag::BayesConvergence => "convergence",
            ExperimentTag::MismatchSweep => "sweep",
            ExperimentTag::Attribution => "attribution",
            ExperimentTag::ModelSelection => "selection",
        }
    }
}

/// Fully resolved experiment run: tag, validated module config, output
/// directory, and the master seed that produced the per-stage seeds.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub tag: ExperimentTag,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub knobs: ExperimentKnobs,
}

#[derive(Debug, Clone)]
pub enum ExperimentKnobs {
    Convergence(ConvergenceConfig),
    Sweep(SweepConfig),
    Attribution(AttributionConfig),
    Selection(SelectionConfig),
}

/// Resolve an experiment plan from a parsed config.
///
/// `implied` carries the tag fixed by a dedicated subcommand (`attribute`,
/// `sweep`, `select`); for `run` it is `None` and `experiment.tag` is
/// required. `seed_override` is the `SGNN_SEED` value, if set.
pub fn resolve_experiment(
    raw: &RawConfig,
    implied: Option<ExperimentTag>,
    seed_override: Option<u64>,
) -> Result<ExperimentPlan> {
    let exp = raw.experiment.as_ref();
    let tag = match (exp.and_then(|e| e.tag.as_deref()), implied) {
        (Some(s), _) => {
            let tag = ExperimentTag::parse(s).ok_or_else(|| {
                cfg_err(format!(
                    "invalid field `experiment.tag`: unknown experiment `{s}` \
                     (expected bayes_convergence, mismatch_sweep, attribution, \
                     or model_selection)"
                ))
            })?;
            if let Some(want) = implied {
                if tag != want {
                    return Err(cfg_err(format!(
                        "invalid field `experiment.tag`: config says `{s}` but this \
                         subcommand runs `{}`",
                        want.as_str()
                    )));
                }
            }
            tag
        }
        (None, Some(want)) => want,
        (None, None) => return Err(cfg_err("missing field `experiment.tag`")),
    };

    let seed = seed_override.or(exp.and_then(|e| e.seed)).unwrap_or(0);
    let out_dir = exp
        .and_then(|e| e.out_dir.clone())
        .ok_or_else(|| cfg_err("missing field `experiment.out_dir`"))?;

    // A knob section that belongs to a different experiment is a config
    // mistake, not something to silently ignore.
    let sections: [(&str, bool); 4] = [
        ("convergence", raw.convergence.is_some()),
        ("sweep", raw.sweep.is_some()),
        ("attribution", raw.attribution.is_some()),
        ("selection", raw.selection.is_some()),
    ];
    for (name, present) in sections {
        if present && name != tag.section() {
            return Err(cfg_err(format!(
                "section [{name}] does not apply to experiment `{}`",
                tag.as_str()
            )));
        }
    }

    let knobs = match tag {
        ExperimentTag::BayesConvergence => {
            ExperimentKnobs::Convergence(resolve_convergence(raw.convergence.as_ref(), seed)?)
        }
        ExperimentTag::MismatchSweep => {
            ExperimentKnobs::Sweep(resolve_sweep(raw.sweep.as_ref(), seed)?)
        }
        ExperimentTag::Attribution => {
            ExperimentKnobs::Attribution(resolve_attribution(raw.attribution.as_ref(), seed)?)
        }
        ExperimentTag::ModelSelection => {
            ExperimentKnobs::Selection(resolve_selection(raw.selection.as_ref(), seed)?)
        }
    };

    Ok(ExperimentPlan { tag, seed, out_dir, knobs })
}

/// Default seed list for multi-seed experiments: three consecutive seeds
/// starting at the master seed.
fn default_seeds(master: u64) -> Vec<u64> {
    vec![master, master.wrapping_add(1), master.wrapping_add(2)]
}

fn resolve_convergence(raw: Option<&RawConvergence>, seed: u64) -> Result<ConvergenceConfig> {
    let mut cfg = ConvergenceConfig { seeds: default_seeds(seed), ..ConvergenceConfig::default() };
    if let Some(raw) = raw {
        set(&mut cfg.train_sizes, &raw.train_sizes);
        set(&mut cfg.library_size, &raw.library_size);
        set(&mut cfg.test_size, &raw.test_size);
        set(&mut cfg.seeds, &raw.seeds);
        set(&mut cfg.process_sigma, &raw.process_sigma);
        set(&mut cfg.epochs, &raw.epochs);
        set(&mut cfg.batch_size, &raw.batch_size);
        set(&mut cfg.learning_rate, &raw.learning_rate);
        set(&mut cfg.hidden, &raw.hidden);
    }
    cfg.validate().map_err(|e| cfg_err(format!("invalid section [convergence]: {e}")))?;
    Ok(cfg)
}

fn resolve_sweep(raw: Option<&RawSweep>, seed: u64) -> Result<SweepConfig> {
    let mut cfg = SweepConfig { seeds: default_seeds(seed), ..SweepConfig::default() };
    if let Some(raw) = raw {
        set(&mut cfg.dim, &raw.dim);
        set(&mut cfg.sigma, &raw.sigma);
        set(&mut cfg.a0_diag, &raw.a0_diag);
        set(&mut cfg.deltas, &raw.deltas);
        set(&mut cfg.train_size, &raw.train_size);
        set(&mut cfg.test_size, &raw.test_size);
        set(&mut cfg.seeds, &raw.seeds);
        set(&mut cfg.epochs, &raw.epochs);
        set(&mut cfg.batch_size, &raw.batch_size);
        set(&mut cfg.learning_rate, &raw.learning_rate);
        set(&mut cfg.hidden, &raw.hidden);
        // Default a0_diag matches the default dim; a custom dim needs both.
        if raw.dim.is_some() && raw.a0_diag.is_none() {
            cfg.a0_diag = vec![0.9; cfg.dim];
        }
    }
    cfg.validate().map_err(|e| cfg_err(format!("invalid section [sweep]: {e}")))?;
    Ok(cfg)
}

fn resolve_attribution(raw: Option<&RawAttribution>, seed: u64) -> Result<AttributionConfig> {
    let mut cfg = AttributionConfig { seed, ..AttributionConfig::default() };
    if let Some(raw) = raw {
        set(&mut cfg.library_size, &raw.library_size);
        set(&mut cfg.train_size, &raw.train_size);
        set(&mut cfg.query_count, &raw.query_count);
        set(&mut cfg.moment_query_count, &raw.moment_query_count);
        set(&mut cfg.lambda, &raw.lambda);
        if raw.obs_sigma.is_some() {
            cfg.obs_sigma = raw.obs_sigma;
        }
        if let Some(h_sq) = raw.bandwidth_h_sq {
            cfg.bandwidth = BandwidthMode::Fixed(h_sq);
        }
        set(&mut cfg.subsample, &raw.subsample);
        set(&mut cfg.epochs, &raw.epochs);
        set(&mut cfg.batch_size, &raw.batch_size);
        set(&mut cfg.learning_rate, &raw.learning_rate);
        set(&mut cfg.hidden, &raw.hidden);
    }
    cfg.validate().map_err(|e| cfg_err(format!("invalid section [attribution]: {e}")))?;
    Ok(cfg)
}

fn resolve_selection(raw: Option<&RawSelection>, seed: u64) -> Result<SelectionConfig> {
    let mut cfg = SelectionConfig { seed, ..SelectionConfig::default() };
    if let Some(raw) = raw {
        set(&mut cfg.n_total, &raw.n_total);
        set(&mut cfg.train_fraction, &raw.train_fraction);
        set(&mut cfg.epochs, &raw.epochs);
        set(&mut cfg.batch_size, &raw.batch_size);
        set(&mut cfg.learning_rate, &raw.learning_rate);
        set(&mut cfg.hidden, &raw.hidden);
        set(&mut cfg.multistart, &raw.multistart);
    }
    cfg.validate().map_err(|e| cfg_err(format!("invalid section [selection]: {e}")))?;
    Ok(cfg)
}

fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
    if let Some(v) = src {
        *dst = v.clone();
    }
}

// ---------------------------------------------------------------------------
// Dataset generation plan.
// ---------------------------------------------------------------------------

/// Resolved `[gen]` section: a validated task plus the sample count and seed.
#[derive(Debug, Clone)]
pub struct GenPlan {
    pub task: TaskSpec,
    pub n: usize,
    pub seed: u64,
}

pub fn resolve_gen(raw: &RawConfig, seed_override: Option<u64>) -> Result<GenPlan> {
    let gen = raw
        .gen
        .as_ref()
        .ok_or_else(|| cfg_err("missing field `gen.n` (config has no [gen] section)"))?;
    let n = gen.n.ok_or_else(|| cfg_err("missing field `gen.n`"))?;
    let seed = seed_override.or(gen.seed).unwrap_or(0);

    let model = match gen.model.as_deref().unwrap_or("sir") {
        "lds" => ModelTag::Lds,
        "sir" => ModelTag::Sir,
        "seir" => ModelTag::Seir,
        other => {
            return Err(cfg_err(format!(
                "invalid field `gen.model`: unknown model `{other}` (expected lds, sir, or seir)"
            )))
        }
    };

    let target = match gen.target.as_deref().unwrap_or("params") {
        "params" => TargetSpec::Params,
        "forecast" => {
            let input_len =
                gen.input_len.ok_or_else(|| cfg_err("missing field `gen.input_len`"))?;
            let horizon = gen.horizon.ok_or_else(|| cfg_err("missing field `gen.horizon`"))?;
            TargetSpec::Forecast { input_len, horizon }
        }
        "model_class" => TargetSpec::ModelClass,
        other => {
            return Err(cfg_err(format!(
                "invalid field `gen.target`: unknown target `{other}` \
                 (expected params, forecast, or model_class)"
            )))
        }
    };

    let model_class = matches!(target, TargetSpec::ModelClass);
    let steps = gen.steps.unwrap_or(match model {
        ModelTag::Lds => 10,
        ModelTag::Sir | ModelTag::Seir => 100,
    });
    let noise_sigma = gen.noise_sigma.unwrap_or(match model {
        ModelTag::Lds => 0.0,
        ModelTag::Sir | ModelTag::Seir => 0.01,
    });
    let observed = gen.observed.clone().unwrap_or_else(|| {
        if model_class {
            vec![1]
        } else {
            match model {
                ModelTag::Lds => vec![0, 1],
                ModelTag::Sir => vec![1],
                ModelTag::Seir => vec![2],
            }
        }
    });
    let process_sigma = gen.process_sigma.unwrap_or(match model {
        ModelTag::Lds => 0.1,
        ModelTag::Sir | ModelTag::Seir => 0.0,
    });

    let prior = resolve_prior(gen, model, model_class)?;
    let obs = ObservationSpec::new(noise_sigma, observed)
        .map_err(|e| cfg_err(format!("invalid section [gen]: {e}")))?;

    let mismatch = match (gen.mismatch_delta, gen.mismatch_seed) {
        (None, None) => None,
        (Some(delta), perturb) => {
            Some(MismatchSpec { delta, perturb_seed: perturb.unwrap_or(seed) })
        }
        (None, Some(_)) => {
            return Err(cfg_err("missing field `gen.mismatch_delta` (mismatch_seed is set)"))
        }
    };

    let task =
        TaskSpec { model, steps, obs, process_sigma, init: None, prior, target, mismatch };
    task.validate().map_err(|e| cfg_err(format!("invalid section [gen]: {e}")))?;
    Ok(GenPlan { task, n, seed })
}

/// Prior box: canonical per-model ranges unless `param_names`/`param_lo`/
/// `param_hi` override them (all three together, same length).
fn resolve_prior(gen: &RawGen, model: ModelTag, model_class: bool) -> Result<PriorSpec> {
    let overrides = [gen.param_names.is_some(), gen.param_lo.is_some(), gen.param_hi.is_some()];
    if overrides.iter().any(|&p| p) && !overrides.iter().all(|&p| p) {
        return Err(cfg_err(
            "fields `gen.param_names`, `gen.param_lo`, `gen.param_hi` must be given together",
        ));
    }
    let dims: Vec<(String, f64, f64)> = if let (Some(names), Some(lo), Some(hi)) =
        (&gen.param_names, &gen.param_lo, &gen.param_hi)
    {
        if names.len() != lo.len() || names.len() != hi.len() {
            return Err(cfg_err(format!(
                "fields `gen.param_names`/`gen.param_lo`/`gen.param_hi` must have equal \
                 lengths, got {}/{}/{}",
                names.len(),
                lo.len(),
                hi.len()
            )));
        }
        names.iter().cloned().zip(lo.iter().zip(hi)).map(|(n, (&l, &h))| (n, l, h)).collect()
    } else if model_class {
        // Three-parameter box shared by both compartmental families.
        vec![
            ("beta".into(), 0.1, 0.5),
            ("gamma".into(), 0.05, 0.2),
            ("sigma_e".into(), 0.1, 0.3),
        ]
    } else {
        match model {
            ModelTag::Lds => vec![("alpha".into(), 0.5, 1.5), ("beta".into(), 0.5, 1.5)],
            ModelTag::Sir => vec![("beta".into(), 0.1, 0.5), ("gamma".into(), 0.05, 0.2)],
            ModelTag::Seir => vec![
                ("beta".into(), 0.1, 0.5),
                ("gamma".into(), 0.05, 0.2),
                ("sigma_e".into(), 0.1, 0.3),
            ],
        }
    };
    PriorSpec::new(dims).map_err(|e| cfg_err(format!("invalid section [gen]: {e}")))
}

// ---------------------------------------------------------------------------
// Training plan.
// ---------------------------------------------------------------------------

/// Resolved `[train]` section. Loss and output head are not configured here:
/// they follow the dataset's target kind (class labels → softmax +
/// cross-entropy, vectors → linear + squared error).
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

pub fn resolve_train(raw: &RawConfig, seed_override: Option<u64>) -> Result<TrainPlan> {
    let train = raw.train.as_ref();
    let activation = match train.and_then(|t| t.activation.as_deref()).unwrap_or("gelu") {
        "relu" => Activation::Relu,
        "gelu" => Activation::Gelu,
        "tanh" => Activation::Tanh,
        other => {
            return Err(cfg_err(format!(
                "invalid field `train.activation`: unknown activation `{other}` \
                 (expected relu, gelu, or tanh)"
            )))
        }
    };
    let plan = TrainPlan {
        hidden: train.and_then(|t| t.hidden.clone()).unwrap_or_else(|| vec![64, 64]),
        activation,
        epochs: train.and_then(|t| t.epochs).unwrap_or(10),
        batch_size: train.and_then(|t| t.batch_size).unwrap_or(64),
        learning_rate: train.and_then(|t| t.learning_rate).unwrap_or(1e-3),
        seed: seed_override.or(train.and_then(|t| t.seed)).unwrap_or(0),
    };
    if plan.hidden.is_empty() {
        return Err(cfg_err("invalid field `train.hidden`: need at least one hidden layer"));
    }
    if plan.epochs == 0 {
        return Err(cfg_err("invalid field `train.epochs`: must be ≥ 1"));
    }
    if plan.batch_size == 0 {
        return Err(cfg_err("invalid field `train.batch_size`: must be ≥ 1"));
    }
    if !(plan.learning_rate > 0.0) || !plan.learning_rate.is_finite() {
        return Err(cfg_err(format!(
            "invalid field `train.learning_rate`: must be finite and > 0, got {}",
            plan.learning_rate
        )));
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_reports_the_missing_tag_field() {
        let raw = parse_config("").unwrap();
        let err = resolve_experiment(&raw, None, None).unwrap_err();
        assert!(err.to_string().contains("missing field `experiment.tag`"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = parse_config("[experiment]\ntagg = \"x\"\n").unwrap_err();
        assert!(err.to_string().contains("tagg"), "{err}");
    }

    #[test]
    fn unknown_tag_is_rejected_by_name() {
        let raw =
            parse_config("[experiment]\ntag = \"nope\"\nout_dir = \"o\"\n").unwrap();
        let err = resolve_experiment(&raw, None, None).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn missing_out_dir_is_named() {
        let raw = parse_config("[experiment]\ntag = \"mismatch_sweep\"\n").unwrap();
        let err = resolve_experiment(&raw, None, None).unwrap_err();
        assert!(err.to_string().contains("experiment.out_dir"), "{err}");
    }

    #[test]
    fn defaults_fill_in_and_master_seed_spreads_to_seed_lists() {
        let raw = parse_config(
            "[experiment]\ntag = \"bayes_convergence\"\nseed = 7\nout_dir = \"o\"\n",
        )
        .unwrap();
        let plan = resolve_experiment(&raw, None, None).unwrap();
        assert_eq!(plan.seed, 7);
        match plan.knobs {
            ExperimentKnobs::Convergence(cfg) => {
                assert_eq!(cfg.seeds, vec![7, 8, 9]);
                assert_eq!(cfg.train_sizes, ConvergenceConfig::default().train_sizes);
            }
            other => panic!("wrong knobs: {other:?}"),
        }
    }

    #[test]
    fn env_override_beats_the_config_seed() {
        let raw = parse_config(
            "[experiment]\ntag = \"bayes_convergence\"\nseed = 7\nout_dir = \"o\"\n",
        )
        .unwrap();
        let plan = resolve_experiment(&raw, None, Some(42)).unwrap();
        assert_eq!(plan.seed, 42);
        match plan.knobs {
            ExperimentKnobs::Convergence(cfg) => assert_eq!(cfg.seeds, vec![42, 43, 44]),
            other => panic!("wrong knobs: {other:?}"),
        }
    }

    #[test]
    fn explicit_seed_list_wins_over_the_master_seed() {
        let raw = parse_config(
            "[experiment]\ntag = \"bayes_convergence\"\nseed = 7\nout_dir = \"o\"\n\
             [convergence]\nseeds = [3]\n",
        )
        .unwrap();
        let plan = resolve_experiment(&raw, None, None).unwrap();
        match plan.knobs {
            ExperimentKnobs::Convergence(cfg) => assert_eq!(cfg.seeds, vec![3]),
            other => panic!("wrong knobs: {other:?}"),
        }
    }

    #[test]
    fn implied_tag_fills_in_and_conflicts_are_rejected() {
        let raw = parse_config("[experiment]\nout_dir = \"o\"\n").unwrap();
        let plan =
            resolve_experiment(&raw, Some(ExperimentTag::MismatchSweep), None).unwrap();
        assert_eq!(plan.tag, ExperimentTag::MismatchSweep);

        let raw =
            parse_config("[experiment]\ntag = \"attribution\"\nout_dir = \"o\"\n").unwrap();
        let err =
            resolve_experiment(&raw, Some(ExperimentTag::MismatchSweep), None).unwrap_err();
        assert!(err.to_string().contains("mismatch_sweep"), "{err}");
    }

    #[test]
    fn knob_section_for_a_different_experiment_is_rejected() {
        let raw = parse_config(
            "[experiment]\ntag = \"attribution\"\nout_dir = \"o\"\n[sweep]\ndim = 3\n",
        )
        .unwrap();
        let err = resolve_experiment(&raw, None, None).unwrap_err();
        assert!(err.to_string().contains("[sweep]"), "{err}");
    }

    #[test]
    fn invalid_knob_values_surface_as_config_errors() {
        let raw = parse_config(
            "[experiment]\ntag = \"model_selection\"\nout_dir = \"o\"\n\
             [selection]\nn_total = 3\n",
        )
        .unwrap();
        let err = resolve_experiment(&raw, None, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("[selection]"), "{err}");
    }

    #[test]
    fn custom_sweep_dim_defaults_a_matching_a0_diagonal() {
        let raw = parse_config(
            "[experiment]\ntag = \"mismatch_sweep\"\nout_dir = \"o\"\n[sweep]\ndim = 4\n",
        )
        .unwrap();
        let plan = resolve_experiment(&raw, None, None).unwrap();
        match plan.knobs {
            ExperimentKnobs::Sweep(cfg) => assert_eq!(cfg.a0_diag, vec![0.9; 4]),
            other => panic!("wrong knobs: {other:?}"),
        }
    }

    #[test]
    fn gen_defaults_depend_on_the_model() {
        let raw = parse_config("[gen]\nn = 10\n").unwrap();
        let plan = resolve_gen(&raw, None).unwrap();
        assert_eq!(plan.task.model, ModelTag::Sir);
        assert_eq!(plan.task.steps, 100);
        assert_eq!(plan.task.prior.names(), &["beta", "gamma"]);

        let raw = parse_config("[gen]\nmodel = \"lds\"\nn = 10\n").unwrap();
        let plan = resolve_gen(&raw, None).unwrap();
        assert_eq!(plan.task.steps, 10);
        assert_eq!(plan.task.prior.names(), &["alpha", "beta"]);
    }

    #[test]
    fn gen_without_a_section_names_a_required_field() {
        let raw = parse_config("").unwrap();
        let err = resolve_gen(&raw, None).unwrap_err();
        assert!(err.to_string().contains("gen.n"), "{err}");
    }

    #[test]
    fn forecast_target_requires_window_fields() {
        let raw = parse_config("[gen]\ntarget = \"forecast\"\nn = 10\n").unwrap();
        let err = resolve_gen(&raw, None).unwrap_err();
        assert!(err.to_string().contains("gen.input_len"), "{err}");
    }

    #[test]
    fn prior_override_arrays_must_come_together_with_equal_lengths() {
        let raw = parse_config("[gen]\nn = 5\nparam_lo = [0.1]\n").unwrap();
        let err = resolve_gen(&raw, None).unwrap_err();
        assert!(err.to_string().contains("param_names"), "{err}");

        let raw = parse_config(
            "[gen]\nn = 5\nparam_names = [\"beta\", \"gamma\"]\nparam_lo = [0.1]\n\
             param_hi = [0.5, 0.2]\n",
        )
        .unwrap();
        assert!(resolve_gen(&raw, None).is_err());

        let raw = parse_config(
            "[gen]\nn = 5\nparam_names = [\"beta\", \"gamma\"]\nparam_lo = [0.2, 0.1]\n\
             param_hi = [0.4, 0.15]\n",
        )
        .unwrap();
        let plan = resolve_gen(&raw, None).unwrap();
        assert_eq!(plan.task.prior.bounds(), &[(0.2, 0.4), (0.1, 0.15)]);
    }

    #[test]
    fn gen_seed_prefers_env_then_config_then_zero() {
        let raw = parse_config("[gen]\nn = 5\nseed = 9\n").unwrap();
        assert_eq!(resolve_gen(&raw, None).unwrap().seed, 9);
        assert_eq!(resolve_gen(&raw, Some(4)).unwrap().seed, 4);
        let raw = parse_config("[gen]\nn = 5\n").unwrap();
        assert_eq!(resolve_gen(&raw, None).unwrap().seed, 0);
    }

    #[test]
    fn train_defaults_and_activation_parsing() {
        let raw = parse_config("").unwrap();
        let plan = resolve_train(&raw, None).unwrap();
        assert_eq!(plan.hidden, vec![64, 64]);
        assert_eq!(plan.activation, Activation::Gelu);
        assert_eq!(plan.epochs, 10);

        let raw = parse_config("[train]\nactivation = \"banana\"\n").unwrap();
        let err = resolve_train(&raw, None).unwrap_err();
        assert!(err.to_string().contains("train.activation"), "{err}");
    }
}
