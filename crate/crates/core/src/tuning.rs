//! Random search over leaf hyperparameters, tuned independently per leaf.

use std::collections::BTreeMap;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CategoricalTransform, Dataset, Normalization};
use crate::error::{Result, XrfmError};
use crate::kernels::{BandwidthMode, NormMode};
use crate::leaf_rfm::LeafHyperparams;
use crate::tree::{assemble, fit_prepared, prepare_leaves, tree_partition, FittedLeaf, TreeParams, XrfmModel};

/// A scalar hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(x) => write!(f, "{x}"),
            Value::Text(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum RandomRepr {
    LogUniform([f64; 2]),
    Uniform([f64; 2]),
    Choice(Vec<Value>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum DistRepr {
    Fixed(Value),
    Random(RandomRepr),
}

/// Distribution of one hyperparameter. In configuration files a bare value
/// is fixed; `{ log_uniform = [lo, hi] }`, `{ uniform = [lo, hi] }` and
/// `{ choice = [...] }` are random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistRepr", into = "DistRepr")]
pub enum ParamDistribution {
    LogUniform { lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
    Categorical { choices: Vec<Value> },
    Fixed { value: Value },
}

impl TryFrom<DistRepr> for ParamDistribution {
    type Error = String;

    fn try_from(r: DistRepr) -> std::result::Result<Self, String> {
        let d = match r {
            DistRepr::Fixed(value) => ParamDistribution::Fixed { value },
            DistRepr::Random(RandomRepr::LogUniform([lo, hi])) => ParamDistribution::LogUniform { lo, hi },
            DistRepr::Random(RandomRepr::Uniform([lo, hi])) => ParamDistribution::Uniform { lo, hi },
            DistRepr::Random(RandomRepr::Choice(choices)) => ParamDistribution::Categorical { choices },
        };
        d.validate()?;
        Ok(d)
    }
}

impl From<ParamDistribution> for DistRepr {
    fn from(d: ParamDistribution) -> Self {
        match d {
            ParamDistribution::Fixed { value } => DistRepr::Fixed(value),
            ParamDistribution::LogUniform { lo, hi } => DistRepr::Random(RandomRepr::LogUniform([lo, hi])),
            ParamDistribution::Uniform { lo, hi } => DistRepr::Random(RandomRepr::Uniform([lo, hi])),
            ParamDistribution::Categorical { choices } => DistRepr::Random(RandomRepr::Choice(choices)),
        }
    }
}

impl ParamDistribution {
    pub fn log_uniform(lo: f64, hi: f64) -> Self {
        Self::LogUniform { lo, hi }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self::Uniform { lo, hi }
    }

    pub fn fixed(value: impl Into<Value>) -> Self {
        Self::Fixed { value: value.into() }
    }

    pub fn choice<V: Into<Value>>(choices: impl IntoIterator<Item = V>) -> Self {
        Self::Categorical {
            choices: choices.into_iter().map(Into::into).collect(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match self {
            Self::LogUniform { lo, hi } if !(*lo > 0.0 && lo < hi && hi.is_finite()) => {
                Err(format!("log_uniform needs 0 < lo < hi, got [{lo}, {hi}]"))
            }
            Self::Uniform { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                Err(format!("uniform needs lo < hi, got [{lo}, {hi}]"))
            }
            Self::Categorical { choices } if choices.is_empty() => Err("choice list is empty".into()),
            _ => Ok(()),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Self::Fixed { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match self {
            Self::LogUniform { lo, hi } => Value::Number(rng.gen_range(lo.ln()..hi.ln()).exp().clamp(*lo, *hi)),
            Self::Uniform { lo, hi } => Value::Number(rng.gen_range(*lo..*hi)),
            Self::Categorical { choices } => choices[rng.gen_range(0..choices.len())].clone(),
            Self::Fixed { value } => value.clone(),
        }
    }

    /// Whether `v` can be drawn from this distribution.
    pub fn contains(&self, v: &Value) -> bool {
        match (self, v) {
            (Self::LogUniform { lo, hi } | Self::Uniform { lo, hi }, Value::Number(x)) => lo <= x && x <= hi,
            (Self::Categorical { choices }, v) => choices.contains(v),
            (Self::Fixed { value }, v) => value == v,
            _ => false,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Number(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

/// Hyperparameter names accepted in search spaces and configuration files.
pub const PARAM_NAMES: [&str; 11] = [
    "bandwidth",
    "bandwidth_mode",
    "categorical_transformations",
    "diagonal",
    "early_stop_multiplier",
    "exponent_p",
    "iterations",
    "kernel_type",
    "normalization",
    "regularization",
    "refill_size",
];

/// Named distributions; names missing from the map use library defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace {
    pub params: BTreeMap<String, ParamDistribution>,
}

/// One fully resolved draw from a search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub hyper: LeafHyperparams,
    pub categorical_transform: CategoricalTransform,
    pub normalization: Normalization,
    pub refill_size: usize,
}

impl Default for ResolvedConfig {
    fn default() -> Self {
        Self {
            hyper: LeafHyperparams::default(),
            categorical_transform: CategoricalTransform::OneHot,
            normalization: Normalization::Standard,
            refill_size: TreeParams::default().refill_size,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> XrfmError {
    XrfmError::InvalidParam {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn as_number(field: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Number(x) => Ok(*x),
        other => Err(invalid(field, format!("expected a number, got `{other}`"))),
    }
}

fn as_text<'a>(field: &str, v: &'a Value) -> Result<&'a str> {
    match v {
        Value::Text(s) => Ok(s),
        other => Err(invalid(field, format!("expected a string, got `{other}`"))),
    }
}

fn as_count(field: &str, v: &Value) -> Result<usize> {
    let x = as_number(field, v)?;
    if x >= 1.0 && x.fract() == 0.0 {
        Ok(x as usize)
    } else {
        Err(invalid(field, format!("expected a positive integer, got {x}")))
    }
}

impl ResolvedConfig {
    /// Applies a single named value.
    pub fn set(&mut self, name: &str, v: &Value) -> Result<()> {
        let h = &mut self.hyper;
        match name {
            "bandwidth" => h.kernel.bandwidth = as_number(name, v)?,
            "bandwidth_mode" => {
                h.kernel.bandwidth_mode = match as_text(name, v)? {
                    "constant" => BandwidthMode::Constant,
                    "adaptive" => BandwidthMode::Adaptive,
                    "adaptive-literal" | "adaptive_literal" => BandwidthMode::AdaptiveLiteral,
                    s => return Err(invalid(name, format!("unknown mode `{s}`"))),
                }
            }
            "categorical_transformations" => {
                self.categorical_transform = match as_text(name, v)? {
                    "one_hot" => CategoricalTransform::OneHot,
                    "ordinal" | "ordinal_encoding" => CategoricalTransform::Ordinal,
                    s => return Err(invalid(name, format!("unknown transformation `{s}`"))),
                }
            }
            "diagonal" => {
                h.diagonal = match v {
                    Value::Bool(b) => *b,
                    other => return Err(invalid(name, format!("expected true or false, got `{other}`"))),
                }
            }
            "early_stop_multiplier" => h.early_stop_multiplier = as_number(name, v)?,
            "exponent_p" => h.kernel.p = as_number(name, v)?,
            "iterations" => h.iterations = as_count(name, v)?,
            "kernel_type" => {
                h.kernel.norm = match as_text(name, v)? {
                    "product" | "kpp" | "l_p_p" => NormMode::Product,
                    "euclidean" | "kp2" | "l_p_2" => NormMode::Euclidean,
                    s => return Err(invalid(name, format!("unknown kernel type `{s}`"))),
                }
            }
            "normalization" => {
                self.normalization = match as_text(name, v)? {
                    "standard" => Normalization::Standard,
                    "none" => Normalization::None,
                    s => return Err(invalid(name, format!("unknown normalization `{s}`"))),
                }
            }
            "regularization" => h.ridge = as_number(name, v)?,
            "refill_size" => self.refill_size = as_count(name, v)?,
            other => return Err(invalid(other, "unknown hyperparameter")),
        }
        Ok(())
    }
}

impl SearchSpace {
    pub fn new(params: impl IntoIterator<Item = (&'static str, ParamDistribution)>) -> Result<Self> {
        let space = Self {
            params: params.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, dist) in &self.params {
            if !PARAM_NAMES.contains(&name.as_str()) {
                return Err(invalid(name, "unknown hyperparameter"));
            }
            dist.validate().map_err(|e| invalid(name, e))?;
            // every reachable value must be accepted
            let probe = match dist {
                ParamDistribution::Categorical { choices } => choices.clone(),
                ParamDistribution::Fixed { value } => vec![value.clone()],
                ParamDistribution::LogUniform { lo, hi } | ParamDistribution::Uniform { lo, hi } => {
                    vec![Value::Number(*lo), Value::Number(*hi)]
                }
            };
            for v in &probe {
                ResolvedConfig::default().set(name, v)?;
            }
        }
        Ok(())
    }

    /// Search space of the TALENT benchmark runs.
    pub fn talent() -> Self {
        Self::new([
            ("bandwidth", ParamDistribution::log_uniform(1.0, 200.0)),
            ("bandwidth_mode", ParamDistribution::choice(["constant"])),
            ("categorical_transformations", ParamDistribution::choice(["one_hot"])),
            ("diagonal", ParamDistribution::choice([false, true])),
            ("early_stop_multiplier", ParamDistribution::fixed(1.06)),
            ("exponent_p", ParamDistribution::uniform(0.7, 1.4)),
            ("kernel_type", ParamDistribution::choice(["product", "euclidean"])),
            ("normalization", ParamDistribution::choice(["standard"])),
            ("regularization", ParamDistribution::log_uniform(1e-6, 1.0)),
            ("refill_size", ParamDistribution::fixed(1500.0)),
        ])
        .expect("built-in space is valid")
    }

    /// Search space of the meta-test benchmark runs.
    pub fn metatest() -> Self {
        Self::new([
            ("bandwidth", ParamDistribution::log_uniform(0.4, 80.0)),
            ("bandwidth_mode", ParamDistribution::choice(["constant", "adaptive"])),
            (
                "categorical_transformations",
                ParamDistribution::choice(["ordinal_encoding", "one_hot"]),
            ),
            ("diagonal", ParamDistribution::choice([false, true])),
            ("early_stop_multiplier", ParamDistribution::fixed(1.05)),
            ("exponent_p", ParamDistribution::uniform(0.7, 1.3)),
            ("kernel_type", ParamDistribution::choice(["product", "euclidean"])),
            ("normalization", ParamDistribution::choice(["standard"])),
            ("regularization", ParamDistribution::log_uniform(1e-5, 50.0)),
            ("refill_size", ParamDistribution::fixed(1500.0)),
        ])
        .expect("built-in space is valid")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "talent" => Some(Self::talent()),
            "metatest" | "meta-test" => Some(Self::metatest()),
            _ => None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let space: SearchSpace = toml::from_str(text).map_err(|e| invalid("config", e.to_string()))?;
        space.validate()?;
        Ok(space)
    }

    /// Draws every named parameter once, in name order.
    pub fn sample_resolved<R: Rng + ?Sized>(&self, rng: &mut R) -> ResolvedConfig {
        let mut cfg = ResolvedConfig::default();
        for (name, dist) in &self.params {
            let v = dist.sample(rng);
            cfg.set(name, &v).expect("validated space");
        }
        cfg
    }

    /// The configuration of a space whose parameters are all fixed.
    pub fn resolve_fixed(&self) -> Result<ResolvedConfig> {
        if let Some((name, _)) = self.params.iter().find(|(_, d)| !d.is_fixed()) {
            return Err(invalid(name, "is a distribution; use tuning or give a single value"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.sample_resolved(&mut rng))
    }
}

/// Leaf hyperparameters drawn from `space`.
pub fn sample_config<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> LeafHyperparams {
    space.sample_resolved(rng).hyper
}

/// `trials` configurations drawn in sequence from one seeded stream, so a
/// longer draw extends a shorter one.
pub fn draw_trials(space: &SearchSpace, trials: usize, seed: u64) -> Vec<ResolvedConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials).map(|_| space.sample_resolved(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub leaf: usize,
    pub trial: usize,
    pub config: LeafHyperparams,
    /// Leaf validation score; infinite for failed fits.
    pub score: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub model: XrfmModel,
    /// Ordered by leaf, then trial.
    pub log: Vec<TrialRecord>,
    /// Trial selected for each leaf.
    pub selected: Vec<usize>,
}

/// Builds the tree once with the first configuration's kernel, then fits
/// every configuration on every leaf and keeps the best per leaf.
pub fn tune_leaves(
    train: &Dataset,
    val: &Dataset,
    configs: &[LeafHyperparams],
    tree_params: &TreeParams,
) -> Result<TuneResult> {
    let first = configs.first().ok_or_else(|| invalid("trials", "must be at least 1"))?;
    if val.x.cols() != train.x.cols() || val.y.cols() != train.y.cols() {
        return Err(XrfmError::DimensionMismatch(
            "validation columns differ from training columns".into(),
        ));
    }
    let skeleton = tree_partition(&train.x, &train.y, tree_params, &first.kernel)?;
    let prepared = prepare_leaves(&skeleton, train, val, tree_params)?;

    let per_leaf: Vec<(FittedLeaf, usize, Vec<TrialRecord>)> = prepared
        .par_iter()
        .map(|leaf| {
            let mut best: Option<(FittedLeaf, usize)> = None;
            let mut log = Vec::with_capacity(configs.len());
            let mut last_err = None;
            for (t, hyper) in configs.iter().enumerate() {
                let (score, error) = match fit_prepared(leaf, hyper, train.task, &train.spans) {
                    Ok(f) => {
                        let s = if f.val_score.is_nan() { f64::INFINITY } else { f.val_score };
                        if best.as_ref().map_or(true, |(b, _)| s < b.val_score) {
                            best = Some((f, t));
                        }
                        (s, None)
                    }
                    Err(e) => {
                        let msg = e.to_string();
                        last_err = Some(e);
                        (f64::INFINITY, Some(msg))
                    }
                };
                log.push(TrialRecord {
                    leaf: leaf.index,
                    trial: t,
                    config: *hyper,
                    score,
                    error,
                });
            }
            let (fitted, t) = best.ok_or_else(|| last_err.expect("at least one trial"))?;
            info!("leaf {}: selected trial {t} (score {})", leaf.index, fitted.val_score);
            Ok((fitted, t, log))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut fitted = Vec::with_capacity(per_leaf.len());
    let mut selected = Vec::with_capacity(per_leaf.len());
    let mut log = Vec::new();
    for (f, t, l) in per_leaf {
        fitted.push(f);
        selected.push(t);
        log.extend(l);
    }
    Ok(TuneResult {
        model: assemble(skeleton, fitted, train, tree_params),
        log,
        selected,
    })
}

/// Per-leaf random search with `trials` draws from `space`. Preprocessing
/// choices are expected to be applied to `train` and `val` already.
pub fn tune_per_leaf(
    train: &Dataset,
    val: &Dataset,
    space: &SearchSpace,
    trials: usize,
    tree_params: &TreeParams,
    seed: u64,
) -> Result<TuneResult> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    space.validate()?;
    let configs: Vec<LeafHyperparams> = draw_trials(space, trials, seed).iter().map(|c| c.hyper).collect();
    tune_leaves(train, val, &configs, tree_params)
}
