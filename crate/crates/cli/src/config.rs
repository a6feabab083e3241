//! Hyperparameter resolution: command-line flags override the config file,
//! which overrides library defaults.

use std::path::Path;

use clap::Args;
use xrfm::tuning::{ParamDistribution, ResolvedConfig, SearchSpace, Value};
use xrfm::{Result, XrfmError};

/// Leaf hyperparameter flags, named as in configuration files.
#[derive(Debug, Clone, Default, Args)]
pub struct HyperFlags {
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// constant, adaptive or adaptive-literal
    #[arg(long)]
    pub bandwidth_mode: Option<String>,
    /// one_hot or ordinal_encoding
    #[arg(long)]
    pub categorical_transformations: Option<String>,
    #[arg(long)]
    pub diagonal: Option<bool>,
    #[arg(long)]
    pub early_stop_multiplier: Option<f64>,
    #[arg(long)]
    pub exponent_p: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// product (K_{p,p}) or euclidean (K_{p,2})
    #[arg(long)]
    pub kernel_type: Option<String>,
    /// standard or none
    #[arg(long)]
    pub normalization: Option<String>,
    #[arg(long)]
    pub regularization: Option<f64>,
    #[arg(long)]
    pub refill_size: Option<usize>,
}

impl HyperFlags {
    fn values(&self) -> Vec<(&'static str, Value)> {
        let mut out = Vec::new();
        let num = |v: f64| Value::Number(v);
        let text = |v: &String| Value::Text(v.clone());
        if let Some(v) = self.bandwidth {
            out.push(("bandwidth", num(v)));
        }
        if let Some(v) = &self.bandwidth_mode {
            out.push(("bandwidth_mode", text(v)));
        }
        if let Some(v) = &self.categorical_transformations {
            out.push(("categorical_transformations", text(v)));
        }
        if let Some(v) = self.diagonal {
            out.push(("diagonal", Value::Bool(v)));
        }
        if let Some(v) = self.early_stop_multiplier {
            out.push(("early_stop_multiplier", num(v)));
        }
        if let Some(v) = self.exponent_p {
            out.push(("exponent_p", num(v)));
        }
        if let Some(v) = self.iterations {
            out.push(("iterations", num(v as f64)));
        }
        if let Some(v) = &self.kernel_type {
            out.push(("kernel_type", text(v)));
        }
        if let Some(v) = &self.normalization {
            out.push(("normalization", text(v)));
        }
        if let Some(v) = self.regularization {
            out.push(("regularization", num(v)));
        }
        if let Some(v) = self.refill_size {
            out.push(("refill_size", num(v as f64)));
        }
        out
    }
}

pub fn read_space(path: &Path) -> Result<SearchSpace> {
    let text =
        std::fs::read_to_string(path).map_err(|e| XrfmError::Io(format!("{}: {e}", path.display())))?;
    SearchSpace::from_toml_str(&text)
}

/// The fixed configuration for a fit.
pub fn resolve(config: Option<&Path>, flags: &HyperFlags) -> Result<ResolvedConfig> {
    let mut space = match config {
        Some(p) => read_space(p)?,
        None => SearchSpace::default(),
    };
    for (name, value) in flags.values() {
        space.params.insert(name.to_string(), ParamDistribution::Fixed { value });
    }
    space.validate()?;
    let cfg = space.resolve_fixed()?;
    cfg.hyper.validate()?;
    Ok(cfg)
}

/// Renders a resolved configuration as a config file that resolves back to it.
pub fn to_toml(cfg: &ResolvedConfig) -> String {
    use xrfm::data::{CategoricalTransform, Normalization};
    use xrfm::kernels::{BandwidthMode, NormMode};
    let h = &cfg.hyper;
    let mode = match h.kernel.bandwidth_mode {
        BandwidthMode::Constant => "constant",
        BandwidthMode::Adaptive => "adaptive",
        BandwidthMode::AdaptiveLiteral => "adaptive-literal",
    };
    let kernel = match h.kernel.norm {
        NormMode::Product => "product",
        NormMode::Euclidean => "euclidean",
    };
    let cat = match cfg.categorical_transform {
        CategoricalTransform::OneHot => "one_hot",
        CategoricalTransform::Ordinal => "ordinal_encoding",
    };
    let norm = match cfg.normalization {
        Normalization::Standard => "standard",
        Normalization::None => "none",
    };
    // `{:?}` keeps a decimal point so TOML reads floats back as floats
    format!(
        "bandwidth = {:?}\nbandwidth_mode = \"{mode}\"\ncategorical_transformations = \"{cat}\"\n\
         diagonal = {}\nearly_stop_multiplier = {:?}\nexponent_p = {:?}\niterations = {}\n\
         kernel_type = \"{kernel}\"\nnormalization = \"{norm}\"\nregularization = {:?}\nrefill_size = {}\n",
        h.kernel.bandwidth,
        h.diagonal,
        h.early_stop_multiplier,
        h.kernel.p,
        h.iterations,
        h.ridge,
        cfg.refill_size,
    )
}
