//! Declarative experiment configuration read from a TOML file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fpnet::contraction::PairBudget;
use fpnet::fixpoint::{GridSpec, IterationPolicy, DEFAULT_CLUSTER_RADIUS};
use fpnet::init::{layer_scales, DistributionSpec, ScaleRule, Seed};
use fpnet::net::ActivationKind;
use fpnet::sweep::{depth_widths, DEFAULT_DEPTHS};
use fpnet::train::{CenterLayout, OptimizerConfig};
use fpnet::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Basins,
    SweepDepth,
    BetaSweep,
    DepthCurve,
    TrainVerify,
    VarianceCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Basins => "basins",
            Command::SweepDepth => "sweep-depth",
            Command::BetaSweep => "beta-sweep",
            Command::DepthCurve => "depth-curve",
            Command::TrainVerify => "train-verify",
            Command::VarianceCheck => "variance-check",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown command `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub iteration: IterationSection,
    #[serde(default)]
    pub basins: BasinsSection,
    #[serde(default)]
    pub sweep_depth: SweepSection,
    #[serde(default)]
    pub beta_sweep: BetaSection,
    #[serde(default)]
    pub depth_curve: DepthSection,
    #[serde(default)]
    pub train_verify: TrainSection,
    #[serde(default)]
    pub variance_check: VarianceSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationSection {
    pub epsilon: f64,
    pub max_iters: usize,
    pub cluster_radius: f64,
}

impl Default for IterationSection {
    fn default() -> Self {
        let p = IterationPolicy::default();
        IterationSection {
            epsilon: p.epsilon,
            max_iters: p.max_iters,
            cluster_radius: DEFAULT_CLUSTER_RADIUS,
        }
    }
}

impl IterationSection {
    pub fn policy(&self) -> IterationPolicy {
        IterationPolicy {
            epsilon: self.epsilon,
            max_iters: self.max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasinsSection {
    pub widths: Vec<usize>,
    pub activation: ActivationKind,
    pub init: DistributionSpec,
    /// The network seed is the `seed_index`-th seed derived from `master_seed`.
    pub seed_index: u64,
}

impl Default for BasinsSection {
    fn default() -> Self {
        BasinsSection {
            widths: vec![2, 100, 2],
            activation: ActivationKind::Tanh,
            init: DistributionSpec::cauchy(ScaleRule::PerLayerInverseWidth),
            seed_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub width_n0: usize,
    pub depths: Vec<usize>,
    pub activation: ActivationKind,
    pub init: DistributionSpec,
    pub n_seeds: usize,
    /// Store per-start basin labels of every seed in the archive.
    pub archive_basins: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            width_n0: 100,
            depths: DEFAULT_DEPTHS.to_vec(),
            activation: ActivationKind::Tanh,
            init: DistributionSpec::cauchy(ScaleRule::PerLayerInverseWidth),
            n_seeds: 50,
            archive_basins: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaSection {
    pub width_n: usize,
    pub activation: ActivationKind,
    pub beta_start: f64,
    pub beta_stop: f64,
    pub beta_step: f64,
    pub n_seeds: usize,
    pub pairs: PairBudget,
    pub zero_bias: bool,
}

impl Default for BetaSection {
    fn default() -> Self {
        BetaSection {
            width_n: 400,
            activation: ActivationKind::Tanh,
            beta_start: 0.1,
            beta_stop: 1.0,
            beta_step: 0.05,
            n_seeds: 20,
            pairs: PairBudget::All,
            zero_bias: false,
        }
    }
}

impl BetaSection {
    /// `start + i·step` up to `stop` inclusive (within a 1e-9 step tolerance).
    pub fn betas(&self) -> Vec<f64> {
        if !(self.beta_step > 0.0) || !(self.beta_stop >= self.beta_start) {
            return Vec::new();
        }
        let n = ((self.beta_stop - self.beta_start) / self.beta_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.beta_start + i as f64 * self.beta_step)
            .collect()
    }

    pub fn widths(&self) -> Vec<usize> {
        vec![2, self.width_n, 2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSection {
    pub width_n: usize,
    pub activation: ActivationKind,
    pub beta: f64,
    /// Numbers of hidden layers of width `width_n`.
    pub depths: Vec<usize>,
    pub n_seeds: usize,
    pub pairs: PairBudget,
    pub zero_bias: bool,
}

impl Default for DepthSection {
    fn default() -> Self {
        DepthSection {
            width_n: 100,
            activation: ActivationKind::Tanh,
            beta: 0.7,
            depths: (1..=8).collect(),
            n_seeds: 20,
            pairs: PairBudget::All,
            zero_bias: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub classes: usize,
    pub radius: f64,
    pub points_per_class: usize,
    pub layout: CenterLayout,
    pub widths: Vec<usize>,
    pub activation: ActivationKind,
    pub init: DistributionSpec,
    pub optimizer: OptimizerConfig,
    /// Seed index for both the training set and the network.
    pub seed_index: u64,
    /// Allowed distance between a fixed point and its class centre.
    pub tolerance: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            classes: 5,
            radius: 0.15,
            points_per_class: 50,
            layout: CenterLayout::default(),
            widths: vec![2, 100, 100, 2],
            activation: ActivationKind::HardTanh,
            init: DistributionSpec::gauss(ScaleRule::InverseSqrtDepth),
            optimizer: OptimizerConfig::default(),
            seed_index: 0,
            tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSection {
    pub width_n: usize,
    pub sigma: f64,
    pub n_seeds: usize,
    /// Input vector; all ones when absent.
    pub input: Option<Vec<f64>>,
}

impl Default for VarianceSection {
    fn default() -> Self {
        VarianceSection {
            width_n: 100,
            sigma: 0.1,
            n_seeds: 10_000,
            input: None,
        }
    }
}

impl VarianceSection {
    pub fn input(&self) -> Vec<f64> {
        self.input.clone().unwrap_or_else(|| vec![1.0; self.width_n])
    }
}

pub fn seeds(master: u64, n: usize) -> Vec<Seed> {
    (0..n as u64).map(|i| Seed::derive(master, i)).collect()
}

fn require_autoencoder(widths: &[usize]) -> fpnet::Result<()> {
    if widths.len() < 2 {
        return Err(Error::param(format!("need at least two widths, got {widths:?}")));
    }
    if widths[0] != 2 {
        return Err(Error::shape("network input width", 2, widths[0]));
    }
    if widths[widths.len() - 1] != widths[0] {
        return Err(Error::shape(
            "autoencoder output width (n_L must equal n_0)",
            widths[0],
            widths[widths.len() - 1],
        ));
    }
    if widths.contains(&0) {
        return Err(Error::param("all widths must be at least 1"));
    }
    Ok(())
}

fn require_seeds(n: usize) -> fpnet::Result<()> {
    if n == 0 {
        return Err(Error::param("n_seeds must be at least 1"));
    }
    Ok(())
}

fn require_pairs(pairs: &PairBudget) -> fpnet::Result<()> {
    match pairs {
        PairBudget::Sampled { count: 0, .. } => {
            Err(Error::param("sampled pair budget needs a positive count"))
        }
        _ => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Checks every precondition of the selected command without computing.
    pub fn validate(&self) -> fpnet::Result<()> {
        self.grid.validate()?;
        self.iteration.policy().validate()?;
        let r = self.iteration.cluster_radius;
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::param(format!("cluster_radius must be positive, got {r}")));
        }
        match self.command {
            Command::Basins => {
                let b = &self.basins;
                require_autoencoder(&b.widths)?;
                b.init.validate()
            }
            Command::SweepDepth => self.sweep_config().validate(),
            Command::BetaSweep => {
                let b = &self.beta_sweep;
                require_seeds(b.n_seeds)?;
                require_pairs(&b.pairs)?;
                if b.width_n == 0 {
                    return Err(Error::param("width_n must be at least 1"));
                }
                if !(b.beta_step > 0.0 && b.beta_start.is_finite() && b.beta_stop.is_finite()) {
                    return Err(Error::param("beta range needs finite bounds and a positive step"));
                }
                if b.betas().len() < 2 {
                    return Err(Error::param("beta range must contain at least two values"));
                }
                Ok(())
            }
            Command::DepthCurve => {
                let d = &self.depth_curve;
                require_seeds(d.n_seeds)?;
                require_pairs(&d.pairs)?;
                if d.width_n == 0 {
                    return Err(Error::param("width_n must be at least 1"));
                }
                if !d.beta.is_finite() {
                    return Err(Error::param("beta must be finite"));
                }
                if d.depths.is_empty() || d.depths.contains(&0) {
                    return Err(Error::param("depths must be nonempty and at least 1"));
                }
                Ok(())
            }
            Command::TrainVerify => {
                let t = &self.train_verify;
                require_autoencoder(&t.widths)?;
                self.train_config().validate()?;
                if !(t.optimizer.learning_rate > 0.0) {
                    return Err(Error::param(format!(
                        "learning_rate must be positive, got {}",
                        t.optimizer.learning_rate
                    )));
                }
                if t.classes == 0 || t.points_per_class == 0 {
                    return Err(Error::param("need at least one class and one point per class"));
                }
                if !(t.radius > 0.0 && 2.0 * t.radius < self.grid.upper - self.grid.lower) {
                    return Err(Error::param(format!("disc radius {} does not fit the grid", t.radius)));
                }
                if !(t.tolerance >= 0.0) {
                    return Err(Error::param("tolerance must be non-negative"));
                }
                Ok(())
            }
            Command::VarianceCheck => {
                let v = &self.variance_check;
                require_seeds(v.n_seeds)?;
                if v.width_n == 0 {
                    return Err(Error::param("width_n must be at least 1"));
                }
                if !(v.sigma >= 0.0 && v.sigma.is_finite()) {
                    return Err(Error::param(format!("sigma must be non-negative, got {}", v.sigma)));
                }
                let x = v.input();
                if x.len() != v.width_n {
                    return Err(Error::shape("variance input", v.width_n, x.len()));
                }
                if x.iter().any(|x| !x.is_finite()) {
                    return Err(Error::param("variance input must be finite"));
                }
                Ok(())
            }
        }
    }

    pub fn sweep_config(&self) -> fpnet::sweep::SweepConfig {
        let s = &self.sweep_depth;
        fpnet::sweep::SweepConfig {
            width_n0: s.width_n0,
            depths: s.depths.clone(),
            family: s.init,
            activation: s.activation,
            n_seeds: s.n_seeds,
            grid: self.grid,
            policy: self.iteration.policy(),
            cluster_radius: self.iteration.cluster_radius,
            master_seed: self.master_seed,
            keep_basins: s.archive_basins,
        }
    }

    pub fn train_config(&self) -> fpnet::train::TrainConfig {
        let t = &self.train_verify;
        fpnet::train::TrainConfig {
            widths: t.widths.clone(),
            activation: t.activation,
            optimizer: t.optimizer,
            init: t.init,
            seed: Seed::derive(self.master_seed, t.seed_index),
        }
    }

    /// Every derived quantity of the selected command, as JSON.
    pub fn derived(&self) -> serde_json::Value {
        use serde_json::json;
        let grid = json!({
            "lower": self.grid.lower,
            "upper": self.grid.upper,
            "delta": self.grid.delta,
            "points_per_axis": self.grid.points_per_axis(),
            "points": self.grid.len(),
        });
        let seed_values = |seeds: Vec<Seed>| -> Vec<u64> { seeds.iter().map(|s| s.value).collect() };
        let details = match self.command {
            Command::Basins => {
                let b = &self.basins;
                json!({
                    "widths": b.widths,
                    "activation": b.activation,
                    "init": b.init.describe(),
                    "seed": Seed::derive(self.master_seed, b.seed_index).value,
                    "layer_scales": layer_scales(&b.widths, &b.init),
                })
            }
            Command::SweepDepth => {
                let c = self.sweep_config();
                let per_depth: Vec<_> = c
                    .depths
                    .iter()
                    .map(|&l| {
                        let w = depth_widths(c.width_n0, l);
                        json!({ "depth": l, "layer_scales": layer_scales(&w, &c.family), "widths": w })
                    })
                    .collect();
                json!({
                    "init": c.family.describe(),
                    "activation": c.activation,
                    "depths": per_depth,
                    "seeds": seed_values(c.seeds()),
                })
            }
            Command::BetaSweep => {
                let b = &self.beta_sweep;
                let widths = b.widths();
                let per_beta: Vec<_> = b
                    .betas()
                    .iter()
                    .map(|&beta| {
                        let d = DistributionSpec::gauss(ScaleRule::PowerLaw { beta });
                        json!({ "beta": beta, "layer_scales": layer_scales(&widths, &d) })
                    })
                    .collect();
                json!({
                    "widths": widths,
                    "activation": b.activation,
                    "betas": per_beta,
                    "seeds": seed_values(seeds(self.master_seed, b.n_seeds)),
                })
            }
            Command::DepthCurve => {
                let d = &self.depth_curve;
                let dist = DistributionSpec::gauss(ScaleRule::PowerLaw { beta: d.beta });
                let per_depth: Vec<_> = d
                    .depths
                    .iter()
                    .map(|&l| {
                        let w = fpnet::contraction::hidden_widths(d.width_n, l);
                        json!({ "depth": l, "layer_scales": layer_scales(&w, &dist), "widths": w })
                    })
                    .collect();
                json!({
                    "activation": d.activation,
                    "beta": d.beta,
                    "depths": per_depth,
                    "seeds": seed_values(seeds(self.master_seed, d.n_seeds)),
                })
            }
            Command::TrainVerify => {
                let t = &self.train_verify;
                let cfg = self.train_config();
                json!({
                    "widths": t.widths,
                    "activation": t.activation,
                    "init": t.init.describe(),
                    "layer_scales": layer_scales(&t.widths, &t.init),
                    "seed": cfg.seed.value,
                    "classes": t.classes,
                    "training_points": t.classes * t.points_per_class,
                })
            }
            Command::VarianceCheck => {
                let v = &self.variance_check;
                let norm2: f64 = v.input().iter().map(|x| x * x).sum();
                json!({
                    "width_n": v.width_n,
                    "sigma": v.sigma,
                    "expected_variance": (norm2 + 1.0) * v.sigma * v.sigma,
                    "seeds": seed_values(seeds(self.master_seed, v.n_seeds)),
                })
            }
        };
        json!({
            "command": self.command.name(),
            "grid": grid,
            "iteration": self.iteration,
            "details": details,
        })
    }
}
