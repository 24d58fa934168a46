//! Distribution of the fixed-point count `Q` over seeds and depths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixpoint::{
    find_fixed_points, FixedPoint, GridSpec, IterationPolicy, DEFAULT_CLUSTER_RADIUS,
};
use crate::init::{init_network, DistributionSpec, ScaleRule, Seed};
use crate::net::ActivationKind;
use crate::par;

pub const DEFAULT_DEPTHS: [usize; 9] = [2, 3, 4, 5, 6, 8, 10, 14, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Hidden width `N₀`.
    pub width_n0: usize,
    /// Number of weight layers `L`; the widths are `{2, N₀ × (L−1), 2}`.
    pub depths: Vec<usize>,
    pub family: DistributionSpec,
    pub activation: ActivationKind,
    pub n_seeds: usize,
    pub grid: GridSpec,
    pub policy: IterationPolicy,
    pub cluster_radius: f64,
    pub master_seed: u64,
    /// Keep the per-start basin labels of every seed in the report.
    #[serde(default)]
    pub keep_basins: bool,
}

impl SweepConfig {
    pub fn new(width_n0: usize, family: DistributionSpec, n_seeds: usize, master_seed: u64) -> Self {
        SweepConfig {
            width_n0,
            depths: DEFAULT_DEPTHS.to_vec(),
            family,
            activation: ActivationKind::Tanh,
            n_seeds,
            grid: GridSpec::unit(0.05),
            policy: IterationPolicy::default(),
            cluster_radius: DEFAULT_CLUSTER_RADIUS,
            master_seed,
            keep_basins: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::param("n_seeds must be at least 1"));
        }
        if self.depths.is_empty() {
            return Err(Error::param("depths must not be empty"));
        }
        if let Some(&l) = self.depths.iter().find(|&&l| l == 0) {
            return Err(Error::param(format!("depth {l} has no layers")));
        }
        if self.width_n0 == 0 {
            return Err(Error::param("width_n0 must be at least 1"));
        }
        if !(self.cluster_radius > 0.0 && self.cluster_radius.is_finite()) {
            return Err(Error::param(format!(
                "cluster_radius must be positive, got {}",
                self.cluster_radius
            )));
        }
        self.family.validate()?;
        self.grid.validate()?;
        self.policy.validate()
    }

    /// Seed of the `s`-th network; shared across depths.
    pub fn seed(&self, s: usize) -> Seed {
        Seed::derive(self.master_seed, s as u64)
    }

    pub fn seeds(&self) -> Vec<Seed> {
        (0..self.n_seeds).map(|s| self.seed(s)).collect()
    }

    pub fn widths(&self, depth: usize) -> Vec<usize> {
        depth_widths(self.width_n0, depth)
    }
}

/// `{2, N₀, …, N₀, 2}` with `L` weight layers.
pub fn depth_widths(width_n0: usize, depth: usize) -> Vec<usize> {
    let mut w = vec![2];
    w.extend(std::iter::repeat_n(width_n0, depth.saturating_sub(1)));
    w.push(2);
    w
}

/// Outcome of one `(depth, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: Seed,
    pub q: usize,
    pub unresolved_fraction: f64,
    pub fixed_points: Vec<FixedPoint>,
    /// Basin label per grid start, only when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<Option<usize>>>,
    /// Set when the cell could not be evaluated; it then counts as `Q = 0`
    /// with every start unresolved.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSummary {
    pub depth: usize,
    pub widths: Vec<usize>,
    /// `Q → number of seeds`.
    pub histogram: BTreeMap<usize, usize>,
    /// Most frequent `Q`, ties broken toward the smaller value.
    pub mode: usize,
    pub mean: f64,
    /// Unresolved starts over all seeds, as a fraction of all starts.
    pub unresolved_fraction: f64,
    pub failed_seeds: Vec<usize>,
    pub outcomes: Vec<SeedOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub depths: Vec<DepthSummary>,
}

impl SweepReport {
    pub fn depth(&self, l: usize) -> Option<&DepthSummary> {
        self.depths.iter().find(|d| d.depth == l)
    }
}

/// Most frequent value; ties go to the smaller value.
pub fn mode_of(histogram: &BTreeMap<usize, usize>) -> Option<usize> {
    // BTreeMap iterates ascending and max_by_key keeps the last maximum,
    // so iterate in reverse to keep the smallest
    histogram
        .iter()
        .rev()
        .max_by_key(|(_, &count)| count)
        .map(|(&q, _)| q)
}

pub fn summarize_depth(depth: usize, widths: Vec<usize>, outcomes: Vec<SeedOutcome>) -> DepthSummary {
    let mut histogram = BTreeMap::new();
    for o in &outcomes {
        *histogram.entry(o.q).or_insert(0) += 1;
    }
    let n = outcomes.len().max(1) as f64;
    DepthSummary {
        depth,
        widths,
        mode: mode_of(&histogram).unwrap_or(0),
        mean: outcomes.iter().map(|o| o.q as f64).sum::<f64>() / n,
        unresolved_fraction: outcomes.iter().map(|o| o.unresolved_fraction).sum::<f64>() / n,
        failed_seeds: outcomes
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.error.is_some().then_some(i))
            .collect(),
        histogram,
        outcomes,
    }
}

fn run_cell(cfg: &SweepConfig, depth: usize, s: usize) -> SeedOutcome {
    let seed = cfg.seed(s);
    let found = init_network(&cfg.widths(depth), cfg.activation, &cfg.family, seed)
        .and_then(|net| find_fixed_points(&net, &cfg.grid, &cfg.policy, cfg.cluster_radius));
    match found {
        Ok(r) => SeedOutcome {
            seed,
            q: r.q(),
            unresolved_fraction: r.unresolved_fraction(),
            labels: cfg.keep_basins.then(|| r.labels.clone()),
            fixed_points: r.fixed_points,
            error: None,
        },
        Err(e) => SeedOutcome {
            seed,
            q: 0,
            unresolved_fraction: 1.0,
            fixed_points: Vec::new(),
            labels: None,
            error: Some(e.to_string()),
        },
    }
}

/// Every `(depth, seed)` cell: build the network, find its fixed points,
/// record `Q`. Cells run in parallel and are folded in index order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = cfg
        .depths
        .iter()
        .flat_map(|&l| (0..cfg.n_seeds).map(move |s| (l, s)))
        .collect();
    let mut outcomes = par::map_slice(&cells, |&(l, s)| run_cell(cfg, l, s)).into_iter();
    let depths = cfg
        .depths
        .iter()
        .map(|&l| {
            let chunk: Vec<SeedOutcome> = outcomes.by_ref().take(cfg.n_seeds).collect();
            summarize_depth(l, cfg.widths(l), chunk)
        })
        .collect();
    Ok(SweepReport {
        config: cfg.clone(),
        depths,
    })
}

/// One row per depth of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub depth: usize,
    pub mode: usize,
    pub mean: f64,
    /// Compact JSON object `{"Q": count, …}`.
    pub histogram: String,
    pub unresolved_fraction: f64,
}

pub fn summarize(report: &SweepReport) -> Result<Vec<SummaryRow>> {
    if report.depths.is_empty() {
        return Err(Error::param("sweep report has no depths"));
    }
    report
        .depths
        .iter()
        .map(|d| {
            Ok(SummaryRow {
                depth: d.depth,
                mode: d.mode,
                mean: d.mean,
                histogram: serde_json::to_string(&d.histogram)?,
                unresolved_fraction: d.unresolved_fraction,
            })
        })
        .collect()
}

/// Convenience: the Gaussian `σ_l = n_l⁻¹` family.
pub fn gauss_inverse_width() -> DistributionSpec {
    DistributionSpec::gauss(ScaleRule::PerLayerInverseWidth)
}

/// Convenience: the Cauchy `γ_l = n_l⁻¹` family.
pub fn cauchy_inverse_width() -> DistributionSpec {
    DistributionSpec::cauchy(ScaleRule::PerLayerInverseWidth)
}
