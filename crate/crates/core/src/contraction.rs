//! Empirical contraction constants over the grid.
//!
//! `g = max ‖Φ(x) − Φ(x′)‖ / ‖x − x′‖` over distinct grid points, swept over
//! the Gaussian scale exponent β (σ = N^{−β}) and over depth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixpoint::{dist, FixedPointReport, GridSpec, Point};
use crate::init::{init_network, DistributionSpec, ScaleRule, Seed};
use crate::net::{ActivationKind, Network, Workspace};
use crate::par;

/// Which pairs of grid points enter the maximum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairBudget {
    /// Every unordered pair of distinct grid points.
    #[default]
    All,
    /// All 8-neighbour pairs plus `count` uniformly drawn pairs.
    Sampled { count: usize, seed: u64 },
}

/// `Φ` evaluated at every grid point, in grid order.
pub fn grid_images(net: &Network, spec: &GridSpec) -> Result<Vec<Point>> {
    net.check_autoencoder(2)?;
    spec.validate()?;
    Ok(par::map_indexed(spec.len(), |i| {
        let mut ws = Workspace::default();
        let y = net.eval(&spec.point(i), &mut ws);
        [y[0], y[1]]
    }))
}

#[inline]
fn ratio(xs: &[Point], ys: &[Point], a: usize, b: usize) -> f64 {
    dist(&ys[a], &ys[b]) / dist(&xs[a], &xs[b])
}

fn neighbour_max(spec: &GridSpec, xs: &[Point], ys: &[Point], i: usize) -> f64 {
    let n = spec.points_per_axis();
    let (j, l) = spec.index_to_jl(i);
    let mut best = 0.0f64;
    // forward half of the 8-neighbourhood; the other half is covered from the other side
    for (dj, dl) in [(1usize, 0usize), (0, 1), (1, 1)] {
        if j + dj < n && l + dl < n {
            best = best.max(ratio(xs, ys, i, spec.jl_to_index(j + dj, l + dl)));
        }
    }
    if j + 1 < n && l >= 1 {
        best = best.max(ratio(xs, ys, i, spec.jl_to_index(j + 1, l - 1)));
    }
    best
}

/// Maximum difference quotient of `images` over grid pairs.
pub fn max_pair_ratio(spec: &GridSpec, images: &[Point], budget: PairBudget) -> Result<f64> {
    let xs: Vec<Point> = (0..spec.len()).map(|i| spec.point(i)).collect();
    if xs.len() < 2 {
        return Err(Error::param("contraction constant needs at least two grid points"));
    }
    if images.len() != xs.len() {
        return Err(Error::shape("grid images", xs.len(), images.len()));
    }
    let n = xs.len();
    let g = match budget {
        PairBudget::All => par::max_indexed(n, 0.0, |a| {
            let mut best = 0.0f64;
            for b in a + 1..n {
                best = best.max(ratio(&xs, images, a, b));
            }
            best
        }),
        PairBudget::Sampled { count, seed } => {
            let local = par::max_indexed(n, 0.0, |a| neighbour_max(spec, &xs, images, a));
            let mut rng = Seed::new(seed).rng();
            let mut best = local;
            for _ in 0..count {
                let a = rng.below(n as u64) as usize;
                let mut b = rng.below(n as u64 - 1) as usize;
                if b >= a {
                    b += 1;
                }
                best = best.max(ratio(&xs, images, a, b));
            }
            best
        }
    };
    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::Numerical(format!("contraction constant is not finite ({g})")))
    }
}

/// Contraction parameter of `net` on the grid.
pub fn contraction_constant(net: &Network, spec: &GridSpec, budget: PairBudget) -> Result<f64> {
    spec.validate()?;
    if spec.len() < 2 {
        return Err(Error::param("contraction constant needs at least two grid points"));
    }
    let images = grid_images(net, spec)?;
    max_pair_ratio(spec, &images, budget)
}

/// For each grid point, the largest difference quotient to its 8 neighbours.
pub fn local_ratio_map(net: &Network, spec: &GridSpec) -> Result<Vec<f64>> {
    let images = grid_images(net, spec)?;
    let xs: Vec<Point> = (0..spec.len()).map(|i| spec.point(i)).collect();
    let n = spec.points_per_axis();
    Ok(par::map_indexed(xs.len(), |i| {
        let (j, l) = spec.index_to_jl(i);
        let mut best = 0.0f64;
        for dj in -1i64..=1 {
            for dl in -1i64..=1 {
                let (a, b) = (j as i64 + dj, l as i64 + dl);
                if (dj, dl) == (0, 0) || a < 0 || b < 0 || a >= n as i64 || b >= n as i64 {
                    continue;
                }
                best = best.max(ratio(&xs, &images, i, spec.jl_to_index(a as usize, b as usize)));
            }
        }
        best
    }))
}

/// Maximum pairwise difference quotient restricted to pairs inside each
/// basin of `report`. Basins with a single grid point get 0.
pub fn basin_contraction(net: &Network, report: &FixedPointReport) -> Result<Vec<f64>> {
    let spec = &report.grid;
    let images = grid_images(net, spec)?;
    let xs: Vec<Point> = (0..spec.len()).map(|i| spec.point(i)).collect();
    Ok((0..report.q())
        .map(|k| {
            let members = report.basin(k);
            par::max_indexed(members.len(), 0.0, |a| {
                let mut best = 0.0f64;
                for &b in &members[a + 1..] {
                    best = best.max(ratio(&xs, &images, members[a], b));
                }
                best
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionSample {
    pub beta: f64,
    pub width_n: usize,
    pub depth_l: usize,
    pub activation: ActivationKind,
    pub g: f64,
    pub seed: Seed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCurve {
    pub samples: Vec<ContractionSample>,
    /// `(β, seed-averaged g)` in sweep order.
    pub mean_g: Vec<(f64, f64)>,
    pub beta_cr: Option<f64>,
    /// Why `beta_cr` is absent, when it is.
    pub diagnostic: Option<String>,
}

/// Options shared by the sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepOptions {
    pub pairs: PairBudget,
    pub zero_bias: bool,
}

/// Linear interpolation of the first crossing of `g = 1` along the curve.
pub fn crossing_of_one(curve: &[(f64, f64)]) -> Option<f64> {
    curve.windows(2).find_map(|w| {
        let ((b0, g0), (b1, g1)) = (w[0], w[1]);
        let (s0, s1) = (g0 - 1.0, g1 - 1.0);
        if s0 == 0.0 {
            Some(b0)
        } else if s0 * s1 < 0.0 || s1 == 0.0 {
            Some(b0 + (b1 - b0) * s0 / (s0 - s1))
        } else {
            None
        }
    })
}

/// Gaussian networks with `σ = N^{−β}` for each β and seed; `β_cr` is where
/// the seed-averaged `g(β)` crosses 1.
pub fn beta_sweep(
    widths: &[usize],
    activation: ActivationKind,
    betas: &[f64],
    seeds: &[Seed],
    spec: &GridSpec,
    opts: SweepOptions,
) -> Result<ContractionCurve> {
    if betas.len() < 2 {
        return Err(Error::param("beta sweep needs at least two beta values"));
    }
    if betas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::param("beta values must be strictly ascending"));
    }
    if seeds.is_empty() {
        return Err(Error::param("beta sweep needs at least one seed"));
    }
    spec.validate()?;
    let cells: Vec<(usize, usize)> = (0..betas.len())
        .flat_map(|b| (0..seeds.len()).map(move |s| (b, s)))
        .collect();
    let gs = par::map_slice(&cells, |&(b, s)| -> Result<f64> {
        let mut dist = DistributionSpec::gauss(ScaleRule::PowerLaw { beta: betas[b] });
        dist.zero_bias = opts.zero_bias;
        let net = init_network(widths, activation, &dist, seeds[s])?;
        contraction_constant(&net, spec, opts.pairs)
    });
    let mut samples = Vec::with_capacity(cells.len());
    for (&(b, s), g) in cells.iter().zip(gs) {
        samples.push(ContractionSample {
            beta: betas[b],
            width_n: widths.iter().copied().max().unwrap_or(0),
            depth_l: widths.len() - 1,
            activation,
            g: g?,
            seed: seeds[s],
        });
    }
    let mean_g: Vec<(f64, f64)> = betas
        .iter()
        .enumerate()
        .map(|(b, &beta)| {
            let sum: f64 = samples[b * seeds.len()..(b + 1) * seeds.len()]
                .iter()
                .map(|s| s.g)
                .sum();
            (beta, sum / seeds.len() as f64)
        })
        .collect();
    let beta_cr = crossing_of_one(&mean_g);
    let diagnostic = beta_cr.is_none().then(|| {
        let (lo, hi) = mean_g
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, g)| {
                (lo.min(g), hi.max(g))
            });
        format!(
            "mean g stays in [{lo}, {hi}] over beta in [{}, {}] and never crosses 1",
            betas[0],
            betas[betas.len() - 1]
        )
    });
    Ok(ContractionCurve {
        samples,
        mean_g,
        beta_cr,
        diagnostic,
    })
}

/// Least-squares line `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::param("linear fit needs equally many x and y values"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Ok(LinearFit {
            slope: 0.0,
            intercept: my,
            r2: 1.0,
        });
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthCurve {
    pub samples: Vec<ContractionSample>,
    /// `(L, mean g)`.
    pub mean_g: Vec<(usize, f64)>,
    /// Fit of `ln(mean g)` against `L`.
    pub fit: LinearFit,
}

/// Mean `g` per depth for networks produced by `build(L, seed)`, with a
/// least-squares fit of `ln g` against `L`.
pub fn depth_curve_with<F>(depths: &[usize], seeds: &[Seed], build: F) -> Result<DepthCurve>
where
    F: Fn(usize, Seed) -> Result<(Network, ContractionSample)> + Sync + Send,
{
    if depths.is_empty() || depths.contains(&0) {
        return Err(Error::param("depths must be nonempty and at least 1"));
    }
    if seeds.is_empty() {
        return Err(Error::param("depth curve needs at least one seed"));
    }
    let cells: Vec<(usize, usize)> = (0..depths.len())
        .flat_map(|d| (0..seeds.len()).map(move |s| (d, s)))
        .collect();
    let samples = par::map_slice(&cells, |&(d, s)| {
        // a fresh stream per depth so networks at different depths are independent
        let seed = seeds[s].substream(0xDE97 + depths[d] as u64);
        build(depths[d], seed).map(|(_, sample)| sample)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mean_g: Vec<(usize, f64)> = depths
        .iter()
        .enumerate()
        .map(|(d, &l)| {
            let sum: f64 = samples[d * seeds.len()..(d + 1) * seeds.len()]
                .iter()
                .map(|s| s.g)
                .sum();
            (l, sum / seeds.len() as f64)
        })
        .collect();
    if mean_g.iter().any(|&(_, g)| !(g > 0.0)) {
        return Err(Error::Numerical(
            "mean contraction constant is zero at some depth; log fit undefined".into(),
        ));
    }
    let xs: Vec<f64> = mean_g.iter().map(|&(l, _)| l as f64).collect();
    let ys: Vec<f64> = mean_g.iter().map(|&(_, g)| g.ln()).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(DepthCurve {
        samples,
        mean_g,
        fit,
    })
}

/// Widths `{2, N, …, N, 2}` with `hidden` layers of width `N`.
pub fn hidden_widths(width_n: usize, hidden: usize) -> Vec<usize> {
    let mut w = vec![2];
    w.extend(std::iter::repeat_n(width_n, hidden));
    w.push(2);
    w
}

/// `g` against depth for Gaussian `σ = N^{−β}` networks with `L` hidden
/// layers of width `N` (so `L = 1` is the single-hidden-layer network of
/// [`beta_sweep`]).
pub fn depth_curve(
    width_n: usize,
    activation: ActivationKind,
    beta: f64,
    depths: &[usize],
    seeds: &[Seed],
    spec: &GridSpec,
    opts: SweepOptions,
) -> Result<DepthCurve> {
    spec.validate()?;
    depth_curve_with(depths, seeds, |l, seed| {
        let mut dist = DistributionSpec::gauss(ScaleRule::PowerLaw { beta });
        dist.zero_bias = opts.zero_bias;
        let net = init_network(&hidden_widths(width_n, l), activation, &dist, seed)?;
        let g = contraction_constant(&net, spec, opts.pairs)?;
        Ok((
            net,
            ContractionSample {
                beta,
                width_n,
                depth_l: l,
                activation,
                g,
                seed,
            },
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub preactivation_variance: f64,
    pub width_n: usize,
    pub sigma: f64,
    pub samples: usize,
}

/// Empirical variance of the components of `y = Wx + b` for an `N × N`
/// Gaussian layer of scale `sigma`, pooled over seeds and components.
pub fn preactivation_variance(
    width_n: usize,
    sigma: f64,
    seeds: &[Seed],
    x: &[f64],
) -> Result<LayerStats> {
    if width_n == 0 {
        return Err(Error::param("width_N must be at least 1"));
    }
    if x.len() != width_n {
        return Err(Error::shape("preactivation input", width_n, x.len()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be non-negative, got {sigma}")));
    }
    if seeds.is_empty() {
        return Err(Error::param("need at least one seed"));
    }
    let samples = seeds.len() * width_n;
    if sigma == 0.0 {
        return Ok(LayerStats {
            preactivation_variance: 0.0,
            width_n,
            sigma,
            samples,
        });
    }
    let dist = DistributionSpec::gauss(ScaleRule::Fixed { value: sigma });
    let per_seed = par::map_slice(seeds, |&seed| -> Result<Vec<f64>> {
        let net = init_network(&[width_n, width_n], ActivationKind::Identity, &dist, seed)?;
        let layer = &net.layers()[0];
        let mut y = Vec::with_capacity(width_n);
        layer.affine_into(x, &mut y);
        Ok(y)
    });
    let mut ys = Vec::with_capacity(samples);
    for v in per_seed {
        ys.extend(v?);
    }
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = if ys.len() > 1 {
        ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (ys.len() - 1) as f64
    } else {
        0.0
    };
    Ok(LayerStats {
        preactivation_variance: var,
        width_n,
        sigma,
        samples,
    })
}
