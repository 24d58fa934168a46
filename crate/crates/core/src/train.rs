//! Toy encode/decode training: map every point of a disc onto the disc's
//! centre, then check that the centres became attracting fixed points.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixpoint::{dist, find_fixed_points, iterate_unchecked, FixedPointReport, GridSpec, IterationPolicy, Point};
use crate::init::{init_network, DistributionSpec, ScaleRule, Seed};
use crate::net::{ActivationKind, Network, Workspace};

/// Loss above which training is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscClass {
    /// The "true" point every class member should map to.
    pub center: Point,
    pub radius: f64,
    /// Training points; the centre is always the first one.
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub classes: Vec<DiscClass>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.points.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(point, class index)` for every training point, class by class.
    pub fn samples(&self) -> Vec<(Point, usize)> {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(k, c)| c.points.iter().map(move |&p| (p, k)))
            .collect()
    }

    pub fn centers(&self) -> Vec<Point> {
        self.classes.iter().map(|c| c.center).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum CenterLayout {
    /// Seeded rejection sampling with a minimum centre separation.
    Random { min_separation: f64 },
    /// Regular polygon of the given circumradius, first vertex on +y.
    Polygon { circumradius: f64 },
}

impl Default for CenterLayout {
    fn default() -> Self {
        CenterLayout::Random {
            min_separation: 0.5,
        }
    }
}

const PACKING_ATTEMPTS: usize = 10_000;

/// `k` disjoint discs of `radius` inside the grid domain with
/// `points_per_class` points each (centre included).
pub fn make_discs(
    k: usize,
    radius: f64,
    grid: &GridSpec,
    points_per_class: usize,
    seed: Seed,
    layout: CenterLayout,
) -> Result<TrainingSet> {
    grid.validate()?;
    if k == 0 || points_per_class == 0 {
        return Err(Error::param("need at least one class and one point per class"));
    }
    let (lo, hi) = (grid.lower + radius, grid.upper - radius);
    if !(radius > 0.0) || lo > hi {
        return Err(Error::param(format!(
            "disc radius {radius} does not fit in [{}, {}]",
            grid.lower, grid.upper
        )));
    }
    let centers = match layout {
        CenterLayout::Random { min_separation } => {
            if !(min_separation > 2.0 * radius) {
                return Err(Error::param(format!(
                    "min_separation {min_separation} must exceed twice the radius {radius}"
                )));
            }
            let mut rng = seed.substream(0xCE47).rng();
            let mut centers: Vec<Point> = Vec::with_capacity(k);
            let mut attempts = 0;
            while centers.len() < k {
                if attempts == PACKING_ATTEMPTS {
                    return Err(Error::Packing {
                        classes: k,
                        radius,
                        attempts,
                    });
                }
                attempts += 1;
                let c = [
                    lo + (hi - lo) * rng.uniform_open(),
                    lo + (hi - lo) * rng.uniform_open(),
                ];
                if centers.iter().all(|o| dist(o, &c) >= min_separation) {
                    centers.push(c);
                }
            }
            centers
        }
        CenterLayout::Polygon { circumradius } => {
            let mid = 0.5 * (grid.lower + grid.upper);
            let centers: Vec<Point> = (0..k)
                .map(|i| {
                    let a = PI / 2.0 + 2.0 * PI * i as f64 / k as f64;
                    [mid + circumradius * a.cos(), mid + circumradius * a.sin()]
                })
                .collect();
            let fits = centers.iter().all(|c| c.iter().all(|&v| v >= lo && v <= hi));
            let separated = centers
                .iter()
                .enumerate()
                .all(|(i, a)| centers[i + 1..].iter().all(|b| dist(a, b) > 2.0 * radius));
            if !fits || !separated {
                return Err(Error::Packing {
                    classes: k,
                    radius,
                    attempts: 1,
                });
            }
            centers
        }
    };
    let classes = centers
        .into_iter()
        .enumerate()
        .map(|(i, center)| {
            let mut rng = seed.substream(0xD15C + i as u64).rng();
            let mut points = Vec::with_capacity(points_per_class);
            points.push(center);
            while points.len() < points_per_class {
                let r = radius * rng.uniform_open().sqrt();
                let t = 2.0 * PI * rng.uniform_open();
                points.push([center[0] + r * t.cos(), center[1] + r * t.sin()]);
            }
            DiscClass {
                center,
                radius,
                points,
            }
        })
        .collect();
    Ok(TrainingSet { classes })
}

fn check_net(net: &Network) -> Result<()> {
    net.check_autoencoder(2)
}

/// `Σ_k Σ_{x ∈ T_k} ‖Φ(x) − x*_k‖²` (a sum, not a mean).
pub fn loss(net: &Network, ts: &TrainingSet) -> Result<f64> {
    check_net(net)?;
    let mut ws = Workspace::default();
    let mut total = 0.0;
    for class in &ts.classes {
        for p in &class.points {
            let y = net.eval(p, &mut ws);
            total += (y[0] - class.center[0]).powi(2) + (y[1] - class.center[1]).powi(2);
        }
    }
    Ok(total)
}

/// Gradient with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// Per layer, row-major like [`crate::net::Layer::weights`].
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn zeros_like(net: &Network) -> Self {
        Gradient {
            weights: net.layers().iter().map(|l| vec![0.0; l.weights().len()]).collect(),
            bias: net.layers().iter().map(|l| vec![0.0; l.bias().len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(0.0));
        self.bias.iter_mut().for_each(|b| b.fill(0.0));
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }
}

/// Scratch buffers for one backward pass.
struct Backprop {
    /// Pre-activations per layer.
    z: Vec<Vec<f64>>,
    /// Activations; `a[0]` is the input.
    a: Vec<Vec<f64>>,
    delta: Vec<f64>,
    upstream: Vec<f64>,
}

impl Backprop {
    fn new(net: &Network) -> Self {
        Backprop {
            z: net.layers().iter().map(|l| Vec::with_capacity(l.rows())).collect(),
            a: net.widths().iter().map(|&n| Vec::with_capacity(n)).collect(),
            delta: Vec::new(),
            upstream: Vec::new(),
        }
    }

    /// Adds the gradient of `‖Φ(x) − target‖²` into `grad`; returns the loss term.
    fn accumulate(&mut self, net: &Network, x: &Point, target: &Point, grad: &mut Gradient) -> f64 {
        let layers = net.layers();
        self.a[0].clear();
        self.a[0].extend_from_slice(x);
        for (l, layer) in layers.iter().enumerate() {
            let (head, tail) = self.a.split_at_mut(l + 1);
            layer.affine_into(&head[l], &mut self.z[l]);
            let act = layer.activation();
            tail[0].clear();
            tail[0].extend(self.z[l].iter().map(|&z| act.apply(z)));
        }
        let out = &self.a[layers.len()];
        let r = [out[0] - target[0], out[1] - target[1]];
        self.upstream.clear();
        self.upstream.extend_from_slice(&[2.0 * r[0], 2.0 * r[1]]);
        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let act = layer.activation();
            self.delta.clear();
            self.delta.extend(
                self.upstream
                    .iter()
                    .zip(&self.z[l])
                    .map(|(&u, &z)| u * act.derivative(z)),
            );
            let input = &self.a[l];
            let cols = layer.cols();
            let gw = &mut grad.weights[l];
            for (i, &d) in self.delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad.bias[l][i] += d;
                for (g, &v) in gw[i * cols..(i + 1) * cols].iter_mut().zip(input) {
                    *g += d * v;
                }
            }
            if l > 0 {
                self.upstream.clear();
                self.upstream.resize(cols, 0.0);
                for (i, &d) in self.delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (u, &w) in self.upstream.iter_mut().zip(layer.row(i)) {
                        *u += d * w;
                    }
                }
            }
        }
        r[0] * r[0] + r[1] * r[1]
    }
}

/// Exact reverse-mode gradient of [`loss`] with respect to every weight and
/// bias. HardTanh's derivative is taken as 1 on the closed interval `[-1, 1]`.
pub fn gradient(net: &Network, ts: &TrainingSet) -> Result<Gradient> {
    check_net(net)?;
    let mut grad = Gradient::zeros_like(net);
    let mut bp = Backprop::new(net);
    for (x, k) in ts.samples() {
        bp.accumulate(net, &x, &ts.classes[k].center, &mut grad);
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub target_loss: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.05,
            batch_size: 16,
            max_epochs: 5000,
            target_loss: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub widths: Vec<usize>,
    pub activation: ActivationKind,
    pub optimizer: OptimizerConfig,
    pub init: DistributionSpec,
    pub seed: Seed,
}

impl TrainConfig {
    /// Widths `{2, 100, 100, 2}`, HardTanh, Gaussian init with `σ = 1/√L`.
    pub fn standard(seed: Seed) -> Self {
        TrainConfig {
            widths: vec![2, 100, 100, 2],
            activation: ActivationKind::HardTanh,
            optimizer: OptimizerConfig::default(),
            init: DistributionSpec::gauss(ScaleRule::InverseSqrtDepth),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::param(format!(
                "learning_rate must be non-negative, got {}",
                o.learning_rate
            )));
        }
        if o.batch_size == 0 {
            return Err(Error::param("batch_size must be at least 1"));
        }
        if o.max_epochs == 0 {
            return Err(Error::param("max_epochs must be at least 1"));
        }
        if !(o.target_loss >= 0.0) {
            return Err(Error::param("target_loss must be non-negative"));
        }
        match (self.widths.first(), self.widths.last()) {
            (Some(2), Some(2)) => Ok(()),
            _ => Err(Error::param(format!(
                "training needs widths starting and ending with 2, got {:?}",
                self.widths
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetLoss,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Loss on the whole training set: entry 0 before training, entry `e`
    /// after epoch `e`.
    pub loss_history: Vec<f64>,
    pub stop: StopReason,
    pub network: Network,
}

impl TrainTrace {
    pub fn initial_loss(&self) -> f64 {
        self.loss_history[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history is never empty")
    }

    pub fn epochs(&self) -> usize {
        self.loss_history.len() - 1
    }
}

/// Mini-batch SGD on the summed squared loss. Each step moves along the mean
/// gradient of its batch; the shuffle of epoch `e` is drawn from its own
/// stream, so a run is a pure function of `(cfg, ts)`.
pub fn train(cfg: &TrainConfig, ts: &TrainingSet) -> Result<TrainTrace> {
    cfg.validate()?;
    if ts.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    let net = init_network(&cfg.widths, cfg.activation, &cfg.init, cfg.seed)?;
    train_from(net, cfg, ts)
}

/// Like [`train`] but starting from a given network.
pub fn train_from(mut net: Network, cfg: &TrainConfig, ts: &TrainingSet) -> Result<TrainTrace> {
    cfg.validate()?;
    check_net(&net)?;
    let opt = &cfg.optimizer;
    let samples = ts.samples();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grad = Gradient::zeros_like(&net);
    let mut bp = Backprop::new(&net);
    let mut history = vec![loss(&net, ts)?];
    let mut stop = StopReason::MaxEpochs;
    let shuffle_seed = cfg.seed.substream(0x5A1E);

    if history[0] <= opt.target_loss {
        return Ok(TrainTrace {
            loss_history: history,
            stop: StopReason::TargetLoss,
            network: net,
        });
    }

    for epoch in 1..=opt.max_epochs {
        shuffle_seed.substream(epoch as u64).rng().shuffle(&mut order);
        for batch in order.chunks(opt.batch_size) {
            grad.clear();
            for &i in batch {
                let (x, k) = samples[i];
                bp.accumulate(&net, &x, &ts.classes[k].center, &mut grad);
            }
            let step = opt.learning_rate / batch.len() as f64;
            for (l, layer) in net.layers_mut().iter_mut().enumerate() {
                let (w, b) = layer.params_mut();
                for (p, g) in w.iter_mut().zip(&grad.weights[l]) {
                    *p -= step * g;
                }
                for (p, g) in b.iter_mut().zip(&grad.bias[l]) {
                    *p -= step * g;
                }
            }
        }
        let value = loss(&net, ts)?;
        history.push(value);
        if !value.is_finite() || value > DIVERGENCE_LOSS {
            return Err(Error::Divergence {
                epoch,
                loss: value,
                trace: Box::new(TrainTrace {
                    loss_history: history,
                    stop: StopReason::MaxEpochs,
                    network: net,
                }),
            });
        }
        if value <= opt.target_loss {
            stop = StopReason::TargetLoss;
            break;
        }
    }
    Ok(TrainTrace {
        loss_history: history,
        stop,
        network: net,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMatch {
    pub center: Point,
    /// Index of the reported fixed point nearest to the centre, if any.
    pub fixed_point: Option<usize>,
    pub distance: f64,
    /// Training points of this class whose iteration ends at `fixed_point`.
    pub captured: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub q: usize,
    pub k: usize,
    pub classes: Vec<ClassMatch>,
    pub fixed_points: FixedPointReport,
}

impl VerificationReport {
    /// Every class has its own fixed point within `tolerance` of its centre.
    pub fn centers_matched(&self, tolerance: f64) -> bool {
        let mut used = std::collections::HashSet::new();
        self.classes.iter().all(|c| {
            c.fixed_point.is_some_and(|f| used.insert(f)) && c.distance <= tolerance
        })
    }

    /// Every training point iterates to its own class's fixed point.
    pub fn all_captured(&self) -> bool {
        self.classes.iter().all(|c| c.captured == c.total)
    }

    pub fn captured_fraction(&self) -> f64 {
        let (hit, total) = self
            .classes
            .iter()
            .fold((0, 0), |(h, t), c| (h + c.captured, t + c.total));
        hit as f64 / total.max(1) as f64
    }

    /// `Q = K`, centres matched within `tolerance`, and `T_k ⊂ Ω_k` for all k.
    pub fn success(&self, tolerance: f64) -> bool {
        self.q == self.k && self.centers_matched(tolerance) && self.all_captured()
    }
}

/// Finds the fixed points of a trained network and matches them to the class
/// centres. Mismatches are reported, not raised.
pub fn verify_trained(
    net: &Network,
    ts: &TrainingSet,
    grid: &GridSpec,
    policy: &IterationPolicy,
    cluster_radius: f64,
) -> Result<VerificationReport> {
    let report = find_fixed_points(net, grid, policy, cluster_radius)?;
    let fps = report.points();
    let nearest = |p: &Point| -> Option<(usize, f64)> {
        fps.iter()
            .enumerate()
            .map(|(i, f)| (i, dist(f, p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    };
    let mut ws = Workspace::default();
    let classes = ts
        .classes
        .iter()
        .map(|class| {
            let own = nearest(&class.center);
            let captured = match own {
                None => 0,
                Some((f, _)) => class
                    .points
                    .iter()
                    .filter(|p| {
                        let r = iterate_unchecked(net, **p, policy, &mut ws);
                        r.converged()
                            && nearest(&r.limit)
                                .is_some_and(|(g, d)| g == f && d <= cluster_radius)
                    })
                    .count(),
            };
            ClassMatch {
                center: class.center,
                fixed_point: own.map(|(f, _)| f),
                distance: own.map_or(f64::INFINITY, |(_, d)| d),
                captured,
                total: class.points.len(),
            }
        })
        .collect();
    Ok(VerificationReport {
        q: report.q(),
        k: ts.classes.len(),
        classes,
        fixed_points: report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Layer;

    fn identity_net() -> Network {
        Network::new(vec![Layer::diagonal(2, 1.0, ActivationKind::HardTanh).unwrap()]).unwrap()
    }

    fn one_class(center: Point, points: Vec<Point>) -> TrainingSet {
        TrainingSet {
            classes: vec![DiscClass {
                center,
                radius: 0.15,
                points,
            }],
        }
    }

    #[test]
    fn discs_are_disjoint_and_contain_points() {
        let grid = GridSpec::unit(0.05);
        let ts = make_discs(5, 0.15, &grid, 50, Seed::new(3), CenterLayout::default()).unwrap();
        assert_eq!(ts.classes.len(), 5);
        assert_eq!(ts.len(), 250);
        for (i, c) in ts.classes.iter().enumerate() {
            assert_eq!(c.points[0], c.center);
            assert!(c.points.iter().all(|p| dist(p, &c.center) <= 0.15));
            assert!(c.points.iter().all(|p| grid.contains(p)));
            for other in &ts.classes[i + 1..] {
                assert!(dist(&c.center, &other.center) > 0.3);
            }
        }
        let again = make_discs(5, 0.15, &grid, 50, Seed::new(3), CenterLayout::default()).unwrap();
        assert_eq!(ts, again);
    }

    #[test]
    fn single_disc() {
        let ts = make_discs(1, 0.15, &GridSpec::unit(0.05), 20, Seed::new(1), CenterLayout::default())
            .unwrap();
        let c = &ts.classes[0];
        assert!(c.points.iter().all(|p| dist(p, &c.center) <= 0.15));
    }

    #[test]
    fn impossible_packing_fails() {
        let err = make_discs(
            40,
            0.15,
            &GridSpec::unit(0.05),
            5,
            Seed::new(1),
            CenterLayout::Random { min_separation: 0.5 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Packing { .. }));
        assert!(make_discs(2, 0.3, &GridSpec::unit(0.05), 5, Seed::new(1), CenterLayout::Random {
            min_separation: 0.5
        })
        .is_err());
    }

    #[test]
    fn polygon_layout() {
        let ts = make_discs(
            5,
            0.15,
            &GridSpec::unit(0.05),
            10,
            Seed::new(1),
            CenterLayout::Polygon { circumradius: 0.6 },
        )
        .unwrap();
        assert!((ts.classes[0].center[0]).abs() < 1e-12);
        assert!((ts.classes[0].center[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn loss_of_identity() {
        let c = [0.2, -0.3];
        assert_eq!(loss(&identity_net(), &one_class(c, vec![c, c])).unwrap(), 0.0);
        let p = [0.5, 0.1];
        let d = dist(&p, &c);
        let l = loss(&identity_net(), &one_class(c, vec![p])).unwrap();
        assert!((l - d * d).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let c = [0.2, -0.3];
        let g = gradient(&identity_net(), &one_class(c, vec![c, c, c])).unwrap();
        assert!(g.iter().all(|v| v == 0.0));
    }

    #[test]
    fn flipped_residual_flips_output_bias_gradient() {
        // identity net: residual x − c; with reflected targets the residual is negated
        let pts = vec![[0.1, 0.2], [-0.3, 0.4]];
        let c = [0.0, 0.05];
        let a = gradient(&identity_net(), &one_class(c, pts.clone())).unwrap();
        let neg: Vec<Point> = pts.iter().map(|p| [-p[0], -p[1]]).collect();
        let b = gradient(&identity_net(), &one_class([-c[0], -c[1]], neg)).unwrap();
        for (x, y) in a.bias[0].iter().zip(&b.bias[0]) {
            assert!((x + y).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_loss() {
        let grid = GridSpec::unit(0.05);
        let ts = make_discs(2, 0.15, &grid, 8, Seed::new(2), CenterLayout::default()).unwrap();
        let mut cfg = TrainConfig::standard(Seed::new(1));
        cfg.widths = vec![2, 8, 8, 2];
        cfg.optimizer.learning_rate = 0.0;
        cfg.optimizer.max_epochs = 5;
        let trace = train(&cfg, &ts).unwrap();
        assert_eq!(trace.loss_history.len(), 6);
        assert!(trace.loss_history.iter().all(|&l| l == trace.loss_history[0]));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::standard(Seed::new(1));
        cfg.optimizer.max_epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::standard(Seed::new(1));
        cfg.optimizer.learning_rate = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::standard(Seed::new(1));
        cfg.widths = vec![2, 10, 3];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        let ts = one_class([0.0, 0.0], vec![[0.5, 0.5], [0.0, 0.0]]);
        let net = Network::new(vec![
            Layer::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], ActivationKind::Identity)
                .unwrap(),
        ])
        .unwrap();
        let mut cfg = TrainConfig::standard(Seed::new(1));
        cfg.widths = vec![2, 2];
        cfg.activation = ActivationKind::Identity;
        cfg.optimizer.learning_rate = 50.0;
        cfg.optimizer.batch_size = 2;
        cfg.optimizer.max_epochs = 100;
        match train_from(net, &cfg, &ts) {
            Err(Error::Divergence { trace, epoch, .. }) => {
                assert_eq!(trace.loss_history.len(), epoch + 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
