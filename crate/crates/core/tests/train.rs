use fpnet::fixpoint::{dist, GridSpec, IterationPolicy, Point};
use fpnet::init::{init_network, DistributionSpec, ScaleRule, Seed};
use fpnet::net::{ActivationKind, Layer, Network};
use fpnet::train::{
    gradient, loss, make_discs, train, verify_trained, CenterLayout, DiscClass, StopReason,
    TrainConfig, TrainingSet,
};
use proptest::prelude::*;

/// Rebuilds `net` with one parameter shifted by `h`; `index` runs over the
/// weights then the bias of each layer, as in [`fpnet::train::Gradient::iter`].
fn nudge(net: &Network, mut index: usize, h: f64) -> Network {
    let layers = net
        .layers()
        .iter()
        .map(|layer| {
            let mut w = layer.weights().to_vec();
            let mut b = layer.bias().to_vec();
            if index < w.len() {
                w[index] += h;
                index = usize::MAX;
            } else if index != usize::MAX {
                index -= w.len();
                if index < b.len() {
                    b[index] += h;
                    index = usize::MAX;
                } else {
                    index -= b.len();
                }
            }
            Layer::new(w, layer.cols(), b, layer.activation()).unwrap()
        })
        .collect();
    Network::new(layers).unwrap()
}

/// Summed squared error by direct iteration over classes and points.
fn loss_oracle(net: &Network, ts: &TrainingSet) -> f64 {
    let mut total = 0.0;
    for class in &ts.classes {
        for p in &class.points {
            let y = net.forward(p).unwrap();
            total += (y[0] - class.center[0]).powi(2) + (y[1] - class.center[1]).powi(2);
        }
    }
    total
}

/// Whether any pre-activation of `net` on the training set is within `margin`
/// of a HardTanh kink.
fn near_kink(net: &Network, ts: &TrainingSet, margin: f64) -> bool {
    ts.samples().iter().any(|(x, _)| {
        let mut a = x.to_vec();
        net.layers().iter().any(|layer| {
            let z: Vec<f64> = (0..layer.rows())
                .map(|i| layer.bias()[i] + layer.row(i).iter().zip(&a).map(|(w, v)| w * v).sum::<f64>())
                .collect();
            let hit = layer.activation() == ActivationKind::HardTanh
                && z.iter().any(|v| (v.abs() - 1.0).abs() < margin);
            a = z.iter().map(|&v| layer.activation().apply(v)).collect();
            hit
        })
    })
}

fn small_set(seed: u64) -> TrainingSet {
    make_discs(2, 0.15, &GridSpec::unit(0.05), 6, Seed::new(seed), CenterLayout::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn gradient_matches_central_differences(
        seed in any::<u64>(),
        act in prop::sample::select(vec![ActivationKind::Tanh, ActivationKind::HardTanh, ActivationKind::Sigmoid]),
    ) {
        let d = DistributionSpec::gauss(ScaleRule::Fixed { value: 0.4 });
        let net = init_network(&[2, 6, 5, 2], act, &d, Seed::new(seed)).unwrap();
        let ts = small_set(seed ^ 0x55);
        prop_assume!(!near_kink(&net, &ts, 1e-4));
        let grad: Vec<f64> = gradient(&net, &ts).unwrap().iter().collect();
        prop_assert_eq!(grad.len(), net.parameter_count());
        let h = 1e-6;
        for (i, &g) in grad.iter().enumerate() {
            let fd = (loss(&nudge(&net, i, h), &ts).unwrap() - loss(&nudge(&net, i, -h), &ts).unwrap()) / (2.0 * h);
            let scale = g.abs().max(fd.abs()).max(1e-3);
            prop_assert!((g - fd).abs() / scale < 1e-4, "param {}: {} vs {}", i, g, fd);
        }
    }

    #[test]
    fn loss_matches_summation_oracle(seed in any::<u64>(), k in 1usize..5, per in 1usize..20) {
        let ts = make_discs(k, 0.1, &GridSpec::unit(0.05), per, Seed::new(seed), CenterLayout::default()).unwrap();
        let d = DistributionSpec::cauchy(ScaleRule::PerLayerInverseWidth);
        let net = init_network(&[2, 30, 2], ActivationKind::Tanh, &d, Seed::new(seed)).unwrap();
        let got = loss(&net, &ts).unwrap();
        let want = loss_oracle(&net, &ts);
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{} vs {}", got, want);
    }
}

fn quick_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::standard(Seed::new(seed));
    cfg.widths = vec![2, 12, 2];
    cfg.activation = ActivationKind::Tanh;
    cfg.optimizer.max_epochs = 40;
    cfg.optimizer.batch_size = 4;
    cfg
}

#[test]
fn training_is_deterministic() {
    let ts = small_set(9);
    let a = train(&quick_config(4), &ts).unwrap();
    let b = train(&quick_config(4), &ts).unwrap();
    assert_eq!(a, b);
    let c = train(&quick_config(5), &ts).unwrap();
    assert_ne!(a.network, c.network);
}

#[test]
fn training_is_worker_count_independent() {
    let ts = small_set(9);
    let one = fpnet::par::with_workers(1, || train(&quick_config(4), &ts).unwrap());
    let many = fpnet::par::with_workers(4, || train(&quick_config(4), &ts).unwrap());
    assert_eq!(one, many);
}

#[test]
fn single_point_class_is_learned() {
    let center: Point = [0.3, -0.2];
    let ts = TrainingSet {
        classes: vec![DiscClass {
            center,
            radius: 0.0,
            points: vec![center; 8],
        }],
    };
    let mut cfg = quick_config(2);
    cfg.optimizer.max_epochs = 3000;
    cfg.optimizer.learning_rate = 0.1;
    cfg.optimizer.target_loss = 1e-8;
    let trace = train(&cfg, &ts).unwrap();
    assert_eq!(trace.stop, StopReason::TargetLoss);
    assert!(trace.final_loss() <= 1e-8);
    let y = trace.network.forward(&center).unwrap();
    assert!(dist(&[y[0], y[1]], &center) < 1e-4);
}

#[test]
fn loss_decreases_under_small_steps() {
    let ts = small_set(3);
    let mut cfg = quick_config(6);
    cfg.optimizer.learning_rate = 0.01;
    cfg.optimizer.batch_size = ts.len();
    let trace = train(&cfg, &ts).unwrap();
    assert!(trace.final_loss() < trace.initial_loss());
    for w in trace.loss_history.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn untrained_gaussian_net_fails_verification() {
    let grid = GridSpec::unit(0.05);
    let ts = make_discs(5, 0.15, &grid, 20, Seed::new(1), CenterLayout::default()).unwrap();
    let d = DistributionSpec::gauss(ScaleRule::PerLayerInverseWidth);
    let net = init_network(&[2, 100, 2], ActivationKind::Tanh, &d, Seed::new(8)).unwrap();
    let v = verify_trained(&net, &ts, &grid, &IterationPolicy::default(), 1e-3).unwrap();
    assert_eq!(v.q, 1);
    assert_eq!(v.k, 5);
    assert!(!v.success(0.05));
    assert!(!v.centers_matched(0.05));
}
