use fpnet::contraction::{contraction_constant, PairBudget};
use fpnet::fixpoint::{
    cluster_points, dist, find_fixed_points, make_grid, trajectory, GridSpec, IterationPolicy,
    Status,
};
use fpnet::init::{init_network, DistributionSpec, ScaleRule, Seed};
use fpnet::net::{ActivationKind, Layer, Network};
use proptest::prelude::*;

fn diagonal(scales: [f64; 2], bias: [f64; 2], act: ActivationKind) -> Network {
    Network::new(vec![Layer::from_rows(
        &[vec![scales[0], 0.0], vec![0.0, scales[1]]],
        bias.to_vec(),
        act,
    )
    .unwrap()])
    .unwrap()
}

/// Iterates `t ↦ clamp(2t + 0.07)` on one axis with the same stopping rule.
fn scalar_limit(mut t: f64, policy: &IterationPolicy) -> Option<f64> {
    for _ in 0..policy.max_iters {
        let next = (2.0 * t + 0.07).clamp(-1.0, 1.0);
        let done = (next - t).abs();
        t = next;
        if done < policy.epsilon {
            return Some(t);
        }
    }
    None
}

#[test]
fn diagonal_hardtanh_has_four_corner_attractors() {
    let net = diagonal([2.0, 2.0], [0.07, 0.07], ActivationKind::HardTanh);
    let spec = GridSpec::unit(0.05);
    let policy = IterationPolicy::default();
    let report = find_fixed_points(&net, &spec, &policy, 1e-3).unwrap();
    assert_eq!(report.q(), 4);
    let mut corners = report.points();
    corners.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(corners, vec![[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]);
    assert!(report.fixed_points.iter().all(|f| !f.unstable_suspect));

    // every start lands on the corner the per-axis scalar iteration predicts
    for (i, start) in make_grid(&spec).unwrap().into_iter().enumerate() {
        let want = [
            scalar_limit(start[0], &policy).unwrap(),
            scalar_limit(start[1], &policy).unwrap(),
        ];
        let label = report.labels[i].expect("every start converges");
        assert_eq!(report.fixed_points[label].point, want, "start {start:?}");
        // the repelling point of t ↦ 2t + 0.07 is t = −0.07
        assert_eq!(want[0], if start[0] > -0.07 { 1.0 } else { -1.0 });
    }
}

#[test]
fn gaussian_shallow_net_converges_everywhere_near_origin() {
    let d = DistributionSpec::gauss(ScaleRule::PerLayerInverseWidth);
    let net = init_network(&[2, 100, 2], ActivationKind::Tanh, &d, Seed::derive(3, 0)).unwrap();
    let report = find_fixed_points(&net, &GridSpec::unit(0.05), &IterationPolicy::default(), 1e-3).unwrap();
    assert_eq!(report.unresolved_count(), 0);
    assert_eq!(report.q(), 1);
    assert!(dist(&report.fixed_points[0].point, &[0.0, 0.0]) < 0.1);
}

#[test]
fn period_two_orbits_are_unresolved_and_not_counted() {
    let net = diagonal([-1.0, -1.0], [0.0, 0.0], ActivationKind::Identity);
    let report = find_fixed_points(&net, &GridSpec::unit(0.5), &IterationPolicy::default(), 1e-3).unwrap();
    assert_eq!(report.q(), 1);
    assert_eq!(report.fixed_points[0].point, [0.0, 0.0]);
    assert_eq!(report.unresolved_count(), 24);
    assert!(report
        .results
        .iter()
        .filter(|r| r.status == Status::Unresolved)
        .all(|r| r.steps == 50));
}

#[test]
fn labels_do_not_depend_on_worker_count() {
    let d = DistributionSpec::cauchy(ScaleRule::PerLayerInverseWidth);
    let net = init_network(&[2, 100, 100, 2], ActivationKind::Tanh, &d, Seed::derive(1, 4)).unwrap();
    let run = |jobs| {
        fpnet::par::with_workers(jobs, || {
            find_fixed_points(&net, &GridSpec::unit(0.05), &IterationPolicy::default(), 1e-3).unwrap()
        })
    };
    assert_eq!(run(1), run(4));
}

fn random_net() -> impl Strategy<Value = Network> {
    (
        prop::sample::select(vec![1usize, 2, 3]),
        prop::sample::select(vec![ActivationKind::Tanh, ActivationKind::HardTanh]),
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(hidden, act, cauchy, seed)| {
            let mut widths = vec![2];
            widths.extend(std::iter::repeat_n(30, hidden));
            widths.push(2);
            let d = if cauchy {
                DistributionSpec::cauchy(ScaleRule::PerLayerInverseWidth)
            } else {
                DistributionSpec::gauss(ScaleRule::PerLayerInverseWidth)
            };
            init_network(&widths, act, &d, Seed::new(seed)).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn reported_fixed_points_have_small_residual(net in random_net()) {
        let policy = IterationPolicy::default();
        let report = find_fixed_points(&net, &GridSpec::unit(0.2), &policy, 1e-3).unwrap();
        for f in &report.fixed_points {
            let y = net.forward(&f.point).unwrap();
            let r = dist(&[y[0], y[1]], &f.point);
            prop_assert!(r <= 10.0 * policy.epsilon, "residual {}", r);
            prop_assert_eq!(r, f.residual);
        }
    }

    #[test]
    fn labels_partition_the_converged_starts(net in random_net()) {
        let report = find_fixed_points(&net, &GridSpec::unit(0.2), &IterationPolicy::default(), 1e-3).unwrap();
        let mut sizes = vec![0; report.q()];
        for (label, r) in report.labels.iter().zip(&report.results) {
            prop_assert_eq!(label.is_some(), r.status == Status::Converged);
            if let Some(k) = label {
                sizes[*k] += 1;
            }
        }
        for (f, s) in report.fixed_points.iter().zip(&sizes) {
            prop_assert_eq!(f.basin_size, *s);
            prop_assert!(*s > 0);
        }
        let fps = report.points();
        for (i, a) in fps.iter().enumerate() {
            for b in &fps[i + 1..] {
                prop_assert!(dist(a, b) > report.cluster_radius);
            }
        }
    }

    #[test]
    fn contractive_maps_have_one_attractor(seed in any::<u64>(), beta in 0.8f64..1.5) {
        let d = DistributionSpec::gauss(ScaleRule::PowerLaw { beta });
        let net = init_network(&[2, 50, 2], ActivationKind::Tanh, &d, Seed::new(seed)).unwrap();
        let spec = GridSpec::unit(0.1);
        let g = contraction_constant(&net, &spec, PairBudget::All).unwrap();
        prop_assume!(g < 1.0);
        let report = find_fixed_points(&net, &spec, &IterationPolicy::default(), 1e-3).unwrap();
        prop_assert_eq!(report.q(), 1);
        prop_assert_eq!(report.unresolved_count(), 0);
    }

    #[test]
    fn steps_shrink_by_at_least_g(
        s0 in -0.95f64..0.95,
        s1 in -0.95f64..0.95,
        b0 in -0.5f64..0.5,
        b1 in -0.5f64..0.5,
        start in prop::array::uniform2(-1.0f64..1.0),
    ) {
        let net = diagonal([s0, s1], [b0, b1], ActivationKind::HardTanh);
        let g = contraction_constant(&net, &GridSpec::unit(0.05), PairBudget::All).unwrap();
        let path = trajectory(&net, start, &IterationPolicy::default()).unwrap();
        for w in path.windows(3) {
            let (prev, next) = (dist(&w[1], &w[0]), dist(&w[2], &w[1]));
            prop_assert!(next <= g * prev + 1e-9, "{} > {} * {}", next, g, prev);
        }
    }

    #[test]
    fn clustering_ignores_enumeration_order(
        points in prop::collection::vec(prop::array::uniform2(-1.0f64..1.0), 1..60),
        shuffle_seed in any::<u64>(),
    ) {
        let mut shuffled = points.clone();
        Seed::new(shuffle_seed).rng().shuffle(&mut shuffled);
        let (_, mut a) = cluster_points(&points, 0.05);
        let (_, mut b) = cluster_points(&shuffled, 0.05);
        a.sort_by(|p, q| p.partial_cmp(q).unwrap());
        b.sort_by(|p, q| p.partial_cmp(q).unwrap());
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            prop_assert!(dist(p, q) < 1e-12);
        }
    }
}
