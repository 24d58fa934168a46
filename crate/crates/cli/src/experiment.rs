//! One function per experiment family, each returning its artifacts.

use serde_json::json;

use fpnet::contraction::{
    beta_sweep, contraction_constant, depth_curve, preactivation_variance, PairBudget,
    SweepOptions,
};
use fpnet::fixpoint::{find_fixed_points, FixedPointReport};
use fpnet::init::{init_network, Seed};
use fpnet::sweep::{run_sweep, summarize};
use fpnet::train::{make_discs, train, verify_trained};

use crate::artifacts::{self, Artifacts};
use crate::config::{seeds, Command, ExperimentConfig};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    match cfg.command {
        Command::Basins => basins(cfg),
        Command::SweepDepth => sweep_depth(cfg),
        Command::BetaSweep => beta(cfg),
        Command::DepthCurve => depth(cfg),
        Command::TrainVerify => train_verify(cfg),
        Command::VarianceCheck => variance(cfg),
    }
}

fn fixed_point_summary(report: &FixedPointReport) -> serde_json::Value {
    json!({
        "q": report.q(),
        "unresolved_fraction": report.unresolved_fraction(),
        "fixed_points": report.fixed_points,
    })
}

fn push_basins(out: &mut Artifacts, report: &FixedPointReport) -> Result<()> {
    out.push("basins.csv", artifacts::basins_csv(report)?);
    out.push("basins.pgm", artifacts::basins_pgm(report));
    out.push("fixed_points.csv", artifacts::fixed_points_csv(report)?);
    Ok(())
}

fn basins(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let b = &cfg.basins;
    let seed = Seed::derive(cfg.master_seed, b.seed_index);
    let net = init_network(&b.widths, b.activation, &b.init, seed)?;
    let report = find_fixed_points(
        &net,
        &cfg.grid,
        &cfg.iteration.policy(),
        cfg.iteration.cluster_radius,
    )?;
    let g = contraction_constant(&net, &cfg.grid, PairBudget::All)?;
    let mut out = Artifacts::default();
    let mut summary = fixed_point_summary(&report);
    summary["contraction_constant"] = json!(g);
    out.json("fixed_points.json", &summary)?;
    push_basins(&mut out, &report)?;
    out.push("network.json", net.to_json()?.into_bytes());
    Ok(out)
}

fn sweep_depth(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let report = run_sweep(&cfg.sweep_config())?;
    let rows = summarize(&report)?;
    let mut out = Artifacts::default();
    out.push("sweep_summary.csv", artifacts::sweep_csv(&rows)?);
    out.json("sweep_archive.json", &report)?;
    Ok(out)
}

fn beta(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let b = &cfg.beta_sweep;
    let opts = SweepOptions {
        pairs: b.pairs,
        zero_bias: b.zero_bias,
    };
    let curve = beta_sweep(
        &b.widths(),
        b.activation,
        &b.betas(),
        &seeds(cfg.master_seed, b.n_seeds),
        &cfg.grid,
        opts,
    )?;
    let mut out = Artifacts::default();
    out.push("contraction_curve.csv", artifacts::curve_csv("beta", &curve.samples, |s| s.beta)?);
    out.json(
        "beta_sweep.json",
        &json!({
            "widths": b.widths(),
            "activation": b.activation,
            "mean_g": curve.mean_g,
            "beta_cr": curve.beta_cr,
            "diagnostic": curve.diagnostic,
        }),
    )?;
    Ok(out)
}

fn depth(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let d = &cfg.depth_curve;
    let opts = SweepOptions {
        pairs: d.pairs,
        zero_bias: d.zero_bias,
    };
    let curve = depth_curve(
        d.width_n,
        d.activation,
        d.beta,
        &d.depths,
        &seeds(cfg.master_seed, d.n_seeds),
        &cfg.grid,
        opts,
    )?;
    let mut out = Artifacts::default();
    out.push(
        "contraction_curve.csv",
        artifacts::curve_csv("L", &curve.samples, |s| s.depth_l as f64)?,
    );
    out.json(
        "depth_curve.json",
        &json!({
            "width_n": d.width_n,
            "beta": d.beta,
            "activation": d.activation,
            "mean_g": curve.mean_g,
            "fit": curve.fit,
        }),
    )?;
    Ok(out)
}

fn train_verify(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let t = &cfg.train_verify;
    let tc = cfg.train_config();
    let ts = make_discs(t.classes, t.radius, &cfg.grid, t.points_per_class, tc.seed, t.layout)?;
    let trace = train(&tc, &ts)?;
    let report = verify_trained(
        &trace.network,
        &ts,
        &cfg.grid,
        &cfg.iteration.policy(),
        cfg.iteration.cluster_radius,
    )?;
    let mut out = Artifacts::default();
    out.json("training_set.json", &ts)?;
    out.push("loss.csv", artifacts::loss_csv(&trace)?);
    out.push("network.json", trace.network.to_json()?.into_bytes());
    out.json("fixed_points.json", &fixed_point_summary(&report.fixed_points))?;
    push_basins(&mut out, &report.fixed_points)?;
    out.json(
        "verification.json",
        &json!({
            "q": report.q,
            "k": report.k,
            "success": report.success(t.tolerance),
            "tolerance": t.tolerance,
            "centers_matched": report.centers_matched(t.tolerance),
            "captured_fraction": report.captured_fraction(),
            "classes": report.classes,
            "epochs": trace.epochs(),
            "stop": trace.stop,
            "initial_loss": trace.initial_loss(),
            "final_loss": trace.final_loss(),
        }),
    )?;
    Ok(out)
}

fn variance(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let v = &cfg.variance_check;
    let x = v.input();
    let stats = preactivation_variance(v.width_n, v.sigma, &seeds(cfg.master_seed, v.n_seeds), &x)?;
    let norm2: f64 = x.iter().map(|x| x * x).sum();
    let expected = (norm2 + 1.0) * v.sigma * v.sigma;
    let mut out = Artifacts::default();
    out.json(
        "variance.json",
        &json!({
            "width_n": v.width_n,
            "sigma": v.sigma,
            "samples": stats.samples,
            "variance": stats.preactivation_variance,
            "expected": expected,
            "relative_error": (stats.preactivation_variance - expected).abs() / expected,
        }),
    )?;
    Ok(out)
}
