//! Result files: CSV tables, JSON documents and PGM basin rasters.

use serde::Serialize;

use fpnet::contraction::ContractionSample;
use fpnet::fixpoint::{FixedPointReport, Status};
use fpnet::sweep::SummaryRow;
use fpnet::train::TrainTrace;

/// Named file contents, written only after the whole experiment succeeded.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn push(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), serde_json::Error> {
        self.push(name, to_json(value)?);
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn finish(w: csv::Writer<Vec<u8>>) -> csv::Result<Vec<u8>> {
    w.into_inner().map_err(|e| e.into_error().into())
}

/// `j,l,x,y,label,steps,status` per grid start; `label` is −1 when unresolved.
pub fn basins_csv(report: &FixedPointReport) -> csv::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["j", "l", "x", "y", "label", "steps", "status"])?;
    for (i, (label, r)) in report.labels.iter().zip(&report.results).enumerate() {
        let (j, l) = report.grid.index_to_jl(i);
        let p = report.grid.point(i);
        let label = label.map_or(-1, |k| k as i64);
        let status = match r.status {
            Status::Converged => "converged",
            Status::Unresolved => "unresolved",
        };
        w.serialize((j, l, p[0], p[1], label, r.steps, status))?;
    }
    finish(w)
}

/// Plain (P2) graymap with one pixel per grid start, `y` increasing upward.
/// Unresolved starts are 0 and basin `k` is `k + 1`.
pub fn basins_pgm(report: &FixedPointReport) -> Vec<u8> {
    let n = report.grid.points_per_axis();
    let maxval = report.q().max(1);
    let mut out = format!("P2\n{n} {n}\n{maxval}\n");
    for l in (0..n).rev() {
        let row: Vec<String> = (0..n)
            .map(|j| {
                let label = report.labels[report.grid.jl_to_index(j, l)];
                label.map_or(0, |k| k + 1).to_string()
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

/// `x,y,residual,basin_size,out_of_domain,unstable_suspect` per fixed point.
pub fn fixed_points_csv(report: &FixedPointReport) -> csv::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "residual", "basin_size", "out_of_domain", "unstable_suspect"])?;
    for f in &report.fixed_points {
        w.serialize((
            f.point[0],
            f.point[1],
            f.residual,
            f.basin_size,
            f.out_of_domain,
            f.unstable_suspect,
        ))?;
    }
    finish(w)
}

/// `<key>,seed,g` with `key` chosen by `pick` (β or L).
pub fn curve_csv<F>(key: &str, samples: &[ContractionSample], pick: F) -> csv::Result<Vec<u8>>
where
    F: Fn(&ContractionSample) -> f64,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([key, "seed", "g"])?;
    for s in samples {
        w.serialize((pick(s), s.seed.value, s.g))?;
    }
    finish(w)
}

pub fn sweep_csv(rows: &[SummaryRow]) -> csv::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["L", "mode", "mean", "histogram", "unresolved_fraction"])?;
    for r in rows {
        w.serialize((r.depth, r.mode, r.mean, &r.histogram, r.unresolved_fraction))?;
    }
    finish(w)
}

pub fn loss_csv(trace: &TrainTrace) -> csv::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss"])?;
    for (e, l) in trace.loss_history.iter().enumerate() {
        w.serialize((e, l))?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fpnet::fixpoint::{find_fixed_points, GridSpec, IterationPolicy};
    use fpnet::net::{ActivationKind, Layer, Network};

    fn zero_report() -> FixedPointReport {
        let net = Network::new(vec![Layer::zeros(2, 2, ActivationKind::Tanh).unwrap()]).unwrap();
        find_fixed_points(&net, &GridSpec::unit(1.0), &IterationPolicy::default(), 1e-3).unwrap()
    }

    #[test]
    fn basins_csv_has_one_row_per_start() {
        let text = String::from_utf8(basins_csv(&zero_report()).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "j,l,x,y,label,steps,status");
        assert_eq!(lines.len(), 1 + 9);
        assert_eq!(lines[1], "0,0,-1.0,-1.0,0,2,converged");
    }

    #[test]
    fn pgm_header_and_levels() {
        let text = String::from_utf8(basins_pgm(&zero_report())).unwrap();
        assert_eq!(text, "P2\n3 3\n1\n1 1 1\n1 1 1\n1 1 1\n");
    }

    #[test]
    fn fixed_points_table() {
        let text = String::from_utf8(fixed_points_csv(&zero_report()).unwrap()).unwrap();
        assert_eq!(text.lines().nth(1), Some("0.0,0.0,0.0,9,false,false"));
    }
}
