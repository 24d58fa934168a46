//! Grid-seeded fixed-point iteration, clustering of limits and basin labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Network, Workspace};
use crate::par;

pub type Point = [f64; 2];

#[inline]
pub fn dist(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// The square `[lower, upper]²` sampled with step `delta` along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default = "GridSpec::default_lower")]
    pub lower: f64,
    #[serde(default = "GridSpec::default_upper")]
    pub upper: f64,
    pub delta: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::unit(0.05)
    }
}

impl GridSpec {
    fn default_lower() -> f64 {
        -1.0
    }

    fn default_upper() -> f64 {
        1.0
    }

    /// `Ω = [−1, 1]²` with the given step.
    pub fn unit(delta: f64) -> Self {
        GridSpec {
            lower: -1.0,
            upper: 1.0,
            delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let span = self.upper - self.lower;
        if !(self.lower.is_finite() && self.upper.is_finite() && span > 0.0) {
            return Err(Error::param(format!(
                "GridSpec: bounds [{}, {}] are not a proper interval",
                self.lower, self.upper
            )));
        }
        if !(self.delta > 0.0 && self.delta <= span) {
            return Err(Error::param(format!(
                "GridSpec: delta must lie in (0, {span}], got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// `⌊(upper − lower)/δ⌋ + 1`, with a tolerance of 1e-9 steps so that
    /// steps like 0.05 that are not exact binary fractions still land on the
    /// upper bound.
    pub fn points_per_axis(&self) -> usize {
        ((self.upper - self.lower) / self.delta + 1e-9).floor() as usize + 1
    }

    pub fn len(&self) -> usize {
        let n = self.points_per_axis();
        n * n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn coord(&self, j: usize) -> f64 {
        (self.lower + self.delta * j as f64).min(self.upper)
    }

    /// Grid index `(j, l)` of flat index `i`; `j` indexes x and varies slowest.
    #[inline]
    pub fn index_to_jl(&self, i: usize) -> (usize, usize) {
        let n = self.points_per_axis();
        (i / n, i % n)
    }

    #[inline]
    pub fn jl_to_index(&self, j: usize, l: usize) -> usize {
        j * self.points_per_axis() + l
    }

    #[inline]
    pub fn point(&self, i: usize) -> Point {
        let (j, l) = self.index_to_jl(i);
        [self.coord(j), self.coord(l)]
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.iter().all(|&v| v >= self.lower && v <= self.upper)
    }
}

/// All grid points `x_{j,l} = (lower + δj, lower + δl)` in row-major `(j, l)` order.
pub fn make_grid(spec: &GridSpec) -> Result<Vec<Point>> {
    spec.validate()?;
    Ok((0..spec.len()).map(|i| spec.point(i)).collect())
}

/// Stopping rule for the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationPolicy {
    pub epsilon: f64,
    pub max_iters: usize,
}

impl Default for IterationPolicy {
    fn default() -> Self {
        IterationPolicy {
            epsilon: 1e-5,
            max_iters: 50,
        }
    }
}

impl IterationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param(format!(
                "IterationPolicy: epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::param("IterationPolicy: max_iters must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Converged,
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    pub start: Point,
    pub status: Status,
    /// The last iterate. Only meaningful as a fixed point when converged.
    pub limit: Point,
    pub steps: usize,
}

impl IterationResult {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

/// Iterates without re-checking shapes; `net` must map ℝ² → ℝ².
pub(crate) fn iterate_unchecked(
    net: &Network,
    start: Point,
    policy: &IterationPolicy,
    ws: &mut Workspace,
) -> IterationResult {
    let mut x = start;
    for m in 1..=policy.max_iters {
        let y = net.eval(&x, ws);
        let next = [y[0], y[1]];
        if !(next[0].is_finite() && next[1].is_finite()) {
            return IterationResult {
                start,
                status: Status::Unresolved,
                limit: next,
                steps: m,
            };
        }
        let step = dist(&next, &x);
        x = next;
        if step < policy.epsilon {
            return IterationResult {
                start,
                status: Status::Converged,
                limit: x,
                steps: m,
            };
        }
    }
    IterationResult {
        start,
        status: Status::Unresolved,
        limit: x,
        steps: policy.max_iters,
    }
}

/// Runs `x^{m+1} = Φ(x^m)` from `start` until successive iterates are closer
/// than `epsilon` or `max_iters` maps have been applied. Iterates are not
/// projected back into the grid domain.
pub fn iterate(net: &Network, start: Point, policy: &IterationPolicy) -> Result<IterationResult> {
    net.check_autoencoder(2)?;
    policy.validate()?;
    Ok(iterate_unchecked(net, start, policy, &mut Workspace::default()))
}

/// Like [`iterate`] but keeps every iterate, `x^1 = start` first.
pub fn trajectory(net: &Network, start: Point, policy: &IterationPolicy) -> Result<Vec<Point>> {
    net.check_autoencoder(2)?;
    policy.validate()?;
    let mut ws = Workspace::default();
    let mut path = vec![start];
    let mut x = start;
    for _ in 0..policy.max_iters {
        let y = net.eval(&x, &mut ws);
        let next = [y[0], y[1]];
        path.push(next);
        if !(next[0].is_finite() && next[1].is_finite()) || dist(&next, &x) < policy.epsilon {
            break;
        }
        x = next;
    }
    Ok(path)
}

/// One detected attractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub point: Point,
    /// `‖Φ(x*) − x*‖₂`.
    pub residual: f64,
    /// Number of grid points labeled to this basin.
    pub basin_size: usize,
    pub out_of_domain: bool,
    /// Supported by a single grid point none of whose grid neighbours share
    /// its label; likely a repelling point hit exactly by the grid.
    pub unstable_suspect: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub grid: GridSpec,
    pub policy: IterationPolicy,
    pub cluster_radius: f64,
    pub fixed_points: Vec<FixedPoint>,
    /// Per grid point, index into `fixed_points`; `None` when unresolved.
    pub labels: Vec<Option<usize>>,
    pub results: Vec<IterationResult>,
}

impl FixedPointReport {
    /// Number of distinct fixed points `Q`.
    pub fn q(&self) -> usize {
        self.fixed_points.len()
    }

    pub fn unresolved_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    pub fn unresolved_fraction(&self) -> f64 {
        self.unresolved_count() as f64 / self.labels.len().max(1) as f64
    }

    pub fn points(&self) -> Vec<Point> {
        self.fixed_points.iter().map(|f| f.point).collect()
    }

    /// Grid indices labeled to basin `k`.
    pub fn basin(&self, k: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| (*l == Some(k)).then_some(i))
            .collect()
    }
}

/// Default clustering threshold for merging iteration limits.
pub const DEFAULT_CLUSTER_RADIUS: f64 = 1e-3;

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins so the result does not depend on call order.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn lex_cmp(a: &Point, b: &Point) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Single-linkage clustering of `points` with threshold `radius`.
///
/// Returns the cluster index of every input point and the cluster centroids.
/// Clusters are numbered by their lexicographically smallest member, so the
/// output does not depend on the input order. Clusters whose centroids end up
/// within `radius` of each other are merged.
pub fn cluster_points(points: &[Point], radius: f64) -> (Vec<usize>, Vec<Point>) {
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]));
    // positions in sorted order
    let mut ds = DisjointSet::new(n);
    for a in 0..n {
        let pa = points[order[a]];
        for b in a + 1..n {
            let pb = points[order[b]];
            if pb[0] - pa[0] > radius {
                break;
            }
            if dist(&pa, &pb) <= radius {
                ds.union(a, b);
            }
        }
    }
    loop {
        let mut root_to_cluster = vec![usize::MAX; n];
        let mut sums: Vec<(f64, f64, usize)> = Vec::new();
        let mut assign_sorted = vec![0; n];
        for a in 0..n {
            let r = ds.find(a);
            if root_to_cluster[r] == usize::MAX {
                root_to_cluster[r] = sums.len();
                sums.push((0.0, 0.0, 0));
            }
            let c = root_to_cluster[r];
            let p = points[order[a]];
            sums[c].0 += p[0];
            sums[c].1 += p[1];
            sums[c].2 += 1;
            assign_sorted[a] = c;
        }
        let centroids: Vec<Point> = sums
            .iter()
            .map(|&(sx, sy, k)| [sx / k as f64, sy / k as f64])
            .collect();
        // first sorted member of each cluster, to merge by representatives
        let mut first_member = vec![usize::MAX; centroids.len()];
        for a in 0..n {
            let c = assign_sorted[a];
            if first_member[c] == usize::MAX {
                first_member[c] = a;
            }
        }
        let mut merged = false;
        for c1 in 0..centroids.len() {
            for c2 in c1 + 1..centroids.len() {
                if dist(&centroids[c1], &centroids[c2]) <= radius {
                    ds.union(first_member[c1], first_member[c2]);
                    merged = true;
                }
            }
        }
        if !merged {
            let mut assign = vec![0; n];
            for a in 0..n {
                assign[order[a]] = assign_sorted[a];
            }
            return (assign, centroids);
        }
    }
}

fn check_inputs(net: &Network, spec: &GridSpec, policy: &IterationPolicy) -> Result<()> {
    net.check_autoencoder(2)?;
    spec.validate()?;
    policy.validate()
}

/// Points iterated together in one batch.
const BLOCK: usize = 32;

/// Iterates every start in `starts` in lockstep. Per point the arithmetic and
/// stopping rule are exactly those of [`iterate`].
pub(crate) fn iterate_many(
    net: &Network,
    starts: &[Point],
    policy: &IterationPolicy,
    ws: &mut Workspace,
) -> Vec<IterationResult> {
    let mut results: Vec<Option<IterationResult>> = vec![None; starts.len()];
    let mut active: Vec<usize> = (0..starts.len()).collect();
    let mut xs: Vec<f64> = starts.iter().flat_map(|p| p.iter().copied()).collect();
    for m in 1..=policy.max_iters {
        if active.is_empty() {
            break;
        }
        let ys = net.eval_batch(&xs, active.len(), ws);
        let mut keep = 0;
        for (slot, &idx) in active.clone().iter().enumerate() {
            let prev = [xs[2 * slot], xs[2 * slot + 1]];
            let next = [ys[2 * slot], ys[2 * slot + 1]];
            let done = if !(next[0].is_finite() && next[1].is_finite()) {
                Some(Status::Unresolved)
            } else if dist(&next, &prev) < policy.epsilon {
                Some(Status::Converged)
            } else if m == policy.max_iters {
                Some(Status::Unresolved)
            } else {
                None
            };
            match done {
                Some(status) => {
                    results[idx] = Some(IterationResult {
                        start: starts[idx],
                        status,
                        limit: next,
                        steps: m,
                    });
                }
                None => {
                    active[keep] = idx;
                    xs[2 * keep] = next[0];
                    xs[2 * keep + 1] = next[1];
                    keep += 1;
                }
            }
        }
        active.truncate(keep);
        xs.truncate(2 * keep);
    }
    results
        .into_iter()
        .map(|r| r.expect("every start finishes within max_iters"))
        .collect()
}

/// Iterates from every grid point in parallel; results are in grid order.
pub fn iterate_grid(
    net: &Network,
    spec: &GridSpec,
    policy: &IterationPolicy,
) -> Result<Vec<IterationResult>> {
    check_inputs(net, spec, policy)?;
    let n = spec.len();
    let blocks = par::map_indexed(n.div_ceil(BLOCK), |b| {
        let starts: Vec<Point> = (b * BLOCK..((b + 1) * BLOCK).min(n))
            .map(|i| spec.point(i))
            .collect();
        iterate_many(net, &starts, policy, &mut Workspace::new())
    });
    Ok(blocks.into_iter().flatten().collect())
}

/// Runs the iteration from every grid point, clusters the converged limits
/// and labels each grid point with the basin its limit belongs to.
pub fn find_fixed_points(
    net: &Network,
    spec: &GridSpec,
    policy: &IterationPolicy,
    cluster_radius: f64,
) -> Result<FixedPointReport> {
    if !(cluster_radius > 0.0 && cluster_radius.is_finite()) {
        return Err(Error::param(format!(
            "cluster_radius must be positive, got {cluster_radius}"
        )));
    }
    let results = iterate_grid(net, spec, policy)?;
    Ok(report_from_results(net, spec, policy, cluster_radius, results))
}

pub(crate) fn report_from_results(
    net: &Network,
    spec: &GridSpec,
    policy: &IterationPolicy,
    cluster_radius: f64,
    results: Vec<IterationResult>,
) -> FixedPointReport {
    let converged: Vec<usize> = (0..results.len())
        .filter(|&i| results[i].converged())
        .collect();
    let limits: Vec<Point> = converged.iter().map(|&i| results[i].limit).collect();
    let (assign, centroids) = cluster_points(&limits, cluster_radius);

    let mut labels = vec![None; results.len()];
    for (k, &i) in converged.iter().enumerate() {
        labels[i] = Some(assign[k]);
    }

    let n = spec.points_per_axis();
    let mut ws = Workspace::default();
    let fixed_points = centroids
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let members: Vec<usize> = converged
                .iter()
                .zip(&assign)
                .filter_map(|(&i, &a)| (a == c).then_some(i))
                .collect();
            let unstable_suspect = members.len() == 1 && {
                let (j, l) = spec.index_to_jl(members[0]);
                let neighbours = [
                    (j.wrapping_sub(1), l),
                    (j + 1, l),
                    (j, l.wrapping_sub(1)),
                    (j, l + 1),
                ];
                neighbours
                    .iter()
                    .filter(|&&(a, b)| a < n && b < n)
                    .all(|&(a, b)| labels[spec.jl_to_index(a, b)] != Some(c))
            };
            let y = net.eval(&p, &mut ws);
            FixedPoint {
                point: p,
                residual: (y[0] - p[0]).hypot(y[1] - p[1]),
                basin_size: members.len(),
                out_of_domain: !spec.contains(&p),
                unstable_suspect,
            }
        })
        .collect();

    FixedPointReport {
        grid: *spec,
        policy: *policy,
        cluster_radius,
        fixed_points,
        labels,
        results,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ActivationKind, Layer};

    fn diag_net(scale: f64, bias: f64) -> Network {
        Network::new(vec![Layer::from_rows(
            &[vec![scale, 0.0], vec![0.0, scale]],
            vec![bias, bias],
            ActivationKind::HardTanh,
        )
        .unwrap()])
        .unwrap()
    }

    fn zero_net() -> Network {
        Network::new(vec![
            Layer::zeros(4, 2, ActivationKind::Tanh).unwrap(),
            Layer::zeros(2, 4, ActivationKind::Tanh).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn grid_sizes() {
        let g = make_grid(&GridSpec::unit(1.0)).unwrap();
        assert_eq!(g.len(), 9);
        for p in &g {
            for v in p {
                assert!([-1.0, 0.0, 1.0].contains(v));
            }
        }
        let g = make_grid(&GridSpec::unit(0.05)).unwrap();
        assert_eq!(g.len(), 1681);
        assert_eq!(GridSpec::unit(0.05).points_per_axis(), 41);
        assert_eq!(g[0], [-1.0, -1.0]);
        assert_eq!(g[1680], [1.0, 1.0]);
        assert!(g.iter().all(|p| GridSpec::unit(0.05).contains(p)));
        let g = make_grid(&GridSpec::unit(2.0)).unwrap();
        assert_eq!(g, vec![[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]);
    }

    #[test]
    fn grid_rejects_bad_delta() {
        assert!(make_grid(&GridSpec::unit(0.0)).is_err());
        assert!(make_grid(&GridSpec::unit(-0.1)).is_err());
        assert!(make_grid(&GridSpec::unit(2.5)).is_err());
        assert!(make_grid(&GridSpec::unit(f64::NAN)).is_err());
    }

    #[test]
    fn zero_net_converges_in_two_steps() {
        let r = iterate(&zero_net(), [0.7, -0.3], &IterationPolicy::default()).unwrap();
        assert!(r.converged());
        assert!(r.steps <= 2);
        assert_eq!(r.limit, [0.0, 0.0]);
    }

    #[test]
    fn iterate_rejects_non_autoencoder() {
        let net = Network::new(vec![Layer::zeros(3, 2, ActivationKind::Tanh).unwrap()]).unwrap();
        assert!(matches!(
            iterate(&net, [0.0, 0.0], &IterationPolicy::default()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn cap_is_inclusive() {
        // x ↦ x/2 from 1 needs |x_m − x_{m−1}| = 2^{-m} < 1e-5, i.e. m = 17 maps.
        let net = diag_net(0.5, 0.0);
        let policy = IterationPolicy {
            epsilon: 1e-5,
            max_iters: 17,
        };
        let r = iterate(&net, [1.0, 0.0], &policy).unwrap();
        assert!(r.converged());
        assert_eq!(r.steps, 17);
        let short = IterationPolicy {
            max_iters: 16,
            ..policy
        };
        let r = iterate(&net, [1.0, 0.0], &short).unwrap();
        assert_eq!(r.status, Status::Unresolved);
        assert_eq!(r.steps, 16);
    }

    #[test]
    fn trajectory_starts_at_seed() {
        let path = trajectory(&diag_net(0.5, 0.0), [1.0, 1.0], &IterationPolicy::default()).unwrap();
        assert_eq!(path[0], [1.0, 1.0]);
        assert_eq!(path[1], [0.5, 0.5]);
    }

    #[test]
    fn batched_grid_matches_pointwise() {
        let net = Network::new(vec![
            Layer::from_rows(
                &[vec![1.7, -0.4], vec![0.3, 2.1], vec![-1.1, 0.9]],
                vec![0.1, -0.2, 0.05],
                ActivationKind::Tanh,
            )
            .unwrap(),
            Layer::from_rows(
                &[vec![1.2, -0.8, 0.5], vec![0.4, 1.5, -1.0]],
                vec![0.02, -0.03],
                ActivationKind::Tanh,
            )
            .unwrap(),
        ])
        .unwrap();
        let spec = GridSpec::unit(0.1);
        let policy = IterationPolicy::default();
        let grid = iterate_grid(&net, &spec, &policy).unwrap();
        for (i, r) in grid.iter().enumerate() {
            let single = iterate(&net, spec.point(i), &policy).unwrap();
            assert_eq!(*r, single);
        }
    }

    #[test]
    fn zero_net_single_basin() {
        let spec = GridSpec::unit(0.05);
        let rep = find_fixed_points(&zero_net(), &spec, &IterationPolicy::default(), 1e-3).unwrap();
        assert_eq!(rep.q(), 1);
        assert!(rep.labels.iter().all(|l| *l == Some(0)));
        assert_eq!(rep.fixed_points[0].point, [0.0, 0.0]);
        assert_eq!(rep.fixed_points[0].basin_size, 1681);
    }

    #[test]
    fn clustering_is_order_invariant() {
        let pts = vec![
            [0.5, 0.5],
            [0.5004, 0.5],
            [-0.2, 0.1],
            [0.5008, 0.5001],
            [-0.2, 0.1003],
            [0.9, -0.9],
        ];
        let (a1, c1) = cluster_points(&pts, 1e-3);
        assert_eq!(c1.len(), 3);
        let rev: Vec<Point> = pts.iter().rev().copied().collect();
        let (a2, c2) = cluster_points(&rev, 1e-3);
        assert_eq!(c1, c2);
        let back: Vec<usize> = a2.iter().rev().copied().collect();
        assert_eq!(a1, back);
    }

    #[test]
    fn invalid_radius() {
        let spec = GridSpec::unit(0.5);
        assert!(find_fixed_points(&zero_net(), &spec, &IterationPolicy::default(), 0.0).is_err());
    }
}
