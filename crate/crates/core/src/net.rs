//! Dense feedforward networks.
//!
//! A [`Layer`] maps `x ↦ φ(Wx + b)`; a [`Network`] composes its layers
//! input-side first. Weights are stored row-major with shape
//! `(rows, cols) = (n_{l+1}, n_l)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pointwise nonlinearity applied after the affine part of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Tanh,
    /// `max(-1, min(1, x))`.
    HardTanh,
    /// `1 / (1 + e^{-x})`.
    Sigmoid,
    /// Passthrough; used for analytic fixtures.
    Identity,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 4] = [
        ActivationKind::Tanh,
        ActivationKind::HardTanh,
        ActivationKind::Sigmoid,
        ActivationKind::Identity,
    ];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::HardTanh => x.clamp(-1.0, 1.0),
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActivationKind::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation `z`.
    ///
    /// HardTanh uses the closed interval: the derivative is 1 on `[-1, 1]`
    /// including both kinks, 0 outside.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            ActivationKind::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            ActivationKind::HardTanh => {
                if (-1.0..=1.0).contains(&z) {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            ActivationKind::Identity => 1.0,
        }
    }

    pub fn is_bounded(self) -> bool {
        !matches!(self, ActivationKind::Identity)
    }

    pub fn is_odd(self) -> bool {
        matches!(
            self,
            ActivationKind::Tanh | ActivationKind::HardTanh | ActivationKind::Identity
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Tanh => "tanh",
            ActivationKind::HardTanh => "hardtanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Identity => "identity",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(ActivationKind::Tanh),
            "hardtanh" | "hard_tanh" => Ok(ActivationKind::HardTanh),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "identity" | "linear" => Ok(ActivationKind::Identity),
            other => Err(Error::param(format!("unknown activation {other:?}"))),
        }
    }
}

/// Applies `kind` elementwise.
pub fn apply_activation(kind: ActivationKind, x: f64) -> f64 {
    kind.apply(x)
}

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Four dot products of one row against four vectors, each summed exactly
/// like [`dot`] so results are bitwise identical to four separate calls.
#[inline]
fn dot_x4(w: &[f64], x: [&[f64]; 4]) -> [f64; 4] {
    let n = w.len();
    let mut acc = [[0.0f64; 4]; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        let (w0, w1, w2, w3) = (w[i], w[i + 1], w[i + 2], w[i + 3]);
        for p in 0..4 {
            let xp = &x[p][i..i + 4];
            acc[p][0] += w0 * xp[0];
            acc[p][1] += w1 * xp[1];
            acc[p][2] += w2 * xp[2];
            acc[p][3] += w3 * xp[3];
        }
    }
    let mut out = [0.0; 4];
    for p in 0..4 {
        let mut tail = 0.0;
        for i in 4 * chunks..n {
            tail += w[i] * x[p][i];
        }
        out[p] = (acc[p][0] + acc[p][1]) + (acc[p][2] + acc[p][3]) + tail;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: ActivationKind,
}

impl Layer {
    /// Builds a layer from a row-major weight buffer of shape `(rows, cols)`
    /// where `rows = bias.len()`.
    pub fn new(
        weights: Vec<f64>,
        cols: usize,
        bias: Vec<f64>,
        activation: ActivationKind,
    ) -> Result<Self> {
        let rows = bias.len();
        if rows == 0 || cols == 0 {
            return Err(Error::param("layer dimensions must be positive"));
        }
        if weights.len() != rows * cols {
            return Err(Error::shape("layer weights", rows * cols, weights.len()));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::param("layer parameters must be finite"));
        }
        Ok(Layer {
            rows,
            cols,
            weights,
            bias,
            activation,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>, activation: ActivationKind) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.len() != bias.len() {
            return Err(Error::shape("layer bias", rows.len(), bias.len()));
        }
        let mut weights = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("layer weight row", cols, row.len()));
            }
            weights.extend_from_slice(row);
        }
        Layer::new(weights, cols, bias, activation)
    }

    /// `scale · I` with zero bias.
    pub fn diagonal(n: usize, scale: f64, activation: ActivationKind) -> Result<Self> {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = scale;
        }
        Layer::new(w, n, vec![0.0; n], activation)
    }

    pub fn zeros(rows: usize, cols: usize, activation: ActivationKind) -> Result<Self> {
        Layer::new(vec![0.0; rows * cols], cols, vec![0.0; rows], activation)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.bias)
    }

    /// Writes the pre-activation `Wx + b` into `out`.
    #[inline]
    pub(crate) fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.rows).map(|i| dot(self.row(i), x) + self.bias[i]));
    }

    #[inline]
    pub(crate) fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        let act = self.activation;
        out.clear();
        out.extend((0..self.rows).map(|i| act.apply(dot(self.row(i), x) + self.bias[i])));
    }

    /// Applies the layer to `count` inputs stored back to back in `x`
    /// (row stride `cols`), writing outputs with row stride `rows`.
    pub(crate) fn forward_batch_into(&self, x: &[f64], count: usize, out: &mut Vec<f64>) {
        let (rows, cols, act) = (self.rows, self.cols, self.activation);
        out.clear();
        out.resize(count * rows, 0.0);
        let full = count / 4;
        for g in 0..full {
            let base = 4 * g;
            let xs = [
                &x[base * cols..(base + 1) * cols],
                &x[(base + 1) * cols..(base + 2) * cols],
                &x[(base + 2) * cols..(base + 3) * cols],
                &x[(base + 3) * cols..(base + 4) * cols],
            ];
            for i in 0..rows {
                let d = dot_x4(self.row(i), xs);
                for (p, v) in d.iter().enumerate() {
                    out[(base + p) * rows + i] = act.apply(v + self.bias[i]);
                }
            }
        }
        for p in 4 * full..count {
            let xp = &x[p * cols..(p + 1) * cols];
            for i in 0..rows {
                out[p * rows + i] = act.apply(dot(self.row(i), xp) + self.bias[i]);
            }
        }
    }

    /// `φ(Wx + b)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape("layer input", self.cols, x.len()));
        }
        let mut out = Vec::with_capacity(self.rows);
        self.forward_into(x, &mut out);
        Ok(out)
    }
}

/// Free-function form of [`Layer::forward`].
pub fn layer_forward(layer: &Layer, x: &[f64]) -> Result<Vec<f64>> {
    layer.forward(x)
}

/// Where a network's parameters came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamsId {
    pub seed: u64,
    pub stream_id: u64,
    pub distribution: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetworkDoc", try_from = "NetworkDoc")]
pub struct Network {
    layers: Vec<Layer>,
    params_id: Option<ParamsId>,
}

/// Reusable buffers for repeated evaluation without allocation.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("network needs at least one layer"));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::shape(
                    format!("layer {} input", l + 1),
                    pair[0].rows(),
                    pair[1].cols(),
                ));
            }
        }
        Ok(Network {
            layers,
            params_id: None,
        })
    }

    pub fn with_params_id(mut self, id: ParamsId) -> Self {
        self.params_id = Some(id);
        self
    }

    pub fn params_id(&self) -> Option<&ParamsId> {
        self.params_id.as_ref()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Number of layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `n_0, n_1, …, n_L`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::rows))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    pub fn is_autoencoder(&self) -> bool {
        self.input_dim() == self.output_dim()
    }

    /// Fails unless `n_0 = n_L = dim`.
    pub fn check_autoencoder(&self, dim: usize) -> Result<()> {
        if self.input_dim() != dim {
            return Err(Error::shape("autoencoder input", dim, self.input_dim()));
        }
        if self.output_dim() != dim {
            return Err(Error::shape("autoencoder output", dim, self.output_dim()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Evaluates `Φ(x)` into the workspace and returns a view of the output.
    /// `x` must have length `n_0`.
    #[inline]
    pub fn eval<'w>(&self, x: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
        debug_assert_eq!(x.len(), self.input_dim());
        let Workspace { a, b } = ws;
        self.layers[0].forward_into(x, a);
        for layer in &self.layers[1..] {
            layer.forward_into(a, b);
            std::mem::swap(a, b);
        }
        a
    }

    /// Evaluates `Φ` on `count` inputs laid out back to back in `xs`.
    /// Each output is bitwise identical to [`Network::eval`] on that input.
    pub fn eval_batch<'w>(&self, xs: &[f64], count: usize, ws: &'w mut Workspace) -> &'w [f64] {
        debug_assert_eq!(xs.len(), count * self.input_dim());
        let Workspace { a, b } = ws;
        self.layers[0].forward_batch_into(xs, count, a);
        for layer in &self.layers[1..] {
            layer.forward_batch_into(a, count, b);
            std::mem::swap(a, b);
        }
        a
    }

    /// `Φ(x) = Φ^{L-1} ∘ … ∘ Φ^0 (x)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), x.len()));
        }
        let mut ws = Workspace::default();
        Ok(self.eval(x, &mut ws).to_vec())
    }

    /// Returns the network as a serializable document.
    pub fn to_doc(&self) -> NetworkDoc {
        NetworkDoc {
            widths: self.widths(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    activation: l.activation,
                    weights: (0..l.rows).map(|i| l.row(i).to_vec()).collect(),
                    bias: l.bias.clone(),
                })
                .collect(),
            params: self.params_id.clone(),
        }
    }

    pub fn from_doc(doc: &NetworkDoc) -> Result<Self> {
        let layers = doc
            .layers
            .iter()
            .map(|l| Layer::from_rows(&l.weights, l.bias.clone(), l.activation))
            .collect::<Result<Vec<_>>>()?;
        let net = Network::new(layers)?;
        if net.widths() != doc.widths {
            return Err(Error::param(format!(
                "declared widths {:?} do not match layer shapes {:?}",
                doc.widths,
                net.widths()
            )));
        }
        Ok(Network {
            params_id: doc.params.clone(),
            ..net
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Network::from_doc(&serde_json::from_str(s)?)
    }
}

impl From<Network> for NetworkDoc {
    fn from(net: Network) -> Self {
        net.to_doc()
    }
}

impl TryFrom<NetworkDoc> for Network {
    type Error = Error;

    fn try_from(doc: NetworkDoc) -> Result<Self> {
        Network::from_doc(&doc)
    }
}

/// Free-function form of [`Network::forward`].
pub fn forward(net: &Network, x0: &[f64]) -> Result<Vec<f64>> {
    net.forward(x0)
}

/// JSON shape of a serialized network. Floats are written in shortest
/// round-trip form and parsed exactly, so a round trip is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub widths: Vec<usize>,
    pub layers: Vec<LayerDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDoc {
    pub activation: ActivationKind,
    /// Row-major: `weights[i][j]` is the weight from input `j` to output `i`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}
