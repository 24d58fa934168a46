//! Seeded sampling of network parameters from Gaussian and Cauchy laws.
//!
//! Every random draw comes from a ChaCha20 stream addressed by a [`Seed`]:
//! the 256-bit key is four splitmix64 outputs seeded with `value`, and the
//! ChaCha stream number is `stream_id`. Uniforms on the open interval
//! `(0, 1)` are `((u >> 11) + 0.5) · 2⁻⁵³` for each raw 64-bit word `u`, so
//! 0 and 1 are never produced.
//!
//! Gaussian variates use Box–Muller on consecutive uniform pairs
//! `(u1, u2)`, emitting `r·cos θ` then `r·sin θ` with `r = √(−2 ln u1)` and
//! `θ = 2π u2`. Cauchy variates use the inverse CDF `γ·tan(π(u − ½))`.

use std::f64::consts::PI;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ActivationKind, Layer, Network, ParamsId};

/// splitmix64 step: advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(a: u64, b: u64) -> u64 {
    let mut s = a ^ b.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    splitmix64(&mut s)
}

/// Address of one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed {
    pub value: u64,
    #[serde(default)]
    pub stream_id: u64,
}

impl Seed {
    pub const fn new(value: u64) -> Self {
        Seed {
            value,
            stream_id: 0,
        }
    }

    pub const fn with_stream(value: u64, stream_id: u64) -> Self {
        Seed { value, stream_id }
    }

    /// A child stream under the same key. Distinct tags give distinct streams.
    pub fn substream(self, tag: u64) -> Seed {
        Seed {
            value: self.value,
            stream_id: mix(self.stream_id, tag.wrapping_add(1)),
        }
    }

    /// The `index`-th seed derived from a master seed, used for multi-seed
    /// experiments: `value = splitmix64(master ⊕ mix(index))`, stream 0.
    pub fn derive(master: u64, index: u64) -> Seed {
        let mut s = master ^ mix(0x5EED, index);
        Seed::new(splitmix64(&mut s))
    }

    pub fn rng(self) -> SeedRng {
        SeedRng::new(self)
    }
}

/// Uniform source bound to a [`Seed`].
pub struct SeedRng {
    inner: ChaCha20Rng,
}

impl SeedRng {
    pub fn new(seed: Seed) -> Self {
        let mut state = seed.value;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(seed.stream_id);
        SeedRng { inner }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` by rejection (no modulo bias).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Fills `out` with N(0, sigma) draws (sigma is the standard deviation).
    pub fn fill_gauss(&mut self, sigma: f64, out: &mut [f64]) {
        let mut pairs = out.chunks_mut(2);
        for pair in &mut pairs {
            let u1 = self.uniform_open();
            let u2 = self.uniform_open();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * PI * u2;
            pair[0] = sigma * r * theta.cos();
            if pair.len() > 1 {
                pair[1] = sigma * r * theta.sin();
            }
        }
    }

    pub fn fill_cauchy(&mut self, gamma: f64, out: &mut [f64]) {
        for v in out {
            *v = gamma * (PI * (self.uniform_open() - 0.5)).tan();
        }
    }
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `n` i.i.d. draws from N(0, sigma).
pub fn sample_gauss(seed: Seed, n: usize, sigma: f64) -> Result<Vec<f64>> {
    check_scale("sigma", sigma)?;
    let mut out = vec![0.0; n];
    seed.rng().fill_gauss(sigma, &mut out);
    Ok(out)
}

/// `n` i.i.d. draws from the Cauchy law centred at 0 with scale `gamma`.
pub fn sample_cauchy(seed: Seed, n: usize, gamma: f64) -> Result<Vec<f64>> {
    check_scale("gamma", gamma)?;
    let mut out = vec![0.0; n];
    seed.rng().fill_cauchy(gamma, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gauss,
    Cauchy,
}

/// How the scale (σ for Gauss, γ for Cauchy) of each layer is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ScaleRule {
    /// `1 / n_l`, where `n_l` is the input width of layer `l`.
    PerLayerInverseWidth,
    /// `N^{-β}`, where `N` is the column count of the layer.
    PowerLaw { beta: f64 },
    /// `1 / √L` for every layer of an `L`-layer network.
    InverseSqrtDepth,
    /// The same scale everywhere. Zero gives all-zero parameters.
    Fixed { value: f64 },
}

impl ScaleRule {
    /// Scale for a layer with `cols` inputs in a network of `depth` layers.
    pub fn scale(&self, cols: usize, depth: usize) -> f64 {
        match *self {
            ScaleRule::PerLayerInverseWidth => 1.0 / cols as f64,
            ScaleRule::PowerLaw { beta } => (cols as f64).powf(-beta),
            ScaleRule::InverseSqrtDepth => 1.0 / (depth as f64).sqrt(),
            ScaleRule::Fixed { value } => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub family: Family,
    pub scale: ScaleRule,
    /// Leave biases at zero instead of sampling them.
    #[serde(default)]
    pub zero_bias: bool,
}

impl DistributionSpec {
    pub fn new(family: Family, scale: ScaleRule) -> Self {
        DistributionSpec {
            family,
            scale,
            zero_bias: false,
        }
    }

    pub fn gauss(scale: ScaleRule) -> Self {
        Self::new(Family::Gauss, scale)
    }

    pub fn cauchy(scale: ScaleRule) -> Self {
        Self::new(Family::Cauchy, scale)
    }

    pub fn validate(&self) -> Result<()> {
        match self.scale {
            ScaleRule::PowerLaw { beta } if !beta.is_finite() => {
                Err(Error::param(format!("beta must be finite, got {beta}")))
            }
            ScaleRule::Fixed { value } if !(value >= 0.0 && value.is_finite()) => Err(
                Error::param(format!("fixed scale must be non-negative, got {value}")),
            ),
            _ => Ok(()),
        }
    }

    /// Short human-readable descriptor, e.g. `cauchy/per_layer_inverse_width`.
    pub fn describe(&self) -> String {
        let family = match self.family {
            Family::Gauss => "gauss",
            Family::Cauchy => "cauchy",
        };
        let rule = match self.scale {
            ScaleRule::PerLayerInverseWidth => "per_layer_inverse_width".to_string(),
            ScaleRule::PowerLaw { beta } => format!("power_law(beta={beta})"),
            ScaleRule::InverseSqrtDepth => "inverse_sqrt_depth".to_string(),
            ScaleRule::Fixed { value } => format!("fixed({value})"),
        };
        let bias = if self.zero_bias { "/zero_bias" } else { "" };
        format!("{family}/{rule}{bias}")
    }

    fn fill(&self, seed: Seed, scale: f64, out: &mut [f64]) {
        if scale == 0.0 {
            out.fill(0.0);
            return;
        }
        let mut rng = seed.rng();
        match self.family {
            Family::Gauss => rng.fill_gauss(scale, out),
            Family::Cauchy => rng.fill_cauchy(scale, out),
        }
    }
}

/// Per-layer scales `init_network` would use for these widths.
pub fn layer_scales(widths: &[usize], dist: &DistributionSpec) -> Vec<f64> {
    let depth = widths.len().saturating_sub(1);
    widths[..depth]
        .iter()
        .map(|&cols| dist.scale.scale(cols, depth))
        .collect()
}

/// Samples a network with the given widths. Layer `l` draws its weights from
/// `seed.substream(2l)` and its bias from `seed.substream(2l + 1)`.
pub fn init_network(
    widths: &[usize],
    activation: ActivationKind,
    dist: &DistributionSpec,
    seed: Seed,
) -> Result<Network> {
    if widths.len() < 2 {
        return Err(Error::param(format!(
            "need at least two widths, got {}",
            widths.len()
        )));
    }
    if widths.contains(&0) {
        return Err(Error::param("all widths must be at least 1"));
    }
    dist.validate()?;
    let depth = widths.len() - 1;
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let (cols, rows) = (widths[l], widths[l + 1]);
        let scale = dist.scale.scale(cols, depth);
        let mut weights = vec![0.0; rows * cols];
        dist.fill(seed.substream(2 * l as u64), scale, &mut weights);
        let mut bias = vec![0.0; rows];
        if !dist.zero_bias {
            dist.fill(seed.substream(2 * l as u64 + 1), scale, &mut bias);
        }
        layers.push(Layer::new(weights, cols, bias, activation)?);
    }
    Ok(Network::new(layers)?.with_params_id(ParamsId {
        seed: seed.value,
        stream_id: seed.stream_id,
        distribution: dist.describe(),
    }))
}
