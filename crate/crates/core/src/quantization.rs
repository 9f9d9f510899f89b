//! Uniform scalar quantization with per-map steps and centering, and the
//! additive-uniform-noise stand-in used while training.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::DELTA_FLOOR;
use crate::model::Model;
use crate::tensor::Tensor;

/// Largest symbol magnitude the bitstream can carry.
pub const MAX_SYMBOL: i32 = (1 << 15) - 1;

/// Test-time quantizer: cell width `beta · delta[i]`, centred on `mu_bar[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantSpec {
    pub delta: Vec<f64>,
    pub mu_bar: Vec<f64>,
    pub beta: f64,
}

impl QuantSpec {
    pub fn new(delta: Vec<f64>, mu_bar: Vec<f64>, beta: f64) -> Result<Self> {
        if delta.len() != mu_bar.len() {
            return Err(Error::Shape(format!(
                "{} steps but {} centering means",
                delta.len(),
                mu_bar.len()
            )));
        }
        if let Some(d) = delta.iter().find(|&&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Domain(format!("quantization step must be positive, got {d}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        Ok(QuantSpec { delta, mu_bar, beta })
    }

    /// Learned steps and centering means of a model, scaled by `beta`.
    pub fn from_model(model: &Model, beta: f64) -> Result<Self> {
        QuantSpec::new(model.params.deltas(), model.params.mu_bar.data().to_vec(), beta)
    }

    pub fn maps(&self) -> usize {
        self.delta.len()
    }

    /// Effective step `β·δ_i`.
    pub fn step(&self, map: usize) -> f64 {
        self.beta * self.delta[map]
    }
}

/// Integer quantization indices laid out like the latent, `(n, m, h, w)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbols {
    pub shape: [usize; 4],
    pub data: Vec<i32>,
}

impl Symbols {
    pub fn new(shape: [usize; 4], data: Vec<i32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "symbol shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Symbols { shape, data })
    }

    pub fn maps(&self) -> usize {
        self.shape[1]
    }

    /// Coefficients of map `i` across the whole batch.
    pub fn map_values(&self, map: usize) -> Vec<i32> {
        let [n, m, h, w] = self.shape;
        let plane = h * w;
        (0..n)
            .flat_map(|b| self.data[(b * m + map) * plane..(b * m + map + 1) * plane].iter().copied())
            .collect()
    }
}

fn latent_maps(y: &Tensor, maps: usize) -> Result<(usize, usize, usize, usize)> {
    let (n, m, h, w) = y.dims4()?;
    if m != maps {
        return Err(Error::Shape(format!("latent has {m} maps, quantizer has {maps}")));
    }
    Ok((n, m, h, w))
}

/// `τ ~ Uniform[-0.5, 0.5]`, one draw per element.
pub fn uniform_noise(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random::<f64>() - 0.5).collect())
        .expect("length matches shape")
}

/// Training proxy for quantization: returns `(y + δ⊙τ, τ)` with map-wise `δ`.
pub fn inject_noise(y: &Tensor, delta: &[f64], rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
    let (_, m, h, w) = latent_maps(y, delta.len())?;
    let tau = uniform_noise(y.shape(), rng);
    let plane = h * w;
    let mut out = y.clone();
    for (i, (o, t)) in out.data_mut().iter_mut().zip(tau.data()).enumerate() {
        *o += delta[(i / plane) % m].max(DELTA_FLOOR) * t;
    }
    Ok((out, tau))
}

/// `k = round_half_away_from_zero((y - μ̄_i) / (β·δ_i))`.
pub fn quantize(y: &Tensor, spec: &QuantSpec) -> Result<Symbols> {
    let (n, m, h, w) = latent_maps(y, spec.maps())?;
    let plane = h * w;
    let data = y
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let map = (i / plane) % m;
            let k = ((v - spec.mu_bar[map]) / spec.step(map)).round();
            k.clamp(i32::MIN as f64, i32::MAX as f64) as i32
        })
        .collect();
    Symbols::new([n, m, h, w], data)
}

/// `ŷ = k·β·δ_i + μ̄_i`.
pub fn dequantize(symbols: &Symbols, spec: &QuantSpec) -> Result<Tensor> {
    let [n, m, h, w] = symbols.shape;
    if m != spec.maps() {
        return Err(Error::Shape(format!("symbols have {m} maps, quantizer has {}", spec.maps())));
    }
    let plane = h * w;
    let data = symbols
        .data
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let map = (i / plane) % m;
            k as f64 * spec.step(map) + spec.mu_bar[map]
        })
        .collect();
    Tensor::new(vec![n, m, h, w], data)
}

/// Per-map mean of the latents of a calibration set.
///
/// Each entry of `images` is a `(n, 1, h, w)` batch; extents must be multiples
/// of the model's total stride.
pub fn estimate_means(model: &Model, images: &[Tensor]) -> Result<Vec<f64>> {
    let m = model.arch.m;
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for x in images {
        let y = model.encode_transform(x)?;
        let (_, _, h, w) = y.dims4()?;
        let plane = h * w;
        for (i, chunk) in y.data().chunks(plane).enumerate() {
            sums[i % m] += chunk.iter().sum::<f64>();
            counts[i % m] += plane;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Usage("empty calibration set".into()));
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
}
