//! Rate model: a Laplace density per feature map convolved with the uniform
//! density of one quantization cell, plus plug-in entropy and Laplace fitting.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Densities below this are clamped before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Laplace location/scale pair; one per feature map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Laplace {
    pub mu: f64,
    pub b: f64,
}

impl Laplace {
    pub fn new(mu: f64, b: f64) -> Result<Self> {
        check_scale(b)?;
        Ok(Laplace { mu, b })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        (-(x - self.mu).abs() / self.b).exp() / (2.0 * self.b)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.b;
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    }

    /// `F(hi) - F(lo)` without cancellation in either tail.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        interval_mass(lo - self.mu, hi - self.mu, self.b)
    }
}

fn check_scale(b: f64) -> Result<()> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("Laplace scale must be positive, got {b}")))
    }
}

fn check_step(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("quantization step must be positive, got {delta}")))
    }
}

/// Mass of a zero-centred Laplace with scale `b` on `[lo, hi]`.
fn interval_mass(lo: f64, hi: f64, b: f64) -> f64 {
    let width = -(-(hi - lo) / b).exp_m1();
    if lo >= 0.0 {
        0.5 * (-lo / b).exp() * width
    } else if hi <= 0.0 {
        0.5 * (hi / b).exp() * width
    } else {
        1.0 - 0.5 * (-hi / b).exp() - 0.5 * (lo / b).exp()
    }
}

pub fn laplace_cdf(x: f64, mu: f64, b: f64) -> Result<f64> {
    Ok(Laplace::new(mu, b)?.cdf(x))
}

/// Density of a Laplace variable plus independent `Uniform[-δ/2, δ/2]` noise.
pub fn p_tilde(y: f64, mu: f64, b: f64, delta: f64) -> Result<f64> {
    check_step(delta)?;
    Ok(Laplace::new(mu, b)?.mass(y - 0.5 * delta, y + 0.5 * delta) / delta)
}

/// Probability mass of the quantization cell centred on `q`; equals `δ · p̃(q)`.
pub fn p_hat(q: f64, mu: f64, b: f64, delta: f64) -> Result<f64> {
    check_step(delta)?;
    Ok(Laplace::new(mu, b)?.mass(q - 0.5 * delta, q + 0.5 * delta))
}

/// Natural-log density `ln p̃` and its partial derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogDensityGrad {
    pub log_density: f64,
    pub d_y: f64,
    pub d_mu: f64,
    pub d_b: f64,
    pub d_delta: f64,
}

/// `ln max(p̃(y), floor)` with gradients; zero gradient where the floor is active.
pub(crate) fn log_p_tilde_grad(y: f64, mu: f64, b: f64, delta: f64) -> LogDensityGrad {
    let hi = y + 0.5 * delta - mu;
    let lo = y - 0.5 * delta - mu;
    let mass = interval_mass(lo, hi, b);
    let density = mass / delta;
    if !(density > DENSITY_FLOOR) {
        return LogDensityGrad {
            log_density: DENSITY_FLOOR.ln(),
            d_y: 0.0,
            d_mu: 0.0,
            d_b: 0.0,
            d_delta: 0.0,
        };
    }
    let f = |x: f64| (-x.abs() / b).exp() / (2.0 * b);
    let (f_hi, f_lo) = (f(hi), f(lo));
    let d_y = (f_hi - f_lo) / mass;
    LogDensityGrad {
        log_density: density.ln(),
        d_y,
        d_mu: -d_y,
        // dF(x)/db = -(x - μ)·f(x)/b
        d_b: (lo * f_lo - hi * f_hi) / (b * mass),
        d_delta: 0.5 * (f_hi + f_lo) / mass - 1.0 / delta,
    }
}

/// Rate term `-log2 δ - mean log2 p̃(v)` in bits per coefficient, for values
/// that already carry their quantization noise.
pub fn rate_term(noisy: &[f64], delta: f64, psi: Laplace) -> Result<f64> {
    check_step(delta)?;
    check_scale(psi.b)?;
    if noisy.is_empty() {
        return Err(Error::Usage("rate term of an empty map".into()));
    }
    let sum: f64 = noisy
        .iter()
        .map(|&v| log_p_tilde_grad(v, psi.mu, psi.b, delta).log_density)
        .sum();
    Ok(-delta.log2() - sum / (noisy.len() as f64 * std::f64::consts::LN_2))
}

/// Plug-in entropy of a symbol sequence, in bits per symbol.
pub fn empirical_entropy(symbols: &[i32]) -> Result<f64> {
    if symbols.is_empty() {
        return Err(Error::Usage("entropy of an empty symbol map".into()));
    }
    let mut counts: HashMap<i32, usize> = HashMap::new();
    for &s in symbols {
        *counts.entry(s).or_default() += 1;
    }
    let n = symbols.len() as f64;
    // Sum in key order so the result does not depend on hash iteration order.
    let mut keyed: Vec<(i32, usize)> = counts.into_iter().collect();
    keyed.sort_unstable();
    Ok(keyed
        .into_iter()
        .map(|(_, c)| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Maximum-likelihood Laplace fit: median location, mean absolute deviation scale.
pub fn fit_laplace(samples: &[f64]) -> Result<Laplace> {
    if samples.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let mu = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let b = sorted.iter().map(|x| (x - mu).abs()).sum::<f64>() / n as f64;
    if !(b > 0.0) {
        return Err(Error::Degenerate("samples are constant".into()));
    }
    Laplace::new(mu, b)
}
