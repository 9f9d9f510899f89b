//! Experiment harness: rate–distortion sweeps, latent statistics, the
//! single-coefficient probe and cross-model curve comparison.

use std::fmt::Write as _;

use crate::codec::{decode_image, encode_image};
use crate::entropy::{empirical_entropy, fit_laplace, Laplace};
use crate::error::{Error, Result};
use crate::image_io::GrayImage;
use crate::model::Model;
use crate::quantization::{dequantize, quantize, QuantSpec};
use crate::tensor::Tensor;

/// Default β grid of a rate–distortion sweep.
pub const DEFAULT_BETAS: [f64; 9] = [1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0];

/// Mean squared error between two images of the same extent.
pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{} image",
            a.height, a.width, b.height, b.width
        )));
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / a.pixel_count() as f64)
}

/// `10 log10(255² / mse)`; `+∞` for a perfect reconstruction.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// One `(image, β)` measurement. Rates are in bits per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub image: String,
    pub beta: f64,
    /// Sum over maps of the per-map empirical symbol entropy.
    pub rate_bpp_estimated: f64,
    /// Coded file size (header included) over pixel count.
    pub rate_bpp_actual: f64,
    pub mse: f64,
    pub psnr_db: f64,
}

/// Label of the per-β average rows.
pub const MEAN_LABEL: &str = "mean";

#[derive(Debug, Clone, PartialEq)]
pub struct RdTable {
    /// Per-image rows, image-major, β in sweep order.
    pub rows: Vec<RdPoint>,
    /// Per-β averages over images (PSNR is the mean of per-image PSNRs).
    pub means: Vec<RdPoint>,
}

const RD_HEADER: &str = "image,beta,rate_bpp_estimated,rate_bpp_actual,mse,psnr_db";

impl RdTable {
    pub fn from_rows(rows: Vec<RdPoint>) -> Self {
        let mut betas: Vec<f64> = Vec::new();
        for r in &rows {
            if !betas.contains(&r.beta) {
                betas.push(r.beta);
            }
        }
        let means = betas
            .iter()
            .map(|&beta| {
                let sel: Vec<&RdPoint> = rows.iter().filter(|r| r.beta == beta).collect();
                let n = sel.len() as f64;
                let avg = |f: fn(&RdPoint) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
                RdPoint {
                    image: MEAN_LABEL.into(),
                    beta,
                    rate_bpp_estimated: avg(|r| r.rate_bpp_estimated),
                    rate_bpp_actual: avg(|r| r.rate_bpp_actual),
                    mse: avg(|r| r.mse),
                    psnr_db: avg(|r| r.psnr_db),
                }
            })
            .collect();
        RdTable { rows, means }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{RD_HEADER}\n");
        for r in self.rows.iter().chain(&self.means) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.image, r.beta, r.rate_bpp_estimated, r.rate_bpp_actual, r.mse, r.psnr_db
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::Format { what: "RD table", detail };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(RD_HEADER) {
            return Err(bad("unexpected header".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(format!("line {}: expected 6 fields", i + 2)));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("line {}: bad number {s:?}", i + 2)));
            let point = RdPoint {
                image: f[0].to_string(),
                beta: num(f[1])?,
                rate_bpp_estimated: num(f[2])?,
                rate_bpp_actual: num(f[3])?,
                mse: num(f[4])?,
                psnr_db: num(f[5])?,
            };
            if point.image != MEAN_LABEL {
                rows.push(point);
            }
        }
        if rows.is_empty() {
            return Err(bad("no per-image rows".into()));
        }
        Ok(RdTable::from_rows(rows))
    }

    /// `(rate_bpp_actual, psnr_db)` of the mean rows.
    pub fn mean_curve(&self) -> Vec<(f64, f64)> {
        self.means.iter().map(|r| (r.rate_bpp_actual, r.psnr_db)).collect()
    }
}

/// Estimated rate of a symbol tensor: per-map i.i.d. entropy, in bits per pixel.
pub fn estimated_bpp(symbols: &crate::quantization::Symbols, pixels: usize) -> Result<f64> {
    let per_map = symbols.shape[0] * symbols.shape[2] * symbols.shape[3];
    let mut bits = 0.0;
    for map in 0..symbols.maps() {
        bits += empirical_entropy(&symbols.map_values(map))? * per_map as f64;
    }
    Ok(bits / pixels as f64)
}

/// Codes and decodes every image at every β.
pub fn rd_sweep(model: &Model, images: &[(String, GrayImage)], betas: &[f64]) -> Result<RdTable> {
    if images.is_empty() || betas.is_empty() {
        return Err(Error::Usage("sweep needs at least one image and one beta".into()));
    }
    let mut rows = Vec::with_capacity(images.len() * betas.len());
    for (name, img) in images {
        for &beta in betas {
            let enc = encode_image(img, model, beta)?;
            let dec = decode_image(&enc.bytes, model)?;
            let pixels = img.pixel_count();
            let err = mse(img, &dec.image)?;
            rows.push(RdPoint {
                image: name.clone(),
                beta,
                rate_bpp_estimated: estimated_bpp(&enc.symbols, pixels)?,
                rate_bpp_actual: enc.bytes.len() as f64 * 8.0 / pixels as f64,
                mse: err,
                psnr_db: psnr_from_mse(err),
            });
        }
    }
    Ok(RdTable::from_rows(rows))
}

/// Adjacent pairs (in increasing β) where a series moves the wrong way.
#[derive(Debug, Clone, PartialEq)]
pub struct Monotonicity {
    pub image: String,
    pub rate_inversions: usize,
    pub mse_inversions: usize,
}

impl Monotonicity {
    /// At most one flagged inversion per series.
    pub fn acceptable(&self) -> bool {
        self.rate_inversions <= 1 && self.mse_inversions <= 1
    }
}

/// Rate must not increase and MSE must not decrease as β grows.
pub fn monotonicity(table: &RdTable) -> Vec<Monotonicity> {
    let mut names: Vec<&str> = Vec::new();
    for r in &table.rows {
        if !names.contains(&r.image.as_str()) {
            names.push(&r.image);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let mut pts: Vec<&RdPoint> = table.rows.iter().filter(|r| r.image == name).collect();
            pts.sort_by(|a, b| a.beta.total_cmp(&b.beta));
            let count = |f: fn(&RdPoint, &RdPoint) -> bool| pts.windows(2).filter(|w| f(w[0], w[1])).count();
            Monotonicity {
                image: name.to_string(),
                rate_inversions: count(|a, b| b.rate_bpp_estimated > a.rate_bpp_estimated),
                mse_inversions: count(|a, b| b.mse < a.mse),
            }
        })
        .collect()
}

/// Normalized histogram of one feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapHistogram {
    pub map: usize,
    /// Left edge of bin 0.
    pub origin: f64,
    pub bin_width: f64,
    /// Density per bin (integrates to 1).
    pub density: Vec<f64>,
}

impl MapHistogram {
    const MAX_BINS: usize = 4096;

    /// Bins of width `bin_width` aligned to `anchor`, widened if the range
    /// would need more than 4096 bins.
    pub fn build(map: usize, samples: &[f64], anchor: f64, bin_width: f64) -> Result<Self> {
        if samples.is_empty() || !(bin_width > 0.0) {
            return Err(Error::Usage("histogram needs samples and a positive bin width".into()));
        }
        let (lo, hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let mut width = bin_width;
        while ((hi - lo) / width).ceil() as usize + 2 > Self::MAX_BINS {
            width *= 2.0;
        }
        let first = ((lo - anchor) / width).floor();
        let origin = anchor + first * width;
        let bins = ((hi - origin) / width).floor() as usize + 1;
        let mut counts = vec![0usize; bins];
        for &v in samples {
            let k = (((v - origin) / width).floor() as usize).min(bins - 1);
            counts[k] += 1;
        }
        let norm = samples.len() as f64 * width;
        Ok(MapHistogram {
            map,
            origin,
            bin_width: width,
            density: counts.iter().map(|&c| c as f64 / norm).collect(),
        })
    }

    /// L1 distance between the histogram and the fitted density, both taken
    /// at the histogram's resolution: `Σ_k |h_k·w − P_fit(bin_k)|` plus the
    /// fitted mass outside the histogram's range. Lies in `[0, 2]`.
    pub fn l1_distance(&self, fit: &Laplace) -> f64 {
        let mut total = 0.0;
        for (k, &d) in self.density.iter().enumerate() {
            let lo = self.origin + k as f64 * self.bin_width;
            total += (d * self.bin_width - fit.mass(lo, lo + self.bin_width)).abs();
        }
        let end = self.origin + self.density.len() as f64 * self.bin_width;
        total + fit.cdf(self.origin) + (1.0 - fit.cdf(end))
    }
}

/// Laplace fit of one feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFit {
    pub map: usize,
    pub mu_bar: f64,
    pub delta: f64,
    /// `None` for degenerate maps.
    pub fit: Option<Laplace>,
    pub fit_error: f64,
    pub degenerate: bool,
    /// Fit error more than twice the median fit error.
    pub outlier: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentReport {
    pub maps: Vec<MapFit>,
    pub histograms: Vec<MapHistogram>,
}

impl LatentReport {
    /// Fits every map from pooled samples `samples[map]`, with histogram bins
    /// of width `delta[map] / 4`.
    pub fn from_samples(samples: &[Vec<f64>], mu_bar: &[f64], delta: &[f64]) -> Result<Self> {
        if samples.len() != mu_bar.len() || samples.len() != delta.len() {
            return Err(Error::Shape("samples, means and steps disagree on map count".into()));
        }
        let mut maps = Vec::with_capacity(samples.len());
        let mut histograms = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            let fit = fit_laplace(s).ok().filter(|f| f.b > 1e-9 * delta[i]);
            let (fit_error, degenerate) = match fit {
                Some(f) => {
                    let h = MapHistogram::build(i, s, mu_bar[i], delta[i] / 4.0)?;
                    let e = h.l1_distance(&f);
                    histograms.push(h);
                    (e, false)
                }
                None => (f64::NAN, true),
            };
            maps.push(MapFit { map: i, mu_bar: mu_bar[i], delta: delta[i], fit, fit_error, degenerate, outlier: false });
        }
        let mut errors: Vec<f64> = maps.iter().filter(|m| !m.degenerate).map(|m| m.fit_error).collect();
        errors.sort_by(f64::total_cmp);
        if !errors.is_empty() {
            let median = if errors.len() % 2 == 1 {
                errors[errors.len() / 2]
            } else {
                (errors[errors.len() / 2 - 1] + errors[errors.len() / 2]) / 2.0
            };
            for m in maps.iter_mut().filter(|m| !m.degenerate) {
                m.outlier = m.fit_error > 2.0 * median;
            }
        }
        Ok(LatentReport { maps, histograms })
    }

    pub fn non_degenerate(&self) -> impl Iterator<Item = &MapFit> {
        self.maps.iter().filter(|m| !m.degenerate)
    }

    /// Fitted scales of the non-degenerate maps.
    pub fn scales(&self) -> Vec<f64> {
        self.non_degenerate().filter_map(|m| m.fit.map(|f| f.b)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("map,mu_bar,delta,fit_mu,fit_b,fit_error,degenerate,outlier\n");
        for m in &self.maps {
            let (mu, b) = m.fit.map_or((f64::NAN, f64::NAN), |f| (f.mu, f.b));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                m.map, m.mu_bar, m.delta, mu, b, m.fit_error, m.degenerate as u8, m.outlier as u8
            );
        }
        out
    }

    /// Long-format histograms: `map,bin_center,density,fitted_density`.
    pub fn histograms_csv(&self) -> String {
        let mut out = String::from("map,bin_center,density,fitted_density\n");
        for h in &self.histograms {
            let fit = self.maps[h.map].fit;
            for (k, d) in h.density.iter().enumerate() {
                let x = h.origin + (k as f64 + 0.5) * h.bin_width;
                let f = fit.map_or(f64::NAN, |f| f.pdf(x));
                let _ = writeln!(out, "{},{},{},{}", h.map, x, d, f);
            }
        }
        out
    }

    /// One fitted scale per non-degenerate map.
    pub fn scales_csv(&self) -> String {
        let mut out = String::from("map,fit_b\n");
        for m in self.non_degenerate() {
            if let Some(f) = m.fit {
                let _ = writeln!(out, "{},{}", m.map, f.b);
            }
        }
        out
    }
}

/// Latents of every image (reflection-padded to the stride), pooled per map.
pub fn latent_samples(model: &Model, images: &[GrayImage]) -> Result<Vec<Vec<f64>>> {
    let m = model.arch.m;
    let mut samples = vec![Vec::new(); m];
    for img in images {
        let (padded, _, _) = img.pad_to_multiple(model.arch.total_stride());
        let y = model.encode_transform(&padded.to_tensor())?;
        let plane = y.len() / m;
        for (i, chunk) in y.data().chunks(plane).enumerate() {
            samples[i % m].extend_from_slice(chunk);
        }
    }
    Ok(samples)
}

pub fn latent_report(model: &Model, images: &[GrayImage]) -> Result<LatentReport> {
    if images.is_empty() {
        return Err(Error::Usage("latent report needs at least one image".into()));
    }
    let samples = latent_samples(model, images)?;
    LatentReport::from_samples(&samples, model.params.mu_bar.data(), &model.params.deltas())
}

/// One probe: coefficient `(map, row, col)` of an otherwise centred latent set to `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSpec {
    pub map: usize,
    pub row: usize,
    pub col: usize,
    pub alpha: f64,
    /// Latent extent `(rows, cols)`.
    pub extent: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    /// Decoded probe and baseline, unclamped, `(1, 1, H, W)`.
    pub probe: Tensor,
    pub baseline: Tensor,
    /// Square window `(top, left, size)` around the coefficient's projection.
    pub window: (i64, i64, usize),
    /// Share of the difference energy inside the window; `NaN` if the probe
    /// changes nothing.
    pub locality: f64,
}

impl ProbeResult {
    pub fn difference(&self) -> Vec<f64> {
        self.probe.data().iter().zip(self.baseline.data()).map(|(a, b)| a - b).collect()
    }
}

/// Pixel coordinate the decoder maps latent index `i` to (centre of its footprint).
pub fn projection_center(model: &Model, i: usize) -> f64 {
    let mut c = i as f64;
    for l in model.arch.layers.iter().rev() {
        c = c * l.stride as f64 - l.pad as f64 + (l.kernel as f64 - 1.0) / 2.0;
    }
    c
}

/// Decodes `(Q(latent) with β = 1)` for a centred latent with one probed coefficient.
pub fn probe(model: &Model, spec: &ProbeSpec) -> Result<ProbeResult> {
    let m = model.arch.m;
    let (h, w) = spec.extent;
    if spec.map >= m || spec.row >= h || spec.col >= w {
        return Err(Error::Usage(format!(
            "probe ({}, {}, {}) outside {m} maps of {h}x{w}",
            spec.map, spec.row, spec.col
        )));
    }
    if !spec.alpha.is_finite() {
        return Err(Error::Domain(format!("probe amplitude {}", spec.alpha)));
    }
    let q = QuantSpec::from_model(model, 1.0)?;
    let mu_bar = model.params.mu_bar.data();
    let plane = h * w;
    let base: Vec<f64> = (0..m * plane).map(|i| mu_bar[i / plane]).collect();
    let decode = |values: Vec<f64>| -> Result<Tensor> {
        let y = Tensor::new(vec![1, m, h, w], values)?;
        model.decode_transform(&dequantize(&quantize(&y, &q)?, &q)?)
    };
    let mut probed = base.clone();
    probed[spec.map * plane + spec.row * w + spec.col] = spec.alpha;
    let baseline = decode(base)?;
    let probe_img = decode(probed)?;
    let size = 4 * model.arch.total_stride();
    let half = size as f64 / 2.0;
    let top = (projection_center(model, spec.row) - half + 0.5).floor() as i64;
    let left = (projection_center(model, spec.col) - half + 0.5).floor() as i64;
    let (_, _, ih, iw) = baseline.dims4()?;
    let (mut inside, mut total) = (0.0, 0.0);
    for r in 0..ih {
        for c in 0..iw {
            let d = probe_img.data()[r * iw + c] - baseline.data()[r * iw + c];
            let e = d * d;
            total += e;
            let (ri, ci) = (r as i64, c as i64);
            if ri >= top && ri < top + size as i64 && ci >= left && ci < left + size as i64 {
                inside += e;
            }
        }
    }
    Ok(ProbeResult {
        probe: probe_img,
        baseline,
        window: (top, left, size),
        locality: if total > 0.0 { inside / total } else { f64::NAN },
    })
}

/// Pearson correlation of two equally long sequences; `NaN` if either is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        f64::NAN
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Correlation between the `+α` and `−α` difference images inside the `+α` probe window.
pub fn sign_flip_correlation(plus: &ProbeResult, minus: &ProbeResult) -> f64 {
    let (_, _, _, w) = plus.baseline.dims4().expect("probe output is 4-d");
    let h = plus.baseline.len() / w;
    let (top, left, size) = plus.window;
    let (dp, dm) = (plus.difference(), minus.difference());
    let mut a = Vec::new();
    let mut b = Vec::new();
    for r in top.max(0)..(top + size as i64).min(h as i64) {
        for c in left.max(0)..(left + size as i64).min(w as i64) {
            let i = r as usize * w + c as usize;
            a.push(dp[i]);
            b.push(dm[i]);
        }
    }
    correlation(&a, &b)
}

/// Probe outcome of one map at `±α`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapProbe {
    pub map: usize,
    pub alpha: f64,
    pub locality_plus: f64,
    pub locality_minus: f64,
    pub correlation: f64,
}

impl MapProbe {
    pub fn localized_and_antisymmetric(&self) -> bool {
        self.locality_plus > 0.5 && self.locality_minus > 0.5 && self.correlation < 0.0
    }
}

/// Probes every map at the centre of an `extent` latent with `±α`.
pub fn probe_all_maps(model: &Model, alpha: f64, extent: (usize, usize)) -> Result<Vec<MapProbe>> {
    (0..model.arch.m)
        .map(|map| {
            let spec = ProbeSpec { map, row: extent.0 / 2, col: extent.1 / 2, alpha, extent };
            let plus = probe(model, &spec)?;
            let minus = probe(model, &ProbeSpec { alpha: -alpha, ..spec })?;
            Ok(MapProbe {
                map,
                alpha,
                locality_plus: plus.locality,
                locality_minus: minus.locality,
                correlation: sign_flip_correlation(&plus, &minus),
            })
        })
        .collect()
}

/// Piecewise-linear interpolation of a curve sorted by `x`; `None` outside its range.
pub fn interpolate(curve: &[(f64, f64)], x: f64) -> Option<f64> {
    let first = curve.first()?;
    let last = curve.last()?;
    if x < first.0 || x > last.0 {
        return None;
    }
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x >= x0 && x <= x1 {
            return Some(if x1 == x0 { (y0 + y1) / 2.0 } else { y0 + (y1 - y0) * (x - x0) / (x1 - x0) });
        }
    }
    Some(last.1)
}

fn sorted_curve(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut c: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    c.sort_by(|a, b| a.0.total_cmp(&b.0));
    c
}

/// PSNR gap between two rate–PSNR curves over their common rate range.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveGap {
    pub a: String,
    pub b: String,
    pub rate_lo: f64,
    pub rate_hi: f64,
    pub mean_gap_db: f64,
    pub max_gap_db: f64,
    pub grid_points: usize,
}

/// Samples both curves on `grid` evenly spaced rates across their overlap.
pub fn curve_gap(a: (&str, &[(f64, f64)]), b: (&str, &[(f64, f64)]), grid: usize) -> Result<CurveGap> {
    let (ca, cb) = (sorted_curve(a.1), sorted_curve(b.1));
    if ca.is_empty() || cb.is_empty() {
        return Err(Error::Usage("cannot compare an empty curve".into()));
    }
    let lo = ca[0].0.max(cb[0].0);
    let hi = ca[ca.len() - 1].0.min(cb[cb.len() - 1].0);
    if lo > hi {
        return Err(Error::Degenerate(format!(
            "rate ranges of {} and {} do not overlap ({lo:.4} > {hi:.4} bpp)",
            a.0, b.0
        )));
    }
    let n = if lo == hi { 1 } else { grid.max(2) };
    let (mut sum, mut max) = (0.0, 0.0f64);
    for k in 0..n {
        let r = if k + 1 == n { hi } else { (lo + (hi - lo) * k as f64 / (n - 1) as f64).min(hi) };
        let gap = (interpolate(&ca, r).unwrap() - interpolate(&cb, r).unwrap()).abs();
        sum += gap;
        max = max.max(gap);
    }
    Ok(CurveGap {
        a: a.0.into(),
        b: b.0.into(),
        rate_lo: lo,
        rate_hi: hi,
        mean_gap_db: sum / n as f64,
        max_gap_db: max,
        grid_points: n,
    })
}

/// Points contributed by fixed-step models: the β = 1 mean row of each table
/// (or its lowest β if 1 is absent).
pub fn fixed_step_points(tables: &[RdTable]) -> Vec<(f64, f64)> {
    tables
        .iter()
        .filter_map(|t| {
            t.means
                .iter()
                .min_by(|a, b| (a.beta - 1.0).abs().total_cmp(&(b.beta - 1.0).abs()))
                .map(|r| (r.rate_bpp_actual, r.psnr_db))
        })
        .collect()
}

pub fn gaps_csv(gaps: &[CurveGap]) -> String {
    let mut out = String::from("curve_a,curve_b,rate_lo_bpp,rate_hi_bpp,mean_gap_db,max_gap_db,grid_points\n");
    for g in gaps {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            g.a, g.b, g.rate_lo, g.rate_hi, g.mean_gap_db, g.max_gap_db, g.grid_points
        );
    }
    out
}

/// Grid size used by [`compare_cases`].
pub const COMPARE_GRID: usize = 64;

/// Gaps between a learned-step sweep, a unit-step sweep, and (if given)
/// the curve through fixed-step models trained at several rate weights.
pub fn compare_cases(learned: &RdTable, unit: &RdTable, fixed: &[RdTable]) -> Result<Vec<CurveGap>> {
    let (l, u) = (learned.mean_curve(), unit.mean_curve());
    let mut out = vec![curve_gap(("learned_steps", &l), ("unit_steps", &u), COMPARE_GRID)?];
    if !fixed.is_empty() {
        let f = fixed_step_points(fixed);
        for (name, curve) in [("learned_steps", &l), ("unit_steps", &u)] {
            match curve_gap((name, curve), ("fixed_steps", &f), COMPARE_GRID) {
                Ok(g) => out.push(g),
                Err(e) => log::warn!("{e}"),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_values() {
        let a = GrayImage::filled(4, 4, 10);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((psnr_from_mse(255.0 * 255.0)).abs() < 1e-12);
        assert!((psnr_from_mse(255.0 * 255.0 / 100.0) - 20.0).abs() < 1e-12);
        assert!(psnr(&a, &GrayImage::filled(4, 3, 10)).is_err());
    }

    #[test]
    fn rd_csv_round_trip() {
        let rows = vec![
            RdPoint { image: "a".into(), beta: 1.0, rate_bpp_estimated: 1.0, rate_bpp_actual: 1.1, mse: 4.0, psnr_db: 42.0 },
            RdPoint { image: "b".into(), beta: 1.0, rate_bpp_estimated: 3.0, rate_bpp_actual: 3.1, mse: 8.0, psnr_db: 38.0 },
        ];
        let t = RdTable::from_rows(rows);
        assert_eq!(t.means.len(), 1);
        assert_eq!(t.means[0].rate_bpp_estimated, 2.0);
        assert_eq!(t.means[0].psnr_db, 40.0);
        assert_eq!(RdTable::from_csv(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn monotonicity_counts() {
        let mk = |beta: f64, rate: f64, mse: f64| RdPoint {
            image: "x".into(),
            beta,
            rate_bpp_estimated: rate,
            rate_bpp_actual: rate,
            mse,
            psnr_db: psnr_from_mse(mse),
        };
        let t = RdTable::from_rows(vec![mk(1.0, 2.0, 1.0), mk(2.0, 1.0, 2.0), mk(3.0, 1.5, 1.5), mk(4.0, 0.5, 3.0)]);
        let m = &monotonicity(&t)[0];
        assert_eq!((m.rate_inversions, m.mse_inversions), (1, 1));
        assert!(m.acceptable());
    }

    #[test]
    fn histogram_l1_of_exact_masses_is_the_tail() {
        let f = Laplace::new(0.0, 1.0).unwrap();
        let width = 0.05;
        let density: Vec<f64> = (0..800)
            .map(|k| {
                let lo = -20.0 + k as f64 * width;
                f.mass(lo, lo + width) / width
            })
            .collect();
        let h = MapHistogram { map: 0, origin: -20.0, bin_width: width, density };
        // Only the fitted mass beyond ±20 is left unmatched.
        let l1 = h.l1_distance(&f);
        assert!((l1 - (-20f64).exp()).abs() < 1e-12, "{l1}");
        let wrong = Laplace::new(3.0, 1.0).unwrap();
        assert!(h.l1_distance(&wrong) > 1.0);
    }

    #[test]
    fn constant_map_is_degenerate() {
        let samples = vec![vec![2.0; 50], vec![0.0, 1.0, -1.0, 0.5, -0.5]];
        let r = LatentReport::from_samples(&samples, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(r.maps[0].degenerate);
        assert!(!r.maps[1].degenerate);
        assert_eq!(r.scales().len(), 1);
    }

    #[test]
    fn gaps() {
        let a = [(0.1, 30.0), (0.5, 35.0), (1.0, 40.0)];
        let g = curve_gap(("a", &a), ("a2", &a), 16).unwrap();
        assert_eq!((g.mean_gap_db, g.max_gap_db), (0.0, 0.0));
        let b = [(0.3, 30.0), (2.0, 40.0)];
        let ab = curve_gap(("a", &a), ("b", &b), 16).unwrap();
        let ba = curve_gap(("b", &b), ("a", &a), 16).unwrap();
        assert_eq!(ab.mean_gap_db, ba.mean_gap_db);
        assert_eq!((ab.rate_lo, ab.rate_hi), (0.3, 1.0));
        let far = [(5.0, 40.0), (6.0, 41.0)];
        assert!(matches!(curve_gap(("a", &a), ("far", &far), 16), Err(Error::Degenerate(_))));
    }

    #[test]
    fn interpolation() {
        let c = [(0.0, 0.0), (1.0, 10.0), (3.0, 20.0)];
        assert_eq!(interpolate(&c, 0.5), Some(5.0));
        assert_eq!(interpolate(&c, 2.0), Some(15.0));
        assert_eq!(interpolate(&c, 3.5), None);
    }
}
