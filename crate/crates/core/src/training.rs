//! Rate–distortion training: the noisy-latent objective, patch dataset
//! ingestion and the alternating three-group Adam optimization.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::image_io::{list_images, read_image, GrayImage};
use crate::model::{ArchConfig, Model, ModelNodes, ModelParams, ParamGroup};
use crate::quantization::{estimate_means, uniform_noise};
use crate::tensor::Tensor;

/// Training configuration; every field has a default so a config file only
/// needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Rate weight γ.
    pub gamma: f64,
    /// Learn one quantization step per map (otherwise δ ≡ 1).
    pub learn_delta: bool,
    /// GDN after the encoder and IGDN before the decoder.
    pub end_normalization: bool,
    pub m: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr_transform: f64,
    pub lr_delta: f64,
    pub lr_psi: f64,
    pub seed: u64,
    pub patch_size: usize,
    /// Total patches across train, validation and calibration splits.
    pub patch_count: usize,
    pub images: PathBuf,
    /// Log row (with validation metrics and δ snapshot) every this many steps.
    pub log_every: usize,
    pub validation_fraction: f64,
    pub calibration_fraction: f64,
    /// Where to dump parameters if training diverges.
    pub dump_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 10000.0,
            learn_delta: true,
            end_normalization: false,
            m: 32,
            batch_size: 8,
            steps: 3000,
            lr_transform: 1e-4,
            lr_delta: 1e-3,
            lr_psi: 1e-3,
            seed: 0,
            patch_size: 64,
            patch_count: 4000,
            images: PathBuf::from("images"),
            log_every: 100,
            validation_fraction: 0.10,
            calibration_fraction: 0.05,
            dump_path: None,
        }
    }
}

impl TrainConfig {
    /// Learned steps, no end normalization.
    pub fn learned_steps(gamma: f64) -> Self {
        TrainConfig { gamma, learn_delta: true, end_normalization: false, ..Default::default() }
    }

    /// Unit steps with end normalization.
    pub fn fixed_steps(gamma: f64) -> Self {
        TrainConfig { gamma, learn_delta: false, end_normalization: true, ..Default::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path.as_ref())?)?;
        // Relative image directories are resolved against the config file.
        if cfg.images.is_relative() {
            if let Some(dir) = path.as_ref().parent() {
                cfg.images = dir.join(&cfg.images);
            }
        }
        Ok(cfg)
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig::desk(self.m, self.end_normalization)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.learn_delta && self.end_normalization {
            return bad("learned steps are used without end normalization".into());
        }
        for (name, lr) in [
            ("lr_transform", self.lr_transform),
            ("lr_delta", self.lr_delta),
            ("lr_psi", self.lr_psi),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.batch_size == 0 || self.m == 0 || self.log_every == 0 {
            return bad("batch_size, m and log_every must be positive".into());
        }
        let stride = self.arch().total_stride();
        if self.patch_size == 0 || self.patch_size % stride != 0 {
            return bad(format!(
                "patch size {} is not a positive multiple of the total stride {stride}",
                self.patch_size
            ));
        }
        let (v, c) = (self.validation_fraction, self.calibration_fraction);
        if !(0.0..1.0).contains(&v) || !(0.0..1.0).contains(&c) || v + c >= 1.0 {
            return bad(format!("split fractions {v} and {c} leave no training data"));
        }
        self.arch().validate()
    }
}

/// Luminance patches in `[0, 255]`, split at the image level.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patch_size: usize,
    pub train: Vec<GrayImage>,
    pub validation: Vec<GrayImage>,
    pub calibration: Vec<GrayImage>,
}

fn random_crops(
    images: &[GrayImage],
    size: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GrayImage>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    (0..count)
        .map(|_| {
            let img = &images[rng.random_range(0..images.len())];
            let top = rng.random_range(0..=img.height - size);
            let left = rng.random_range(0..=img.width - size);
            img.crop(top, left, size, size)
        })
        .collect()
}

impl PatchSet {
    /// Splits `images` (in the given order) into train / validation /
    /// calibration by image, then draws `count` random crops across the splits.
    /// Images smaller than the patch are skipped with a warning.
    pub fn from_images(
        images: Vec<GrayImage>,
        patch_size: usize,
        count: usize,
        validation_fraction: f64,
        calibration_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut usable: Vec<GrayImage> = images
            .into_iter()
            .filter(|img| {
                let ok = img.width >= patch_size && img.height >= patch_size;
                if !ok {
                    log::warn!(
                        "skipping {}x{} image smaller than the {patch_size}px patch",
                        img.width,
                        img.height
                    );
                }
                ok
            })
            .collect();
        let n = usable.len();
        if n == 0 {
            return Err(Error::Dataset(format!("no image is at least {patch_size}x{patch_size}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        usable.shuffle(&mut rng);
        let share = |f: f64| if f > 0.0 && n >= 3 { ((f * n as f64).round() as usize).max(1) } else { 0 };
        let (n_val, n_cal) = (share(validation_fraction), share(calibration_fraction));
        if n_val + n_cal >= n {
            return Err(Error::Dataset(format!("{n} images cannot be split three ways")));
        }
        let calibration_imgs = usable.split_off(n - n_cal);
        let validation_imgs = usable.split_off(n - n_cal - n_val);
        let c_val = (count as f64 * validation_fraction).round() as usize;
        let c_cal = (count as f64 * calibration_fraction).round() as usize;
        let c_train = count.saturating_sub(c_val + c_cal);
        Ok(PatchSet {
            patch_size,
            train: random_crops(&usable, patch_size, c_train, &mut rng)?,
            validation: random_crops(&validation_imgs, patch_size, c_val.max(1), &mut rng)?,
            calibration: random_crops(&calibration_imgs, patch_size, c_cal.max(1), &mut rng)?,
        })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.calibration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads every PGM/PNG in `dir` and cuts a [`PatchSet`] from them.
pub fn ingest_dataset(dir: impl AsRef<Path>, config: &TrainConfig) -> Result<PatchSet> {
    let dir = dir.as_ref();
    let paths = list_images(dir)
        .map_err(|e| Error::Dataset(format!("cannot list {}: {e}", dir.display())))?;
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no PGM or PNG images in {}", dir.display())));
    }
    let images = paths.iter().map(read_image).collect::<Result<Vec<_>>>()?;
    PatchSet::from_images(
        images,
        config.patch_size,
        config.patch_count,
        config.validation_fraction,
        config.calibration_fraction,
        config.seed,
    )
}

/// Stacks patches into an `(n, 1, p, p)` batch.
pub fn batch_tensor(patches: &[&GrayImage]) -> Result<Tensor> {
    let items: Vec<Tensor> = patches.iter().map(|p| p.to_tensor()).collect();
    Tensor::stack(&items)
}

/// The objective built on a graph, with handles to its parts.
#[derive(Debug)]
pub struct Objective {
    pub graph: Graph,
    pub nodes: ModelNodes,
    pub loss: NodeId,
    /// Summed squared error over the batch.
    pub sse: NodeId,
    /// Per-map rate terms in bits per coefficient.
    pub rate: NodeId,
    pub batch: usize,
    pub pixels: usize,
}

impl Objective {
    pub fn loss_value(&self) -> f64 {
        self.graph.value(self.loss).data()[0]
    }

    pub fn mse(&self) -> f64 {
        self.graph.value(self.sse).data()[0] / self.pixels as f64
    }

    /// Mean of the per-map rate terms.
    pub fn rate_per_coefficient(&self) -> f64 {
        let r = self.graph.value(self.rate);
        r.sum() / r.len() as f64
    }
}

/// `(1/B) Σ_b ‖X_b − g_d(g_e(X_b) + Δ⊙T_b)‖² + γ Σ_i h̃_i`, with the rate terms
/// evaluated on the same noisy latents the decoder sees.
pub fn rd_objective(
    batch: &Tensor,
    params: &ModelParams,
    arch: &ArchConfig,
    gamma: f64,
    tau: &Tensor,
    trainable: &[ParamGroup],
) -> Result<Objective> {
    let (n, _, _, _) = batch.dims4()?;
    let mut graph = Graph::new();
    let nodes = ModelNodes::register(&mut graph, params, trainable);
    let x = graph.constant(batch.clone());
    let y = nodes.encode(&mut graph, arch, x)?;
    let noisy = graph.scaled_noise(y, nodes.log_delta, tau.clone())?;
    let x_hat = nodes.decode(&mut graph, arch, noisy)?;
    let sse = graph.squared_error(x_hat, batch.clone())?;
    let rate = graph.rate(noisy, nodes.log_delta, nodes.psi_mu, nodes.psi_log_b)?;
    let rate_sum = graph.sum(rate)?;
    let distortion = graph.scale(sse, 1.0 / n as f64)?;
    let weighted = graph.scale(rate_sum, gamma)?;
    let loss = graph.add(distortion, weighted)?;
    Ok(Objective { graph, nodes, loss, sse, rate, batch: n, pixels: batch.len() })
}

/// Rate-only objective for the entropy-model step: `γ Σ_i h̃_i` on fixed noisy latents.
fn psi_objective(noisy: &Tensor, params: &ModelParams, gamma: f64) -> Result<(Graph, ModelNodes, NodeId)> {
    let mut graph = Graph::new();
    let nodes = ModelNodes::register(&mut graph, params, &[ParamGroup::Psi]);
    let v = graph.constant(noisy.clone());
    let rate = graph.rate(v, nodes.log_delta, nodes.psi_mu, nodes.psi_log_b)?;
    let total = graph.sum(rate)?;
    let loss = graph.scale(total, gamma)?;
    Ok((graph, nodes, loss))
}

/// Adam over a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Usage(format!("{} tensors but {} gradients", params.len(), grads.len())));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].len() != g.len() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub mse: f64,
    pub rate_bits_per_coeff: f64,
    pub val_loss: f64,
    pub val_mse: f64,
    pub val_rate_bits_per_coeff: f64,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    /// Transform-step loss of every batch.
    pub losses: Vec<f64>,
    pub log: Vec<LogRow>,
}

impl TrainOutput {
    pub fn log_csv(&self) -> String {
        let m = self.model.arch.m;
        let mut out = String::from("step,loss,mse,rate_bits_per_coeff,val_loss,val_mse,val_rate_bits_per_coeff");
        for i in 0..m {
            let _ = write!(out, ",delta_{i}");
        }
        out.push('\n');
        for r in &self.log {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                r.step, r.loss, r.mse, r.rate_bits_per_coeff, r.val_loss, r.val_mse, r.val_rate_bits_per_coeff
            );
            for d in &r.deltas {
                let _ = write!(out, ",{d}");
            }
            out.push('\n');
        }
        out
    }
}

fn diverged(step: usize, err: Error) -> Error {
    match err {
        Error::Numeric(term) => Error::Diverged { step, term },
        other => other,
    }
}

fn dump_state(config: &TrainConfig, arch: &ArchConfig, params: &ModelParams) {
    if let Some(path) = &config.dump_path {
        let model = Model { arch: arch.clone(), params: params.clone() };
        match model.save(path) {
            Ok(()) => log::error!("diverged; parameters dumped to {}", path.display()),
            Err(e) => log::error!("diverged; could not dump parameters: {e}"),
        }
    }
}

/// Objective averaged over the validation patches with fixed noise.
fn validate(
    data: &[GrayImage],
    params: &ModelParams,
    arch: &ArchConfig,
    config: &TrainConfig,
) -> Result<(f64, f64, f64)> {
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN, f64::NAN));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0F_7A11);
    let (mut loss, mut mse, mut rate, mut count) = (0.0, 0.0, 0.0, 0.0);
    for chunk in data.chunks(config.batch_size) {
        let refs: Vec<&GrayImage> = chunk.iter().collect();
        let batch = batch_tensor(&refs)?;
        let lat = latent_shape(arch, &batch)?;
        let tau = uniform_noise(&lat, &mut rng);
        let obj = rd_objective(&batch, params, arch, config.gamma, &tau, &[])?;
        let w = chunk.len() as f64;
        loss += obj.loss_value() * w;
        mse += obj.mse() * w;
        rate += obj.rate_per_coefficient() * w;
        count += w;
    }
    Ok((loss / count, mse / count, rate / count))
}

fn latent_shape(arch: &ArchConfig, batch: &Tensor) -> Result<Vec<usize>> {
    let (n, _, h, w) = batch.dims4()?;
    let s = arch.total_stride();
    Ok(vec![n, arch.m, h / s, w / s])
}

/// Runs the alternating optimization and estimates the centering means.
///
/// Per batch: (1) Adam on the transform followed by GDN projection, (2) Adam
/// on the log steps (only with `learn_delta`), (3) Adam on the entropy-model
/// parameters using freshly encoded latents. All three use the same noise.
pub fn train(config: &TrainConfig, data: &PatchSet) -> Result<TrainOutput> {
    config.validate()?;
    if data.patch_size != config.patch_size {
        return Err(Error::Config(format!(
            "patches are {}px but the config asks for {}px",
            data.patch_size, config.patch_size
        )));
    }
    if config.steps > 0 && data.train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let arch = config.arch();
    let mut params = ModelParams::init(&arch, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut opt_t = Adam::new(config.lr_transform);
    let mut opt_d = Adam::new(config.lr_delta);
    let mut opt_p = Adam::new(config.lr_psi);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(config.steps);
    let mut log = Vec::new();

    for step in 1..=config.steps {
        let mut picks = Vec::with_capacity(config.batch_size);
        while picks.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picks.push(&data.train[order[cursor]]);
            cursor += 1;
        }
        let batch = batch_tensor(&picks)?;
        let tau = uniform_noise(&latent_shape(&arch, &batch)?, &mut rng);

        let outcome = (|| -> Result<(f64, f64, f64)> {
            let obj = rd_objective(&batch, &params, &arch, config.gamma, &tau, &[ParamGroup::Transform])?;
            let stats = (obj.loss_value(), obj.mse(), obj.rate_per_coefficient());
            let mut grads = obj.graph.backward(obj.loss)?;
            let g = obj.nodes.group_grads(&mut grads, ParamGroup::Transform);
            opt_t.step(params.group_mut(ParamGroup::Transform), &g)?;
            params.project_gdn();

            if config.learn_delta {
                let obj = rd_objective(&batch, &params, &arch, config.gamma, &tau, &[ParamGroup::Delta])?;
                let mut grads = obj.graph.backward(obj.loss)?;
                let g = obj.nodes.group_grads(&mut grads, ParamGroup::Delta);
                opt_d.step(params.group_mut(ParamGroup::Delta), &g)?;
            }

            let model = Model { arch: arch.clone(), params: params.clone() };
            let y = model.encode_transform(&batch)?;
            let mut g_noise = Graph::new();
            let nodes = ModelNodes::register(&mut g_noise, &params, &[]);
            let yi = g_noise.constant(y);
            let noisy = g_noise.scaled_noise(yi, nodes.log_delta, tau.clone())?;
            let (graph, nodes, loss) = psi_objective(g_noise.value(noisy), &params, config.gamma)?;
            let mut grads = graph.backward(loss)?;
            let g = nodes.group_grads(&mut grads, ParamGroup::Psi);
            opt_p.step(params.group_mut(ParamGroup::Psi), &g)?;
            Ok(stats)
        })();

        let (loss, mse, rate) = match outcome {
            Ok(v) if v.0.is_finite() => v,
            Ok(v) => {
                dump_state(config, &arch, &params);
                return Err(Error::Diverged { step, term: format!("loss = {}", v.0) });
            }
            Err(e) => {
                let e = diverged(step, e);
                if matches!(e, Error::Diverged { .. }) {
                    dump_state(config, &arch, &params);
                }
                return Err(e);
            }
        };
        losses.push(loss);
        if step % config.log_every == 0 || step == config.steps {
            let (val_loss, val_mse, val_rate) =
                validate(&data.validation, &params, &arch, config).map_err(|e| diverged(step, e))?;
            log::info!(
                "step {step}: loss {loss:.3} mse {mse:.3} rate {rate:.4} bits/coeff, val loss {val_loss:.3}"
            );
            log.push(LogRow {
                step,
                loss,
                mse,
                rate_bits_per_coeff: rate,
                val_loss,
                val_mse,
                val_rate_bits_per_coeff: val_rate,
                deltas: params.deltas(),
            });
        }
    }

    let mut model = Model { arch, params };
    let calib = if data.calibration.is_empty() { &data.train } else { &data.calibration };
    let tensors: Vec<Tensor> = calib
        .chunks(config.batch_size)
        .map(|c| batch_tensor(&c.iter().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let means = estimate_means(&model, &tensors)?;
    model.params.mu_bar = Tensor::from_vec(means);
    Ok(TrainOutput { model, losses, log })
}
