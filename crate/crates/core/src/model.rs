//! Analysis/synthesis transforms, their parameters and the model file.
//!
//! Model file layout (all integers little-endian):
//!
//! ```text
//! "LTAE" | version u8 = 1
//! m u16 | layer count u8 | per layer: out_ch u16, kernel u8, stride u8, pad u8
//! end_normalization u8
//! repeated: name_len u8, name bytes, element count u32, f64 values
//! CRC32 of every preceding byte (u32)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, NodeId};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"LTAE";
pub const MODEL_VERSION: u8 = 1;

/// Images enter the encoder divided by this and leave the decoder multiplied by it.
pub const PIXEL_SCALE: f64 = 255.0;

/// Lower bound kept on every GDN/IGDN beta.
pub const GDN_BETA_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl LayerSpec {
    /// Transpose-conv output padding that restores the conv's input extent.
    pub fn output_padding(&self) -> usize {
        self.stride + 2 * self.pad - self.kernel
    }
}

/// One stage of a transform, in application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Conv { index: usize, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    Gdn { index: usize, channels: usize },
    TConv { index: usize, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    Igdn { index: usize, channels: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    /// Number of latent feature maps.
    pub m: usize,
    pub layers: Vec<LayerSpec>,
    /// Adds a GDN after the encoder and an IGDN before the decoder.
    pub end_normalization: bool,
}

impl ArchConfig {
    /// conv(32, 9×9, /4) → GDN → conv(32, 5×5, /2) → GDN → conv(m, 5×5, /2).
    pub fn desk(m: usize, end_normalization: bool) -> Self {
        ArchConfig {
            m,
            layers: vec![
                LayerSpec { out_channels: 32, kernel: 9, stride: 4, pad: 4 },
                LayerSpec { out_channels: 32, kernel: 5, stride: 2, pad: 2 },
                LayerSpec { out_channels: m, kernel: 5, stride: 2, pad: 2 },
            ],
            end_normalization,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let last = self
            .layers
            .last()
            .ok_or_else(|| Error::Config("architecture has no layers".into()))?;
        if last.out_channels != self.m || self.m == 0 {
            return Err(Error::Config(format!(
                "last layer has {} channels but m = {}",
                last.out_channels, self.m
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.stride == 0 || l.kernel == 0 || l.out_channels == 0 {
                return Err(Error::Config(format!("layer {i} has a zero extent")));
            }
            let full = l.stride + 2 * l.pad;
            if full < l.kernel || full - l.kernel >= l.stride {
                return Err(Error::Config(format!(
                    "layer {i} (k={}, s={}, p={}) cannot be mirrored to the same extent",
                    l.kernel, l.stride, l.pad
                )));
            }
        }
        Ok(())
    }

    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    fn in_channels(&self, index: usize) -> usize {
        if index == 0 {
            1
        } else {
            self.layers[index - 1].out_channels
        }
    }

    pub fn encoder_stages(&self) -> Vec<Stage> {
        let mut stages = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            stages.push(Stage::Conv {
                index: i,
                in_ch: self.in_channels(i),
                out_ch: l.out_channels,
                kernel: l.kernel,
                stride: l.stride,
                pad: l.pad,
            });
            if i + 1 < self.layers.len() || self.end_normalization {
                stages.push(Stage::Gdn { index: i, channels: l.out_channels });
            }
        }
        stages
    }

    /// Mirror of [`Self::encoder_stages`]: reversed, conv → transpose conv, GDN → IGDN.
    pub fn decoder_stages(&self) -> Vec<Stage> {
        self.encoder_stages()
            .into_iter()
            .rev()
            .map(|s| match s {
                Stage::Conv { index, in_ch, out_ch, kernel, stride, pad } => Stage::TConv {
                    index,
                    in_ch: out_ch,
                    out_ch: in_ch,
                    kernel,
                    stride,
                    pad,
                },
                Stage::Gdn { index, channels } => Stage::Igdn { index, channels },
                other => other,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdnParams {
    pub beta: Tensor,
    pub gamma: Tensor,
}

/// Parameter groups optimized in alternation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Encoder and decoder weights, biases and (I)GDN parameters.
    Transform,
    /// Per-map log quantization steps.
    Delta,
    /// Per-map entropy-model parameters.
    Psi,
}

/// All learnable state plus the centering means.
///
/// `dec_conv[i]` and `dec_gdn[i]` mirror `enc_conv[i]` and `enc_gdn[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub enc_conv: Vec<ConvParams>,
    pub enc_gdn: Vec<GdnParams>,
    pub dec_conv: Vec<ConvParams>,
    pub dec_gdn: Vec<GdnParams>,
    pub log_delta: Tensor,
    pub psi_mu: Tensor,
    pub psi_log_b: Tensor,
    pub mu_bar: Tensor,
}

fn gdn_init(c: usize) -> GdnParams {
    let mut gamma = Tensor::full(&[c, c], 1e-3);
    for i in 0..c {
        gamma.data_mut()[i * c + i] += 0.1;
    }
    GdnParams {
        beta: Tensor::full(&[c], 1.0),
        gamma,
    }
}

impl ModelParams {
    /// He-normal weights, zero biases, near-identity GDN, unit steps, unit-scale Laplace.
    ///
    /// The last decoder bias starts at mid-gray so training does not spend its
    /// first steps learning the image mean.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |shape: &[usize], fan_in: usize| -> Result<Tensor> {
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::Config(e.to_string()))?;
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(&mut rng)).collect())
        };
        let mut enc_conv = Vec::new();
        let mut enc_gdn = Vec::new();
        for stage in arch.encoder_stages() {
            match stage {
                Stage::Conv { in_ch, out_ch, kernel, .. } => enc_conv.push(ConvParams {
                    weight: normal(&[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel)?,
                    bias: Tensor::zeros(&[out_ch]),
                }),
                Stage::Gdn { channels, .. } => enc_gdn.push(gdn_init(channels)),
                _ => unreachable!("encoder holds conv and GDN stages only"),
            }
        }
        let mut dec_conv: Vec<Option<ConvParams>> = vec![None; arch.layers.len()];
        let mut dec_gdn: Vec<Option<GdnParams>> = vec![None; enc_gdn.len()];
        for stage in arch.decoder_stages() {
            match stage {
                Stage::TConv { index, in_ch, out_ch, kernel, .. } => {
                    dec_conv[index] = Some(ConvParams {
                        weight: normal(&[in_ch, out_ch, kernel, kernel], in_ch * kernel * kernel)?,
                        bias: Tensor::zeros(&[out_ch]),
                    })
                }
                Stage::Igdn { index, channels } => dec_gdn[index] = Some(gdn_init(channels)),
                _ => unreachable!("decoder holds transpose conv and IGDN stages only"),
            }
        }
        let mut dec_conv: Vec<ConvParams> = dec_conv.into_iter().map(Option::unwrap).collect();
        dec_conv[0].bias = Tensor::full(&[1], 127.5 / PIXEL_SCALE);
        let m = arch.m;
        Ok(ModelParams {
            enc_conv,
            enc_gdn,
            dec_conv,
            dec_gdn: dec_gdn.into_iter().map(Option::unwrap).collect(),
            log_delta: Tensor::zeros(&[m]),
            psi_mu: Tensor::zeros(&[m]),
            psi_log_b: Tensor::zeros(&[m]),
            mu_bar: Tensor::zeros(&[m]),
        })
    }

    /// Named tensors in canonical (file) order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.enc_conv.iter().enumerate() {
            out.push((format!("enc.conv{i}.weight"), &c.weight));
            out.push((format!("enc.conv{i}.bias"), &c.bias));
        }
        for (i, g) in self.enc_gdn.iter().enumerate() {
            out.push((format!("enc.gdn{i}.beta"), &g.beta));
            out.push((format!("enc.gdn{i}.gamma"), &g.gamma));
        }
        for (i, c) in self.dec_conv.iter().enumerate() {
            out.push((format!("dec.tconv{i}.weight"), &c.weight));
            out.push((format!("dec.tconv{i}.bias"), &c.bias));
        }
        for (i, g) in self.dec_gdn.iter().enumerate() {
            out.push((format!("dec.igdn{i}.beta"), &g.beta));
            out.push((format!("dec.igdn{i}.gamma"), &g.gamma));
        }
        out.push(("log_delta".into(), &self.log_delta));
        out.push(("psi.mu".into(), &self.psi_mu));
        out.push(("psi.log_b".into(), &self.psi_log_b));
        out.push(("mu_bar".into(), &self.mu_bar));
        out
    }

    fn named_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.enc_conv {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for g in &mut self.enc_gdn {
            out.push(&mut g.beta);
            out.push(&mut g.gamma);
        }
        for c in &mut self.dec_conv {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for g in &mut self.dec_gdn {
            out.push(&mut g.beta);
            out.push(&mut g.gamma);
        }
        out.push(&mut self.log_delta);
        out.push(&mut self.psi_mu);
        out.push(&mut self.psi_log_b);
        out.push(&mut self.mu_bar);
        out
    }

    /// Mutable tensors of one optimization group, in canonical order.
    pub fn group_mut(&mut self, group: ParamGroup) -> Vec<&mut Tensor> {
        match group {
            ParamGroup::Transform => {
                let n = self.transform_tensor_count();
                self.named_mut().into_iter().take(n).collect()
            }
            ParamGroup::Delta => vec![&mut self.log_delta],
            ParamGroup::Psi => vec![&mut self.psi_mu, &mut self.psi_log_b],
        }
    }

    fn transform_tensor_count(&self) -> usize {
        2 * (self.enc_conv.len() + self.enc_gdn.len() + self.dec_conv.len() + self.dec_gdn.len())
    }

    /// Total number of scalar parameters, centering means included.
    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Keeps every GDN/IGDN beta ≥ [`GDN_BETA_MIN`] and gamma ≥ 0.
    pub fn project_gdn(&mut self) {
        for g in self.enc_gdn.iter_mut().chain(self.dec_gdn.iter_mut()) {
            for b in g.beta.data_mut() {
                *b = b.max(GDN_BETA_MIN);
            }
            for v in g.gamma.data_mut() {
                *v = v.max(0.0);
            }
        }
    }

    /// Quantization steps `δ_i = exp(log_delta_i)`.
    pub fn deltas(&self) -> Vec<f64> {
        self.log_delta.data().iter().map(|l| l.exp()).collect()
    }
}

/// Graph handles for every parameter tensor of a [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelNodes {
    enc_conv: Vec<(NodeId, NodeId)>,
    enc_gdn: Vec<(NodeId, NodeId)>,
    dec_conv: Vec<(NodeId, NodeId)>,
    dec_gdn: Vec<(NodeId, NodeId)>,
    pub log_delta: NodeId,
    pub psi_mu: NodeId,
    pub psi_log_b: NodeId,
}

impl ModelNodes {
    /// Adds all parameters as leaves; only those in `trainable` require gradients.
    pub fn register(graph: &mut Graph, params: &ModelParams, trainable: &[ParamGroup]) -> Self {
        let t = trainable.contains(&ParamGroup::Transform);
        let mut pair = |a: &Tensor, b: &Tensor| (graph.leaf(a.clone(), t), graph.leaf(b.clone(), t));
        let enc_conv = params.enc_conv.iter().map(|c| pair(&c.weight, &c.bias)).collect();
        let enc_gdn = params.enc_gdn.iter().map(|g| pair(&g.beta, &g.gamma)).collect();
        let dec_conv = params.dec_conv.iter().map(|c| pair(&c.weight, &c.bias)).collect();
        let dec_gdn = params.dec_gdn.iter().map(|g| pair(&g.beta, &g.gamma)).collect();
        let d = trainable.contains(&ParamGroup::Delta);
        let p = trainable.contains(&ParamGroup::Psi);
        ModelNodes {
            enc_conv,
            enc_gdn,
            dec_conv,
            dec_gdn,
            log_delta: graph.leaf(params.log_delta.clone(), d),
            psi_mu: graph.leaf(params.psi_mu.clone(), p),
            psi_log_b: graph.leaf(params.psi_log_b.clone(), p),
        }
    }

    /// Gradients of one group, matching [`ModelParams::group_mut`] order.
    pub fn group_grads(&self, grads: &mut Gradients, group: ParamGroup) -> Vec<Tensor> {
        match group {
            ParamGroup::Transform => self
                .enc_conv
                .iter()
                .chain(&self.enc_gdn)
                .chain(&self.dec_conv)
                .chain(&self.dec_gdn)
                .flat_map(|&(a, b)| [grads.take(a), grads.take(b)])
                .collect(),
            ParamGroup::Delta => vec![grads.take(self.log_delta)],
            ParamGroup::Psi => vec![grads.take(self.psi_mu), grads.take(self.psi_log_b)],
        }
    }

    /// Appends the analysis transform; `x` holds pixels in `[0, 255]`.
    pub fn encode(&self, graph: &mut Graph, arch: &ArchConfig, x: NodeId) -> Result<NodeId> {
        let mut h = graph.scale(x, 1.0 / PIXEL_SCALE)?;
        for stage in arch.encoder_stages() {
            h = match stage {
                Stage::Conv { index, stride, pad, .. } => {
                    let (w, b) = self.enc_conv[index];
                    graph.conv2d(h, w, b, stride, pad)?
                }
                Stage::Gdn { index, .. } => {
                    let (beta, gamma) = self.enc_gdn[index];
                    graph.gdn(h, beta, gamma)?
                }
                _ => unreachable!(),
            };
        }
        Ok(h)
    }

    /// Appends the synthesis transform; output is in pixel units, unclamped.
    pub fn decode(&self, graph: &mut Graph, arch: &ArchConfig, y: NodeId) -> Result<NodeId> {
        let mut h = y;
        for stage in arch.decoder_stages() {
            h = match stage {
                Stage::TConv { index, stride, pad, .. } => {
                    let (w, b) = self.dec_conv[index];
                    let out_pad = arch.layers[index].output_padding();
                    graph.tconv2d(h, w, b, stride, pad, out_pad)?
                }
                Stage::Igdn { index, .. } => {
                    let (beta, gamma) = self.dec_gdn[index];
                    graph.igdn(h, beta, gamma)?
                }
                _ => unreachable!(),
            };
        }
        graph.scale(h, PIXEL_SCALE)
    }
}

/// Architecture plus parameters: everything needed to run the codec.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(arch: ArchConfig, params: ModelParams) -> Result<Self> {
        arch.validate()?;
        let expected = ModelParams::init(&arch, 0)?;
        let want = expected.named();
        let have = params.named();
        if want.len() != have.len() {
            return Err(Error::Shape(format!(
                "architecture needs {} parameter tensors, got {}",
                want.len(),
                have.len()
            )));
        }
        for ((name, w), (_, h)) in want.iter().zip(&have) {
            if w.shape() != h.shape() {
                return Err(Error::Shape(format!(
                    "{name}: expected shape {:?}, got {:?}",
                    w.shape(),
                    h.shape()
                )));
            }
        }
        Ok(Model { arch, params })
    }

    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&arch, seed)?;
        Ok(Model { arch, params })
    }

    fn check_divisible(&self, h: usize, w: usize, scale: usize) -> Result<()> {
        if h == 0 || w == 0 || h % scale != 0 || w % scale != 0 {
            return Err(Error::Shape(format!(
                "spatial extent {h}x{w} is not a positive multiple of {scale}"
            )));
        }
        Ok(())
    }

    /// Latent `Y` of shape `(n, m, h/s, w/s)` for images `(n, 1, h, w)`.
    pub fn encode_transform(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!("expected 1 input channel, got {c}")));
        }
        self.check_divisible(h, w, self.arch.total_stride())?;
        let mut g = Graph::new();
        let nodes = ModelNodes::register(&mut g, &self.params, &[]);
        let xi = g.constant(x.clone());
        let y = nodes.encode(&mut g, &self.arch, xi)?;
        Ok(g.value(y).clone())
    }

    /// Reconstruction `(n, 1, h·s, w·s)` in pixel units, not clamped.
    pub fn decode_transform(&self, y_hat: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = y_hat.dims4()?;
        if c != self.arch.m {
            return Err(Error::Shape(format!(
                "latent has {c} maps, model expects {}",
                self.arch.m
            )));
        }
        self.check_divisible(h, w, 1)?;
        let mut g = Graph::new();
        let nodes = ModelNodes::register(&mut g, &self.params, &[]);
        let yi = g.constant(y_hat.clone());
        let x = nodes.decode(&mut g, &self.arch, yi)?;
        Ok(g.value(x).clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.push(MODEL_VERSION);
        out.extend_from_slice(&(self.arch.m as u16).to_le_bytes());
        out.push(self.arch.layers.len() as u8);
        for l in &self.arch.layers {
            out.extend_from_slice(&(l.out_channels as u16).to_le_bytes());
            out.push(l.kernel as u8);
            out.push(l.stride as u8);
            out.push(l.pad as u8);
        }
        out.push(u8::from(self.arch.end_normalization));
        for (name, t) in self.params.named() {
            out.push(name.len() as u8);
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// CRC32 stored at the end of the model file; bitstreams bind to it.
    pub fn checksum(&self) -> u32 {
        let bytes = self.to_bytes();
        u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
            return Err(Error::BadMagic { expected: "LTAE" });
        }
        if bytes.len() < 5 {
            return Err(Error::Truncated("model file"));
        }
        if bytes[4] != MODEL_VERSION {
            return Err(Error::Version(bytes[4]));
        }
        if bytes.len() < 9 {
            return Err(Error::Truncated("model file"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 5 };
        let m = r.u16()? as usize;
        let count = r.u8()? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            layers.push(LayerSpec {
                out_channels: r.u16()? as usize,
                kernel: r.u8()? as usize,
                stride: r.u8()? as usize,
                pad: r.u8()? as usize,
            });
        }
        let end_normalization = match r.u8()? {
            0 => false,
            1 => true,
            v => {
                return Err(Error::Format {
                    what: "model file",
                    detail: format!("end_normalization flag {v}"),
                })
            }
        };
        let arch = ArchConfig { m, layers, end_normalization };
        arch.validate()?;
        let mut params = ModelParams::init(&arch, 0)?;
        let names: Vec<(String, Vec<usize>)> = params
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        let slots = params.named_mut();
        for ((name, shape), slot) in names.into_iter().zip(slots) {
            let len = r.u8()? as usize;
            let got = r.take(len)?;
            if got != name.as_bytes() {
                return Err(Error::Format {
                    what: "model file",
                    detail: format!(
                        "expected section {name}, found {}",
                        String::from_utf8_lossy(got)
                    ),
                });
            }
            let n = r.u32()? as usize;
            if n != slot.len() {
                return Err(Error::Format {
                    what: "model file",
                    detail: format!("section {name} has {n} values, expected {}", slot.len()),
                });
            }
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            *slot = Tensor::new(shape, data)?;
        }
        if r.pos != body.len() {
            return Err(Error::Format {
                what: "model file",
                detail: format!("{} trailing bytes", body.len() - r.pos),
            });
        }
        Ok(Model { arch, params })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Model::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated("model file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoder_mirrors_encoder() {
        for end in [false, true] {
            let arch = ArchConfig::desk(8, end);
            let enc = arch.encoder_stages();
            let dec = arch.decoder_stages();
            assert_eq!(enc.len(), dec.len());
            for (e, d) in enc.iter().rev().zip(&dec) {
                match (e, d) {
                    (
                        Stage::Conv { index: a, in_ch, out_ch, kernel, stride, pad },
                        Stage::TConv { index: b, in_ch: ti, out_ch: to, kernel: tk, stride: ts, pad: tp },
                    ) => {
                        assert_eq!((a, in_ch, out_ch, kernel, stride, pad), (b, to, ti, tk, ts, tp));
                    }
                    (Stage::Gdn { index: a, channels: c }, Stage::Igdn { index: b, channels: d }) => {
                        assert_eq!((a, c), (b, d));
                    }
                    other => panic!("stage mismatch {other:?}"),
                }
            }
        }
    }

    #[test]
    fn end_normalization_adds_two_gdn_blocks() {
        let m = 8;
        let a = Model::init(ArchConfig::desk(m, false), 1).unwrap();
        let b = Model::init(ArchConfig::desk(m, true), 1).unwrap();
        assert_eq!(b.params.param_count() - a.params.param_count(), 2 * (m + m * m));
    }

    #[test]
    fn latent_shapes() {
        let model = Model::init(ArchConfig::desk(32, false), 3).unwrap();
        let x = Tensor::full(&[1, 1, 64, 64], 100.0);
        let y = model.encode_transform(&x).unwrap();
        assert_eq!(y.shape(), &[1, 32, 4, 4]);
        let xr = model.decode_transform(&y).unwrap();
        assert_eq!(xr.shape(), x.shape());
        let bad = Tensor::zeros(&[1, 1, 40, 64]);
        assert!(matches!(model.encode_transform(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let mut model = Model::init(ArchConfig::desk(4, false), 3).unwrap();
        for c in model.params.enc_conv.iter_mut().chain(model.params.dec_conv.iter_mut()) {
            c.weight.data_mut().fill(0.0);
            c.bias.data_mut().fill(0.0);
        }
        let x = Tensor::full(&[1, 1, 32, 32], 77.0);
        let y = model.encode_transform(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let xr = model.decode_transform(&Tensor::zeros(&[1, 4, 2, 2])).unwrap();
        assert!(xr.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn model_file_round_trip_and_corruption() {
        let model = Model::init(ArchConfig::desk(4, true), 9).unwrap();
        let bytes = model.to_bytes();
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_bytes(), bytes);

        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x40;
        assert!(matches!(Model::from_bytes(&bad), Err(Error::Checksum { .. })));
        assert!(matches!(Model::from_bytes(&[]), Err(Error::BadMagic { .. })));
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 2;
        assert!(matches!(Model::from_bytes(&wrong_version), Err(Error::Version(2))));
        assert!(Model::from_bytes(&bytes[..bytes.len() - 10]).is_err());
    }
}
