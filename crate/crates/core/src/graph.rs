//! Tape-based reverse-mode differentiation over the codec's operator set.
//!
//! Nodes are appended in evaluation order, so the node list is always a
//! topological order. Each node keeps its forward value; backward walks the
//! list in reverse and only visits nodes that depend on a gradient-requiring
//! leaf.

use crate::entropy;
use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    TConv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize, out_pad: usize },
    Gdn { x: NodeId, beta: NodeId, gamma: NodeId, inverse: bool },
    /// `y + max(exp(log_delta_c), DELTA_FLOOR) · tau` per channel `c`.
    ScaledNoise { y: NodeId, log_delta: NodeId, tau: Tensor },
    /// Per-map rate term in bits per coefficient; output has one entry per map.
    Rate { v: NodeId, log_delta: NodeId, mu: NodeId, log_b: NodeId },
    /// `Σ (x - target)²` against a constant target.
    SquaredError { x: NodeId, target: Tensor },
    /// `mean (x - target)²` against a constant target.
    MeanSquaredError { x: NodeId, target: Tensor },
    Sum { x: NodeId },
    Scale { x: NodeId, factor: f64 },
    Add { a: NodeId, b: NodeId },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Smallest quantization step the noise and rate ops will use.
pub const DELTA_FLOOR: f64 = 1e-8;

pub(crate) fn step_from_log(log_delta: f64) -> f64 {
    log_delta.exp().max(DELTA_FLOOR)
}

/// Computation graph recording forward values for a later backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by node; nodes not reached by backward read as zero.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}

fn channels_of(t: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = t.dims4()?;
    Ok((n, c, h * w))
}

fn check_finite(t: Tensor, what: &str) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::Numeric(format!("{what} produced a non-finite value")))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let out = kernels::conv2d(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let out = check_finite(out, "conv2d")?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(Op::Conv2d { x, w, b, stride, pad }, out, rg))
    }

    pub fn tconv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<NodeId> {
        let out = kernels::tconv2d(self.value(x), self.value(w), self.value(b), stride, pad, out_pad)?;
        let out = check_finite(out, "tconv2d")?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(Op::TConv2d { x, w, b, stride, pad, out_pad }, out, rg))
    }

    pub fn gdn(&mut self, x: NodeId, beta: NodeId, gamma: NodeId) -> Result<NodeId> {
        self.gdn_impl(x, beta, gamma, false)
    }

    pub fn igdn(&mut self, x: NodeId, beta: NodeId, gamma: NodeId) -> Result<NodeId> {
        self.gdn_impl(x, beta, gamma, true)
    }

    fn gdn_impl(&mut self, x: NodeId, beta: NodeId, gamma: NodeId, inverse: bool) -> Result<NodeId> {
        let out = kernels::gdn(self.value(x), self.value(beta), self.value(gamma), inverse)?;
        let out = check_finite(out, if inverse { "igdn" } else { "gdn" })?;
        let rg = self.any_grad(&[x, beta, gamma]);
        Ok(self.push(Op::Gdn { x, beta, gamma, inverse }, out, rg))
    }

    /// Adds `δ_c · tau` to every coefficient of channel `c`, with `δ_c = exp(log_delta_c)`.
    pub fn scaled_noise(&mut self, y: NodeId, log_delta: NodeId, tau: Tensor) -> Result<NodeId> {
        let yv = self.value(y);
        if yv.shape() != tau.shape() {
            return Err(Error::Shape(format!(
                "noise shape {:?} differs from latent shape {:?}",
                tau.shape(),
                yv.shape()
            )));
        }
        let (_, c, plane) = channels_of(yv)?;
        let ld = self.value(log_delta);
        if ld.len() != c {
            return Err(Error::Shape(format!("{} step sizes for {c} maps", ld.len())));
        }
        let steps: Vec<f64> = ld.data().iter().map(|&l| step_from_log(l)).collect();
        let mut out = yv.clone();
        for (i, (o, t)) in out.data_mut().iter_mut().zip(tau.data()).enumerate() {
            *o += steps[(i / plane) % c] * t;
        }
        let out = check_finite(out, "scaled_noise")?;
        let rg = self.any_grad(&[y, log_delta]);
        Ok(self.push(Op::ScaledNoise { y, log_delta, tau }, out, rg))
    }

    /// Per-map differentiable rate `-log2 δ_i - mean_j log2 p̃_i(v_ij)` (bits per coefficient).
    pub fn rate(&mut self, v: NodeId, log_delta: NodeId, mu: NodeId, log_b: NodeId) -> Result<NodeId> {
        let (n, c, plane) = channels_of(self.value(v))?;
        for (id, what) in [(log_delta, "step"), (mu, "location"), (log_b, "scale")] {
            if self.value(id).len() != c {
                return Err(Error::Shape(format!(
                    "{} {what} parameters for {c} maps",
                    self.value(id).len()
                )));
            }
        }
        let vals = self.value(v).data();
        let mut out = vec![0.0; c];
        for (ch, slot) in out.iter_mut().enumerate() {
            let delta = step_from_log(self.value(log_delta).data()[ch]);
            let mu_c = self.value(mu).data()[ch];
            let b_c = self.value(log_b).data()[ch].exp();
            let mut acc = 0.0;
            for bi in 0..n {
                let start = (bi * c + ch) * plane;
                for &y in &vals[start..start + plane] {
                    acc += entropy::log_p_tilde_grad(y, mu_c, b_c, delta).log_density;
                }
            }
            *slot = -delta.log2() - acc / ((n * plane) as f64 * std::f64::consts::LN_2);
        }
        let out = check_finite(Tensor::from_vec(out), "rate")?;
        let rg = self.any_grad(&[v, log_delta, mu, log_b]);
        Ok(self.push(Op::Rate { v, log_delta, mu, log_b }, out, rg))
    }

    pub fn squared_error(&mut self, x: NodeId, target: Tensor) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "squared error between {:?} and {:?}",
                xv.shape(),
                target.shape()
            )));
        }
        let s: f64 = xv.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let out = check_finite(Tensor::scalar(s), "squared_error")?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::SquaredError { x, target }, out, rg))
    }

    pub fn mse(&mut self, x: NodeId, target: Tensor) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape() != target.shape() || xv.is_empty() {
            return Err(Error::Shape(format!(
                "mse between {:?} and {:?}",
                xv.shape(),
                target.shape()
            )));
        }
        let s: f64 = xv.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let out = check_finite(Tensor::scalar(s / xv.len() as f64), "mse")?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::MeanSquaredError { x, target }, out, rg))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let out = check_finite(Tensor::scalar(self.value(x).sum()), "sum")?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::Sum { x }, out, rg))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let out = check_finite(self.value(x).map(|v| v * factor), "scale")?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::Scale { x, factor }, out, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add between {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let out = check_finite(out, "add")?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Add { a, b }, out, rg))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, node has shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else { continue };
            let pending = self.local_grads(&node.op, &gout)?;
            for (id, g) in pending {
                if !self.nodes[id.0].requires_grad {
                    continue;
                }
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            // Leaves keep their accumulated gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(gout);
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn local_grads(&self, op: &Op, gout: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
        let rg = |id: NodeId| self.nodes[id.0].requires_grad;
        let mut out = Vec::new();
        match *op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(x),
                    self.value(w),
                    gout,
                    stride,
                    pad,
                    [rg(x), rg(w), rg(b)],
                )?;
                push_some(&mut out, [(x, dx), (w, dw), (b, db)]);
            }
            Op::TConv2d { x, w, b, stride, pad, out_pad } => {
                let (dx, dw, db) = kernels::tconv2d_backward(
                    self.value(x),
                    self.value(w),
                    gout,
                    stride,
                    pad,
                    out_pad,
                    [rg(x), rg(w), rg(b)],
                )?;
                push_some(&mut out, [(x, dx), (w, dw), (b, db)]);
            }
            Op::Gdn { x, beta, gamma, inverse } => {
                let (dx, dbeta, dgamma) = kernels::gdn_backward(
                    self.value(x),
                    self.value(beta),
                    self.value(gamma),
                    gout,
                    inverse,
                    [rg(x), rg(beta), rg(gamma)],
                )?;
                push_some(&mut out, [(x, dx), (beta, dbeta), (gamma, dgamma)]);
            }
            Op::ScaledNoise { y, log_delta, ref tau } => {
                if rg(y) {
                    out.push((y, gout.clone()));
                }
                if rg(log_delta) {
                    let (_, c, plane) = channels_of(tau)?;
                    let ld = self.value(log_delta).data();
                    let mut d = vec![0.0; c];
                    for (i, (g, t)) in gout.data().iter().zip(tau.data()).enumerate() {
                        d[(i / plane) % c] += g * t;
                    }
                    for (dc, &l) in d.iter_mut().zip(ld) {
                        // d δ / d log δ = δ, zero once the floor clamps.
                        let delta = l.exp();
                        *dc *= if delta > DELTA_FLOOR { delta } else { 0.0 };
                    }
                    out.push((log_delta, Tensor::from_vec(d)));
                }
            }
            Op::Rate { v, log_delta, mu, log_b } => {
                let vt = self.value(v);
                let (n, c, plane) = channels_of(vt)?;
                let count = (n * plane) as f64;
                let mut dv = rg(v).then(|| vec![0.0; vt.len()]);
                let mut dld = vec![0.0; c];
                let mut dmu = vec![0.0; c];
                let mut dlb = vec![0.0; c];
                for ch in 0..c {
                    let ld = self.value(log_delta).data()[ch];
                    let delta = step_from_log(ld);
                    let mu_c = self.value(mu).data()[ch];
                    let b_c = self.value(log_b).data()[ch].exp();
                    // h = -log2 δ - (1/N) Σ ln p̃ / ln 2
                    let coef = -gout.data()[ch] / (count * std::f64::consts::LN_2);
                    let mut d_delta = -gout.data()[ch] / (delta * std::f64::consts::LN_2);
                    for bi in 0..n {
                        let start = (bi * c + ch) * plane;
                        for j in start..start + plane {
                            let lg = entropy::log_p_tilde_grad(vt.data()[j], mu_c, b_c, delta);
                            if let Some(dv) = dv.as_mut() {
                                dv[j] = coef * lg.d_y;
                            }
                            d_delta += coef * lg.d_delta;
                            dmu[ch] += coef * lg.d_mu;
                            dlb[ch] += coef * lg.d_b * b_c;
                        }
                    }
                    dld[ch] = if ld.exp() > DELTA_FLOOR { d_delta * delta } else { 0.0 };
                }
                if let Some(dv) = dv {
                    out.push((v, Tensor::new(vt.shape().to_vec(), dv)?));
                }
                if rg(log_delta) {
                    out.push((log_delta, Tensor::from_vec(dld)));
                }
                if rg(mu) {
                    out.push((mu, Tensor::from_vec(dmu)));
                }
                if rg(log_b) {
                    out.push((log_b, Tensor::from_vec(dlb)));
                }
            }
            Op::SquaredError { x, ref target } => {
                let g = gout.data()[0];
                let d: Vec<f64> = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, t)| 2.0 * g * (a - t))
                    .collect();
                out.push((x, Tensor::new(target.shape().to_vec(), d)?));
            }
            Op::MeanSquaredError { x, ref target } => {
                let g = gout.data()[0] / target.len() as f64;
                let d: Vec<f64> = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, t)| 2.0 * g * (a - t))
                    .collect();
                out.push((x, Tensor::new(target.shape().to_vec(), d)?));
            }
            Op::Sum { x } => {
                out.push((x, Tensor::full(self.value(x).shape(), gout.data()[0])));
            }
            Op::Scale { x, factor } => {
                out.push((x, gout.map(|g| g * factor)));
            }
            Op::Add { a, b } => {
                out.push((a, gout.clone()));
                out.push((b, gout.clone()));
            }
        }
        Ok(out)
    }
}

fn push_some<const N: usize>(out: &mut Vec<(NodeId, Tensor)>, items: [(NodeId, Option<Tensor>); N]) {
    for (id, g) in items {
        if let Some(g) = g {
            out.push((id, g));
        }
    }
}
