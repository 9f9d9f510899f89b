//! Independent oracles shared by the integration tests: naive nested-loop
//! kernels, a straight-line evaluation of the training objective, and a
//! central finite-difference gradient checker.
#![allow(dead_code)]

use ltc::graph::{Graph, NodeId};
use ltc::model::{ArchConfig, ModelParams};
use ltc::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Cross-correlation by nested loops; weight `(c_out, c_in, k, k)`.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, ci, h, wd) = x.dims4().unwrap();
    let (co, _, k, _) = w.dims4().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for bi in 0..n {
        for o in 0..co {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = b.data()[o];
                    for i in 0..ci {
                        for kr in 0..k {
                            for kc in 0..k {
                                let ir = (r * stride + kr) as i64 - pad as i64;
                                let ic = (c * stride + kc) as i64 - pad as i64;
                                if ir < 0 || ic < 0 || ir >= h as i64 || ic >= wd as i64 {
                                    continue;
                                }
                                let xv = x.data()[((bi * ci + i) * h + ir as usize) * wd + ic as usize];
                                acc += xv * w.data()[((o * ci + i) * k + kr) * k + kc];
                            }
                        }
                    }
                    out[((bi * co + o) * oh + r) * ow + c] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, co, oh, ow], out).unwrap()
}

/// Transpose convolution by scatter-accumulate; weight `(c_in, c_out, k, k)`.
pub fn naive_tconv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize, out_pad: usize) -> Tensor {
    let (n, ci, h, wd) = x.dims4().unwrap();
    let (_, co, k, _) = w.dims4().unwrap();
    let oh = (h - 1) * stride + k + out_pad - 2 * pad;
    let ow = (wd - 1) * stride + k + out_pad - 2 * pad;
    let mut out = vec![0.0; n * co * oh * ow];
    for bi in 0..n {
        for o in 0..co {
            for v in &mut out[(bi * co + o) * oh * ow..(bi * co + o + 1) * oh * ow] {
                *v = b.data()[o];
            }
        }
        for i in 0..ci {
            for r in 0..h {
                for c in 0..wd {
                    let xv = x.data()[((bi * ci + i) * h + r) * wd + c];
                    for o in 0..co {
                        for kr in 0..k {
                            for kc in 0..k {
                                let orr = (r * stride + kr) as i64 - pad as i64;
                                let oc = (c * stride + kc) as i64 - pad as i64;
                                if orr < 0 || oc < 0 || orr >= oh as i64 || oc >= ow as i64 {
                                    continue;
                                }
                                out[((bi * co + o) * oh + orr as usize) * ow + oc as usize] +=
                                    xv * w.data()[((i * co + o) * k + kr) * k + kc];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, co, oh, ow], out).unwrap()
}

/// Per-pixel `x_c / sqrt(β_c + Σ_k γ_ck x_k²)` (or times, when `inverse`).
pub fn naive_gdn(x: &Tensor, beta: &Tensor, gamma: &Tensor, inverse: bool) -> Tensor {
    let (n, c, h, w) = x.dims4().unwrap();
    let plane = h * w;
    let mut out = x.clone();
    for bi in 0..n {
        for p in 0..plane {
            for ch in 0..c {
                let mut s = beta.data()[ch];
                for k in 0..c {
                    let xv = x.data()[(bi * c + k) * plane + p];
                    s += gamma.data()[ch * c + k] * xv * xv;
                }
                let xv = x.data()[(bi * c + ch) * plane + p];
                out.data_mut()[(bi * c + ch) * plane + p] = if inverse { xv * s.sqrt() } else { xv / s.sqrt() };
            }
        }
    }
    out
}

fn laplace_cdf(x: f64, mu: f64, b: f64) -> f64 {
    if x < mu {
        0.5 * ((x - mu) / b).exp()
    } else {
        1.0 - 0.5 * (-(x - mu) / b).exp()
    }
}

/// The training objective written out directly:
/// `(1/B) Σ ‖X − g_d(g_e(X) + Δ⊙T)‖² + γ Σ_i [−log2 δ_i − mean_j log2 max(p̃_i(v_ij), 1e-12)]`.
pub fn straight_line_objective(
    batch: &Tensor,
    p: &ModelParams,
    arch: &ArchConfig,
    gamma: f64,
    tau: &Tensor,
) -> f64 {
    let (n, _, _, _) = batch.dims4().unwrap();
    let mut h = batch.map(|v| v / 255.0);
    let last = arch.layers.len() - 1;
    for (i, l) in arch.layers.iter().enumerate() {
        h = naive_conv(&h, &p.enc_conv[i].weight, &p.enc_conv[i].bias, l.stride, l.pad);
        if i < last || arch.end_normalization {
            h = naive_gdn(&h, &p.enc_gdn[i].beta, &p.enc_gdn[i].gamma, false);
        }
    }
    let (_, m, lh, lw) = h.dims4().unwrap();
    let plane = lh * lw;
    let deltas: Vec<f64> = p.log_delta.data().iter().map(|l| l.exp().max(1e-8)).collect();
    let mut noisy = h.clone();
    for (i, v) in noisy.data_mut().iter_mut().enumerate() {
        *v += deltas[(i / plane) % m] * tau.data()[i];
    }
    let mut d = noisy.clone();
    for i in (0..arch.layers.len()).rev() {
        if i < last || arch.end_normalization {
            d = naive_gdn(&d, &p.dec_gdn[i].beta, &p.dec_gdn[i].gamma, true);
        }
        let l = &arch.layers[i];
        let out_pad = l.stride + 2 * l.pad - l.kernel;
        d = naive_tconv(&d, &p.dec_conv[i].weight, &p.dec_conv[i].bias, l.stride, l.pad, out_pad);
    }
    let sse: f64 = d
        .data()
        .iter()
        .zip(batch.data())
        .map(|(r, x)| (r * 255.0 - x).powi(2))
        .sum();
    let mut rate = 0.0;
    for map in 0..m {
        let (delta, mu, b) = (deltas[map], p.psi_mu.data()[map], p.psi_log_b.data()[map].exp());
        let mut acc = 0.0;
        for bi in 0..n {
            for j in 0..plane {
                let v = noisy.data()[(bi * m + map) * plane + j];
                let pt = (laplace_cdf(v + delta / 2.0, mu, b) - laplace_cdf(v - delta / 2.0, mu, b)) / delta;
                acc += pt.max(1e-12).log2();
            }
        }
        rate += -delta.log2() - acc / (n * plane) as f64;
    }
    sse / n as f64 + gamma * rate
}

/// Components far below a gradient's scale sit at the finite-difference
/// rounding floor (≈ ε·f/h), so their relative error is measured against
/// a thousandth of the largest component instead.
fn grad_floor(grads: &[Tensor]) -> f64 {
    let scale = grads.iter().flat_map(|t| t.data()).fold(0.0f64, |m, v| m.max(v.abs()));
    (1e-3 * scale).max(1e-12)
}

/// Largest relative error between analytic and central-difference gradients
/// over every element of every input.
///
/// `build` receives the graph and one leaf per input and returns a scalar node.
pub fn max_grad_error(
    inputs: &[Tensor],
    step: f64,
    build: &dyn Fn(&mut Graph, &[NodeId]) -> ltc::Result<NodeId>,
) -> f64 {
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| g.leaf(v.clone(), false)).collect();
        let out = build(&mut g, &ids).unwrap();
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|v| g.param(v.clone())).collect();
    let out = build(&mut g, &ids).unwrap();
    let grads = g.backward(out).unwrap();
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grads.get(id)).collect();
    let floor = grad_floor(&analytic);
    let mut worst: f64 = 0.0;
    for (t, analytic) in analytic.iter().enumerate() {
        for e in 0..inputs[t].len() {
            let mut plus = inputs.to_vec();
            plus[t].data_mut()[e] += step;
            let mut minus = inputs.to_vec();
            minus[t].data_mut()[e] -= step;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let a = analytic.data()[e];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Random target so `squared_error` turns any tensor op into a scalar with
/// a non-trivial upstream gradient.
pub fn project(g: &mut Graph, x: NodeId, seed: u64) -> ltc::Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    let target = uniform(&shape, -1.0, 1.0, &mut rng(seed ^ 0xABCD));
    g.squared_error(x, target)
}

/// Gradient-check every primitive op at one seed; returns `(op name, max rel error)`.
pub fn primitive_grad_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let h = 1e-5;
    let mut out = Vec::new();

    let x = uniform(&[2, 2, 5, 5], -2.0, 2.0, &mut r);
    let w = uniform(&[3, 2, 3, 3], -2.0, 2.0, &mut r);
    let b = uniform(&[3], -2.0, 2.0, &mut r);
    out.push(("conv2d", max_grad_error(&[x, w, b], h, &|g, v| {
        let y = g.conv2d(v[0], v[1], v[2], 2, 1)?;
        project(g, y, seed)
    })));

    let x = uniform(&[2, 2, 3, 3], -2.0, 2.0, &mut r);
    let w = uniform(&[2, 3, 5, 5], -2.0, 2.0, &mut r);
    let b = uniform(&[3], -2.0, 2.0, &mut r);
    out.push(("tconv2d", max_grad_error(&[x, w, b], h, &|g, v| {
        let y = g.tconv2d(v[0], v[1], v[2], 2, 2, 1)?;
        project(g, y, seed)
    })));

    for (name, inverse) in [("gdn", false), ("igdn", true)] {
        let x = uniform(&[2, 3, 2, 2], -2.0, 2.0, &mut r);
        let beta = uniform(&[3], 0.5, 2.0, &mut r);
        let gamma = uniform(&[3, 3], 0.0, 2.0, &mut r);
        out.push((name, max_grad_error(&[x, beta, gamma], h, &|g, v| {
            let y = if inverse { g.igdn(v[0], v[1], v[2])? } else { g.gdn(v[0], v[1], v[2])? };
            project(g, y, seed)
        })));
    }

    let y = uniform(&[2, 3, 2, 2], -2.0, 2.0, &mut r);
    let ld = uniform(&[3], -2.0, 2.0, &mut r);
    let tau = uniform(&[2, 3, 2, 2], -0.5, 0.5, &mut r);
    out.push(("scaled_noise", max_grad_error(&[y, ld], h, &|g, v| {
        let y = g.scaled_noise(v[0], v[1], tau.clone())?;
        project(g, y, seed)
    })));

    let v = uniform(&[2, 3, 2, 2], -2.0, 2.0, &mut r);
    let ld = uniform(&[3], -1.0, 1.0, &mut r);
    let mu = uniform(&[3], -2.0, 2.0, &mut r);
    let lb = uniform(&[3], -1.0, 1.0, &mut r);
    out.push(("rate", max_grad_error(&[v, ld, mu, lb], h, &|g, n| {
        let y = g.rate(n[0], n[1], n[2], n[3])?;
        project(g, y, seed)
    })));

    let x = uniform(&[2, 3], -2.0, 2.0, &mut r);
    let t = uniform(&[2, 3], -2.0, 2.0, &mut r);
    out.push(("squared_error", max_grad_error(&[x.clone()], h, &|g, v| g.squared_error(v[0], t.clone()))));
    out.push(("mse", max_grad_error(&[x.clone()], h, &|g, v| g.mse(v[0], t.clone()))));
    out.push(("sum", max_grad_error(&[x.clone()], h, &|g, v| {
        let s = g.sum(v[0])?;
        let s2 = g.add(s, s)?;
        g.squared_error(s2, Tensor::scalar(0.3))
    })));
    out.push(("scale", max_grad_error(&[x.clone()], h, &|g, v| {
        let y = g.scale(v[0], -1.7)?;
        project(g, y, seed)
    })));
    let z = uniform(&[2, 3], -2.0, 2.0, &mut r);
    out.push(("add", max_grad_error(&[x, z], h, &|g, v| {
        let y = g.add(v[0], v[1])?;
        project(g, y, seed)
    })));
    out
}

/// Gradient-check the full objective of a tiny model (m = 2, one 16×16 image)
/// at one seed, over every parameter the trainer updates.
pub fn objective_grad_error(seed: u64, end_normalization: bool) -> f64 {
    use ltc::model::ParamGroup;
    let arch = ArchConfig::desk(2, end_normalization);
    let mut r = rng(seed);
    let mut params = ModelParams::init(&arch, seed).unwrap();
    params.log_delta = uniform(&[2], -0.5, 0.5, &mut r);
    params.psi_mu = uniform(&[2], -0.5, 0.5, &mut r);
    params.psi_log_b = uniform(&[2], -1.0, 0.5, &mut r);
    // Inputs in [-2, 2] and a zero output bias keep the loss small enough that
    // central differences are not swamped by rounding.
    params.dec_conv[0].bias = Tensor::zeros(&[1]);
    let batch = uniform(&[1, 1, 16, 16], -2.0, 2.0, &mut r);
    let tau = uniform(&[1, 2, 1, 1], -0.5, 0.5, &mut r);
    let gamma = 1000.0;
    let all = [ParamGroup::Transform, ParamGroup::Delta, ParamGroup::Psi];

    let obj = ltc::training::rd_objective(&batch, &params, &arch, gamma, &tau, &all).unwrap();
    let mut grads = obj.graph.backward(obj.loss).unwrap();
    let analytic: Vec<Tensor> = all
        .iter()
        .flat_map(|&grp| obj.nodes.group_grads(&mut grads, grp))
        .collect();

    let loss_at = |p: &ModelParams| -> f64 {
        ltc::training::rd_objective(&batch, p, &arch, gamma, &tau, &[]).unwrap().loss_value()
    };
    let floor = grad_floor(&analytic);
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    for grp in all {
        let count = params.group_mut(grp).len();
        for t in 0..count {
            let n = params.group_mut(grp)[t].len();
            // Every element of small tensors, an even sample of large ones.
            let stride = (n / 12).max(1);
            for e in (0..n).step_by(stride) {
                let orig = params.group_mut(grp)[t].data()[e];
                let h = 1e-5 * orig.abs().max(1.0);
                params.group_mut(grp)[t].data_mut()[e] = orig + h;
                let fp = loss_at(&params);
                params.group_mut(grp)[t].data_mut()[e] = orig - h;
                let fm = loss_at(&params);
                params.group_mut(grp)[t].data_mut()[e] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let a = analytic[flat + t].data()[e];
                let denom = a.abs().max(numeric.abs()).max(floor);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        flat += count;
    }
    worst
}
