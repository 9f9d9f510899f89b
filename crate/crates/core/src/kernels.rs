//! Forward and adjoint kernels for the fixed operator set.
//!
//! Convolutions use the cross-correlation convention (no kernel flip) and are
//! lowered to matrix products via im2col. Weight layouts:
//! conv `(c_out, c_in, k, k)`, transpose conv `(c_in, c_out, k, k)`, so a
//! conv and a transpose conv sharing one weight tensor are exact adjoints.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of a strided, zero-padded square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    /// Geometry of a conv reading a `channels × height × width` input.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || kernel == 0 {
            return Err(Error::Shape("stride and kernel must be >= 1".into()));
        }
        if height + 2 * pad < kernel || width + 2 * pad < kernel {
            return Err(Error::Shape(format!(
                "kernel {kernel} larger than padded input {}x{}",
                height + 2 * pad,
                width + 2 * pad
            )));
        }
        Ok(ConvGeometry {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_height: (height + 2 * pad - kernel) / stride + 1,
            out_width: (width + 2 * pad - kernel) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_height * self.out_width
    }
}

/// Output extent of a transpose conv: `(h - 1)·stride - 2·pad + k + out_pad`.
pub fn tconv_extent(h: usize, kernel: usize, stride: usize, pad: usize, out_pad: usize) -> Result<usize> {
    let full = (h.max(1) - 1) * stride + kernel + out_pad;
    if h == 0 || full <= 2 * pad {
        return Err(Error::Shape(format!(
            "transpose conv of extent {h} with k={kernel} s={stride} p={pad} is empty"
        )));
    }
    Ok(full - 2 * pad)
}

/// `c = alpha·a·b + beta·c` for row-major operands, with optional transposes
/// expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover every index addressed by the given extents and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let ol = g.out_len();
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * ol;
                let dst = &mut cols[row..row + ol];
                for oi in 0..g.out_height {
                    let ii = (oi * s + ki) as isize - p;
                    let line = &mut dst[oi * g.out_width..(oi + 1) * g.out_width];
                    if ii < 0 || ii >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[ii as usize * g.width..(ii as usize + 1) * g.width];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * s + kj) as isize - p;
                        *v = if jj < 0 || jj >= g.width as isize {
                            0.0
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeometry, x: &mut [f64]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let ol = g.out_len();
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * ol;
                let src = &cols[row..row + ol];
                for oi in 0..g.out_height {
                    let ii = (oi * s + ki) as isize - p;
                    if ii < 0 || ii >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.width..(ii as usize + 1) * g.width];
                    for oj in 0..g.out_width {
                        let jj = (oj * s + kj) as isize - p;
                        if jj >= 0 && jj < g.width as isize {
                            dst[jj as usize] += src[oi * g.out_width + oj];
                        }
                    }
                }
            }
        }
    }
}

fn check_weight(weight: &Tensor, expect_in: usize, transpose: bool) -> Result<(usize, usize, usize)> {
    let (a, b, kh, kw) = weight.dims4()?;
    if kh != kw {
        return Err(Error::Shape(format!("non-square kernel {kh}x{kw}")));
    }
    let (c_out, c_in) = if transpose { (b, a) } else { (a, b) };
    if c_in != expect_in {
        return Err(Error::Shape(format!(
            "weight expects {c_in} input channels, input has {expect_in}"
        )));
    }
    Ok((c_out, c_in, kh))
}

fn check_bias(bias: &Tensor, c_out: usize) -> Result<()> {
    if bias.len() != c_out {
        return Err(Error::Shape(format!(
            "bias has {} entries for {c_out} output channels",
            bias.len()
        )));
    }
    Ok(())
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn bias_grad(gout: &[f64], c_out: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; c_out];
    for (idx, chunk) in gout.chunks(plane).enumerate() {
        db[idx % c_out] += chunk.iter().sum::<f64>();
    }
    db
}

pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (c_out, _, k) = check_weight(weight, c, false)?;
    check_bias(bias, c_out)?;
    let g = ConvGeometry::new(c, h, w, k, stride, pad)?;
    let ol = g.out_len();
    let mut cols = vec![0.0; g.patch_len() * ol];
    let mut out = vec![0.0; n * c_out * ol];
    for b in 0..n {
        im2col(&x.data()[b * c * h * w..(b + 1) * c * h * w], &g, &mut cols);
        gemm(
            c_out,
            g.patch_len(),
            ol,
            weight.data(),
            false,
            &cols,
            false,
            &mut out[b * c_out * ol..(b + 1) * c_out * ol],
            false,
        );
    }
    add_bias(&mut out, bias.data(), ol);
    Tensor::new(vec![n, c_out, g.out_height, g.out_width], out)
}

/// Adjoints of [`conv2d`]: `(d input, d weight, d bias)`, each computed only if requested.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    gout: &Tensor,
    stride: usize,
    pad: usize,
    want: [bool; 3],
) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
    let (n, c, h, w) = x.dims4()?;
    let (c_out, _, k) = check_weight(weight, c, false)?;
    let g = ConvGeometry::new(c, h, w, k, stride, pad)?;
    let ol = g.out_len();
    let pl = g.patch_len();
    let mut cols = vec![0.0; pl * ol];
    let mut dx = want[0].then(|| vec![0.0; x.len()]);
    let mut dw = want[1].then(|| vec![0.0; weight.len()]);
    for b in 0..n {
        let go = &gout.data()[b * c_out * ol..(b + 1) * c_out * ol];
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[b * c * h * w..(b + 1) * c * h * w], &g, &mut cols);
            gemm(c_out, ol, pl, go, false, &cols, true, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(pl, c_out, ol, weight.data(), true, go, false, &mut cols, false);
            col2im(&cols, &g, &mut dx[b * c * h * w..(b + 1) * c * h * w]);
        }
    }
    let db = want[2].then(|| Tensor::from_vec(bias_grad(gout.data(), c_out, ol)));
    Ok((
        dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
        dw.map(|d| Tensor::new(weight.shape().to_vec(), d)).transpose()?,
        db,
    ))
}

fn tconv_geometry(
    x: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<(usize, usize, usize, usize, ConvGeometry)> {
    let (n, c_in, h, w) = x.dims4()?;
    let (c_out, _, k) = check_weight(weight, c_in, true)?;
    if stride == 0 {
        return Err(Error::Shape("stride must be >= 1".into()));
    }
    if out_pad >= stride {
        return Err(Error::Shape(format!(
            "output padding {out_pad} must be smaller than stride {stride}"
        )));
    }
    let ho = tconv_extent(h, k, stride, pad, out_pad)?;
    let wo = tconv_extent(w, k, stride, pad, out_pad)?;
    // The transpose conv scatters through the geometry of the conv it is the adjoint of.
    let g = ConvGeometry::new(c_out, ho, wo, k, stride, pad)?;
    debug_assert_eq!((g.out_height, g.out_width), (h, w));
    Ok((n, c_in, c_out, h * w, g))
}

pub fn tconv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<Tensor> {
    let (n, c_in, c_out, hw, g) = tconv_geometry(x, weight, stride, pad, out_pad)?;
    check_bias(bias, c_out)?;
    let plane = g.height * g.width;
    let mut cols = vec![0.0; g.patch_len() * hw];
    let mut out = vec![0.0; n * c_out * plane];
    for b in 0..n {
        gemm(
            g.patch_len(),
            c_in,
            hw,
            weight.data(),
            true,
            &x.data()[b * c_in * hw..(b + 1) * c_in * hw],
            false,
            &mut cols,
            false,
        );
        col2im(&cols, &g, &mut out[b * c_out * plane..(b + 1) * c_out * plane]);
    }
    add_bias(&mut out, bias.data(), plane);
    Tensor::new(vec![n, c_out, g.height, g.width], out)
}

/// Adjoints of [`tconv2d`]: `(d input, d weight, d bias)`.
pub fn tconv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    gout: &Tensor,
    stride: usize,
    pad: usize,
    out_pad: usize,
    want: [bool; 3],
) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
    let (n, c_in, c_out, hw, g) = tconv_geometry(x, weight, stride, pad, out_pad)?;
    let plane = g.height * g.width;
    let pl = g.patch_len();
    let mut cols = vec![0.0; pl * hw];
    let mut dx = want[0].then(|| vec![0.0; x.len()]);
    let mut dw = want[1].then(|| vec![0.0; weight.len()]);
    for b in 0..n {
        if dx.is_none() && dw.is_none() {
            break;
        }
        im2col(&gout.data()[b * c_out * plane..(b + 1) * c_out * plane], &g, &mut cols);
        if let Some(dx) = dx.as_mut() {
            gemm(c_in, pl, hw, weight.data(), false, &cols, false, &mut dx[b * c_in * hw..(b + 1) * c_in * hw], false);
        }
        if let Some(dw) = dw.as_mut() {
            gemm(c_in, hw, pl, &x.data()[b * c_in * hw..(b + 1) * c_in * hw], false, &cols, true, dw, true);
        }
    }
    let db = want[2].then(|| Tensor::from_vec(bias_grad(gout.data(), c_out, plane)));
    Ok((
        dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
        dw.map(|d| Tensor::new(weight.shape().to_vec(), d)).transpose()?,
        db,
    ))
}

fn check_gdn(x: &Tensor, beta: &Tensor, gamma: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if beta.len() != c || gamma.len() != c * c {
        return Err(Error::Shape(format!(
            "GDN over {c} channels needs beta[{c}] and gamma[{c}x{c}], got {} and {}",
            beta.len(),
            gamma.len()
        )));
    }
    if let Some(b) = beta.data().iter().find(|&&b| !(b > 0.0)) {
        return Err(Error::Constraint(format!("GDN beta must be positive, found {b}")));
    }
    if let Some(g) = gamma.data().iter().find(|&&g| !(g >= 0.0)) {
        return Err(Error::Constraint(format!("GDN gamma must be non-negative, found {g}")));
    }
    Ok((n, c, h * w))
}

/// Per-pixel pooled energy `s_c = beta_c + Σ_k gamma[c,k]·x_k²` for one batch element.
fn gdn_energy(x: &[f64], beta: &[f64], gamma: &[f64], c: usize, plane: usize) -> Vec<f64> {
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let mut s = vec![0.0; c * plane];
    gemm(c, c, plane, gamma, false, &sq, false, &mut s, false);
    for (chunk, b) in s.chunks_mut(plane).zip(beta) {
        for v in chunk {
            *v += b;
        }
    }
    s
}

/// GDN (`inverse = false`: `x / sqrt(s)`) or IGDN (`inverse = true`: `x · sqrt(s)`).
pub fn gdn(x: &Tensor, beta: &Tensor, gamma: &Tensor, inverse: bool) -> Result<Tensor> {
    let (n, c, plane) = check_gdn(x, beta, gamma)?;
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        let xs = &x.data()[b * c * plane..(b + 1) * c * plane];
        let s = gdn_energy(xs, beta.data(), gamma.data(), c, plane);
        let o = &mut out[b * c * plane..(b + 1) * c * plane];
        for i in 0..c * plane {
            o[i] = if inverse { xs[i] * s[i].sqrt() } else { xs[i] / s[i].sqrt() };
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Adjoints of [`gdn`]: `(d input, d beta, d gamma)`.
pub fn gdn_backward(
    x: &Tensor,
    beta: &Tensor,
    gamma: &Tensor,
    gout: &Tensor,
    inverse: bool,
    want: [bool; 3],
) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
    let (n, c, plane) = check_gdn(x, beta, gamma)?;
    let mut dx = want[0].then(|| vec![0.0; x.len()]);
    let mut dbeta = vec![0.0; c];
    let mut dgamma = vec![0.0; c * c];
    let mut back = vec![0.0; c * plane];
    for b in 0..n {
        let range = b * c * plane..(b + 1) * c * plane;
        let xs = &x.data()[range.clone()];
        let go = &gout.data()[range.clone()];
        let s = gdn_energy(xs, beta.data(), gamma.data(), c, plane);
        // ds[i] = dL/ds at element i.
        let ds: Vec<f64> = (0..c * plane)
            .map(|i| {
                if inverse {
                    0.5 * go[i] * xs[i] / s[i].sqrt()
                } else {
                    -0.5 * go[i] * xs[i] / (s[i] * s[i].sqrt())
                }
            })
            .collect();
        if want[1] {
            for (ch, chunk) in ds.chunks(plane).enumerate() {
                dbeta[ch] += chunk.iter().sum::<f64>();
            }
        }
        if want[2] {
            let sq: Vec<f64> = xs.iter().map(|v| v * v).collect();
            gemm(c, plane, c, &ds, false, &sq, true, &mut dgamma, true);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(c, c, plane, gamma.data(), true, &ds, false, &mut back, false);
            let d = &mut dx[range];
            for i in 0..c * plane {
                let direct = if inverse { go[i] * s[i].sqrt() } else { go[i] / s[i].sqrt() };
                d[i] = direct + 2.0 * xs[i] * back[i];
            }
        }
    }
    Ok((
        dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
        want[1].then(|| Tensor::from_vec(dbeta)),
        if want[2] {
            Some(Tensor::new(gamma.shape().to_vec(), dgamma)?)
        } else {
            None
        },
    ))
}
