//! Forward and input-gradient kernels for the cell primitives.
//!
//! All spatial kernels use stride 1 and zero padding that preserves `H × W`.

use super::tensor::Tensor;
use super::GraphError;

/// Epsilon added to the batch variance.
pub const BN_EPS: f64 = 1e-5;

fn need4(x: &Tensor, what: &str) -> Result<(usize, usize, usize, usize), GraphError> {
    x.dims4()
        .ok_or_else(|| GraphError::Shape(format!("{what} expects (N,C,H,W), got {:?}", x.shape())))
}

fn conv_dims(x: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize), GraphError> {
    let (n, cin, h, w) = need4(x, "conv2d")?;
    let (cout, wcin, kh, kw) = weight
        .dims4()
        .ok_or_else(|| GraphError::Shape(format!("conv weight must be 4-d, got {:?}", weight.shape())))?;
    if wcin != cin {
        return Err(GraphError::Shape(format!(
            "conv weight expects {wcin} input channels, input has {cin}"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(GraphError::Shape(format!("conv kernel must be square and odd, got {kh}x{kw}")));
    }
    Ok((n, cin, h, w, cout, kh))
}

/// Cross-correlation with `(k-1)/2` zero padding.
pub fn conv2d(x: &Tensor, weight: &Tensor) -> Result<Tensor, GraphError> {
    let (n, cin, h, w, cout, k) = conv_dims(x, weight)?;
    let pad = (k / 2) as isize;
    let xs = x.data();
    let ws = weight.data();
    let mut out = vec![0.0; n * cout * h * w];
    for b in 0..n {
        for co in 0..cout {
            let out_plane = &mut out[(b * cout + co) * h * w..][..h * w];
            for ci in 0..cin {
                let in_plane = &xs[(b * cin + ci) * h * w..][..h * w];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let wv = ws[((co * cin + ci) * k + ky) * k + kx];
                        let (x0, x1) = valid_range(w, dx);
                        let (y0, y1) = valid_range(h, dy);
                        for oy in y0..y1 {
                            let iy = (oy as isize + dy) as usize;
                            let orow = &mut out_plane[oy * w..][..w];
                            let irow = &in_plane[iy * w..][..w];
                            for ox in x0..x1 {
                                orow[ox] += wv * irow[(ox as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![n, cout, h, w], out))
}

/// Output coordinates `o` in `[lo, hi)` such that `o + offset` is inside `[0, len)`.
fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_backward_input(grad_out: &Tensor, weight: &Tensor, input_shape: &[usize]) -> Tensor {
    let (cout, cin, k, _) = weight.dims4().expect("checked in forward");
    let (n, _, h, w) = grad_out.dims4().expect("checked in forward");
    let pad = (k / 2) as isize;
    let gs = grad_out.data();
    let ws = weight.data();
    let mut gx = vec![0.0; n * cin * h * w];
    for b in 0..n {
        for co in 0..cout {
            let g_plane = &gs[(b * cout + co) * h * w..][..h * w];
            for ci in 0..cin {
                let gx_plane = &mut gx[(b * cin + ci) * h * w..][..h * w];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let wv = ws[((co * cin + ci) * k + ky) * k + kx];
                        let (x0, x1) = valid_range(w, dx);
                        let (y0, y1) = valid_range(h, dy);
                        for oy in y0..y1 {
                            let iy = (oy as isize + dy) as usize;
                            let grow = &g_plane[oy * w..][..w];
                            let xrow = &mut gx_plane[iy * w..][..w];
                            for ox in x0..x1 {
                                xrow[(ox as isize + dx) as usize] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gx)
}

/// 3×3 mean with zero padding 1 and a fixed divisor of 9.
///
/// The operator is self-adjoint, so the same kernel computes its input gradient.
pub fn avg_pool3x3(x: &Tensor) -> Result<Tensor, GraphError> {
    let (n, c, h, w) = need4(x, "avg_pool3x3")?;
    let xs = x.data();
    let mut out = vec![0.0; xs.len()];
    for plane in 0..n * c {
        let ip = &xs[plane * h * w..][..h * w];
        let op = &mut out[plane * h * w..][..h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for iy in y.saturating_sub(1)..(y + 2).min(h) {
                    for ix in xx.saturating_sub(1)..(xx + 2).min(w) {
                        acc += ip[iy * w + ix];
                    }
                }
                op[y * w + xx] = acc / 9.0;
            }
        }
    }
    Ok(Tensor::new(x.shape().to_vec(), out))
}

/// Per-channel normalization with batch statistics over `(N, H, W)`.
///
/// Returns the output and the per-channel `1/sqrt(var + eps)` for the backward pass.
pub fn batch_norm(x: &Tensor) -> Result<(Tensor, Vec<f64>), GraphError> {
    let (n, c, h, w) = need4(x, "batch_norm")?;
    let plane = h * w;
    let m = (n * plane) as f64;
    let xs = x.data();
    let mut out = vec![0.0; xs.len()];
    let mut inv_stds = Vec::with_capacity(c);
    for ch in 0..c {
        let planes = || (0..n).map(move |b| (b * c + ch) * plane);
        let mut sum = 0.0;
        for start in planes() {
            sum += xs[start..start + plane].iter().sum::<f64>();
        }
        let mu = sum / m;
        let mut ss = 0.0;
        for start in planes() {
            ss += xs[start..start + plane].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        let inv_std = 1.0 / (ss / m + BN_EPS).sqrt();
        for start in planes() {
            for i in start..start + plane {
                out[i] = (xs[i] - mu) * inv_std;
            }
        }
        inv_stds.push(inv_std);
    }
    Ok((Tensor::new(x.shape().to_vec(), out), inv_stds))
}

/// Input gradient of [`batch_norm`], including the paths through the batch statistics.
pub fn batch_norm_backward(grad_out: &Tensor, output: &Tensor, inv_stds: &[f64]) -> Tensor {
    let (n, c, h, w) = grad_out.dims4().expect("checked in forward");
    let plane = h * w;
    let m = (n * plane) as f64;
    let gs = grad_out.data();
    let ys = output.data();
    let mut gx = vec![0.0; gs.len()];
    for (ch, &inv_std) in inv_stds.iter().enumerate() {
        let (mut sum_g, mut sum_gy) = (0.0, 0.0);
        for b in 0..n {
            let start = (b * c + ch) * plane;
            for i in start..start + plane {
                sum_g += gs[i];
                sum_gy += gs[i] * ys[i];
            }
        }
        for b in 0..n {
            let start = (b * c + ch) * plane;
            for i in start..start + plane {
                gx[i] = inv_std / m * (m * gs[i] - sum_g - ys[i] * sum_gy);
            }
        }
    }
    Tensor::new(grad_out.shape().to_vec(), gx)
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect())
}

/// The derivative at exactly zero is taken as zero.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Tensor {
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// `(N, C, H, W) → (N, C)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor, GraphError> {
    let (n, c, h, w) = need4(x, "global_avg_pool")?;
    let plane = h * w;
    let data = x.data().chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
    Ok(Tensor::new(vec![n, c], data))
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Tensor {
    let plane: usize = input_shape[2..].iter().product();
    let mut gx = Vec::with_capacity(grad_out.len() * plane);
    for &g in grad_out.data() {
        gx.extend(std::iter::repeat_n(g / plane as f64, plane));
    }
    Tensor::new(input_shape.to_vec(), gx)
}

/// `x` flattened to `(N, F)` times `weight (F, K)` plus `bias (K)`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, GraphError> {
    let n = x.batch();
    let f = x.features();
    let (wf, k) = match weight.shape() {
        [wf, k] => (*wf, *k),
        s => return Err(GraphError::Shape(format!("linear weight must be (F,K), got {s:?}"))),
    };
    if wf != f {
        return Err(GraphError::Shape(format!("linear expects {wf} features, input has {f}")));
    }
    if bias.len() != k {
        return Err(GraphError::Shape(format!("linear bias must have {k} entries, got {}", bias.len())));
    }
    let xs = x.data();
    let ws = weight.data();
    let mut out = Vec::with_capacity(n * k);
    for b in 0..n {
        let row = &xs[b * f..][..f];
        for j in 0..k {
            let mut acc = bias.data()[j];
            for (i, xv) in row.iter().enumerate() {
                acc += xv * ws[i * k + j];
            }
            out.push(acc);
        }
    }
    Ok(Tensor::new(vec![n, k], out))
}

pub fn linear_backward_input(grad_out: &Tensor, weight: &Tensor, input_shape: &[usize]) -> Tensor {
    let (f, k) = (weight.shape()[0], weight.shape()[1]);
    let n = grad_out.batch();
    let gs = grad_out.data();
    let ws = weight.data();
    let mut gx = Vec::with_capacity(n * f);
    for b in 0..n {
        let g = &gs[b * k..][..k];
        for i in 0..f {
            gx.push(ws[i * k..][..k].iter().zip(g).map(|(w, g)| w * g).sum());
        }
    }
    Tensor::new(input_shape.to_vec(), gx)
}
