//! Forward/backward primitives. Each forward has a matching `*_grads`
//! function; the model composes them into a static graph.

use super::rng::Rng;
use super::tensor::{NumericsError, Tensor};

/// C[m,n] = A[m,k] · B[k,n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (&[m, k], &[k2, n]) = (&a.shape[..], &b.shape[..]) else {
        return Err(NumericsError::ShapeMismatch("matmul expects 2-d operands".into()));
    };
    if k != k2 {
        return Err(NumericsError::ShapeMismatch(format!("matmul inner dims {k} vs {k2}")));
    }
    let mut c = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            let crow = &mut c.data[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    Ok(c)
}

/// dA = dC·Bᵀ, dB = Aᵀ·dC.
pub fn matmul_grads(a: &Tensor, b: &Tensor, dc: &Tensor) -> (Tensor, Tensor) {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, n]);
    for i in 0..m {
        for p in 0..k {
            let mut s = 0.0;
            for j in 0..n {
                s += dc.data[i * n + j] * b.data[p * n + j];
                db.data[p * n + j] += a.data[i * k + p] * dc.data[i * n + j];
            }
            da.data[i * k + p] = s;
        }
    }
    (da, db)
}

/// Dilated 2-d cross-correlation over an N×N×Cin grid with an odd K×K
/// kernel, zero-padded so the output stays N×N×Cout.
pub fn conv2d_dilated(x: &Tensor, kernels: &Tensor, dilation: usize) -> Result<Tensor, NumericsError> {
    let (&[n, n2, cin], &[kh, kw, kcin, cout]) = (&x.shape[..], &kernels.shape[..]) else {
        return Err(NumericsError::ShapeMismatch("conv2d expects x[N,N,Cin], k[K,K,Cin,Cout]".into()));
    };
    if n != n2 || cin != kcin || kh != kw || kh % 2 == 0 || dilation == 0 {
        return Err(NumericsError::ShapeMismatch(format!(
            "conv2d shapes: x={:?} k={:?} dilation={dilation}",
            x.shape, kernels.shape
        )));
    }
    let k = kh;
    let mut y = Tensor::zeros(&[n, n, cout]);
    for i in 0..n as isize {
        for j in 0..n as isize {
            for a in 0..k {
                let p = i + (a as isize - (k / 2) as isize) * dilation as isize;
                if p < 0 || p >= n as isize {
                    continue;
                }
                for b in 0..k {
                    let q = j + (b as isize - (k / 2) as isize) * dilation as isize;
                    if q < 0 || q >= n as isize {
                        continue;
                    }
                    let xoff = (p as usize * n + q as usize) * cin;
                    let yoff = (i as usize * n + j as usize) * cout;
                    for ci in 0..cin {
                        let xv = x.data[xoff + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        let koff = ((a * k + b) * cin + ci) * cout;
                        for co in 0..cout {
                            y.data[yoff + co] += xv * kernels.data[koff + co];
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Input and kernel gradients of `conv2d_dilated`.
pub fn conv2d_dilated_grads(
    x: &Tensor,
    kernels: &Tensor,
    dilation: usize,
    dy: &Tensor,
) -> (Tensor, Tensor) {
    let (n, cin) = (x.shape[0], x.shape[2]);
    let (k, cout) = (kernels.shape[0], kernels.shape[3]);
    let mut dx = Tensor::zeros(&x.shape);
    let mut dk = Tensor::zeros(&kernels.shape);
    for i in 0..n as isize {
        for j in 0..n as isize {
            let yoff = (i as usize * n + j as usize) * cout;
            for a in 0..k {
                let p = i + (a as isize - (k / 2) as isize) * dilation as isize;
                if p < 0 || p >= n as isize {
                    continue;
                }
                for b in 0..k {
                    let q = j + (b as isize - (k / 2) as isize) * dilation as isize;
                    if q < 0 || q >= n as isize {
                        continue;
                    }
                    let xoff = (p as usize * n + q as usize) * cin;
                    for ci in 0..cin {
                        let koff = ((a * k + b) * cin + ci) * cout;
                        let mut s = 0.0;
                        for co in 0..cout {
                            let g = dy.data[yoff + co];
                            s += g * kernels.data[koff + co];
                            dk.data[koff + co] += g * x.data[xoff + ci];
                        }
                        dx.data[xoff + ci] += s;
                    }
                }
            }
        }
    }
    (dx, dk)
}

/// Numerically stable softmax over the last dimension.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let r = *x.shape.last().expect("softmax needs at least one dim");
    let mut y = Tensor::zeros(&x.shape);
    for (xrow, yrow) in x.data.chunks_exact(r).zip(y.data.chunks_exact_mut(r)) {
        let max = xrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (yv, &xv) in yrow.iter_mut().zip(xrow) {
            *yv = (xv - max).exp();
            z += *yv;
        }
        yrow.iter_mut().for_each(|v| *v /= z);
    }
    y
}

/// dx_r = y_r (dy_r − Σ_s dy_s y_s), rowwise.
pub fn softmax_rows_grads(y: &Tensor, dy: &Tensor) -> Tensor {
    let r = *y.shape.last().unwrap();
    let mut dx = Tensor::zeros(&y.shape);
    for ((yrow, dyrow), dxrow) in y
        .data
        .chunks_exact(r)
        .zip(dy.data.chunks_exact(r))
        .zip(dx.data.chunks_exact_mut(r))
    {
        let dot: f64 = yrow.iter().zip(dyrow).map(|(a, b)| a * b).sum();
        for i in 0..r {
            dxrow[i] = yrow[i] * (dyrow[i] - dot);
        }
    }
    dx
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// GELU, tanh approximation.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.grad = None;
    y.data.iter_mut().for_each(|v| *v = gelu_scalar(*v));
    y
}

pub fn gelu_grads(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(&x.shape);
    for i in 0..x.data.len() {
        dx.data[i] = dy.data[i] * gelu_grad_scalar(x.data[i]);
    }
    dx
}

/// Inverted dropout. Returns the output and the per-element scale mask
/// (entries 0 or 1/(1−p)); `None` means identity (inference or p = 0).
pub fn dropout(x: &Tensor, p: f64, rng: &mut Rng, training: bool) -> (Tensor, Option<Vec<f64>>) {
    assert!((0.0..1.0).contains(&p), "dropout rate must be in [0,1)");
    if !training || p == 0.0 {
        let mut y = x.clone();
        y.grad = None;
        return (y, None);
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = x.data.iter().map(|_| if rng.next_f64() < p { 0.0 } else { keep }).collect();
    let mut y = Tensor::zeros(&x.shape);
    for i in 0..x.data.len() {
        y.data[i] = x.data[i] * mask[i];
    }
    (y, Some(mask))
}

pub fn dropout_grads(dy: &Tensor, mask: &Option<Vec<f64>>) -> Tensor {
    let mut dx = dy.clone();
    dx.grad = None;
    if let Some(m) = mask {
        for i in 0..dx.data.len() {
            dx.data[i] *= m[i];
        }
    }
    dx
}

/// y[m,out] = x[m,in]·Wᵀ + b with W[out,in], b[out].
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (m, din) = (x.shape[0], x.shape[1]);
    let dout = w.shape[0];
    debug_assert_eq!(w.shape[1], din);
    debug_assert_eq!(b.data.len(), dout);
    let mut y = Tensor::zeros(&[m, dout]);
    for i in 0..m {
        let xrow = &x.data[i * din..(i + 1) * din];
        let yrow = &mut y.data[i * dout..(i + 1) * dout];
        yrow.copy_from_slice(&b.data);
        for (o, yv) in yrow.iter_mut().enumerate() {
            let wrow = &w.data[o * din..(o + 1) * din];
            let mut s = 0.0;
            for p in 0..din {
                s += xrow[p] * wrow[p];
            }
            *yv += s;
        }
    }
    y
}

/// Accumulates dW and db in place; returns dx.
pub fn linear_grads(x: &Tensor, w: &Tensor, dy: &Tensor, dw: &mut [f64], db: &mut [f64]) -> Tensor {
    let (m, din) = (x.shape[0], x.shape[1]);
    let dout = w.shape[0];
    let mut dx = Tensor::zeros(&[m, din]);
    for i in 0..m {
        let xrow = &x.data[i * din..(i + 1) * din];
        let dyrow = &dy.data[i * dout..(i + 1) * dout];
        let dxrow = &mut dx.data[i * din..(i + 1) * din];
        for o in 0..dout {
            let g = dyrow[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wrow = &w.data[o * din..(o + 1) * din];
            let dwrow = &mut dw[o * din..(o + 1) * din];
            for p in 0..din {
                dxrow[p] += g * wrow[p];
                dwrow[p] += g * xrow[p];
            }
        }
    }
    dx
}
