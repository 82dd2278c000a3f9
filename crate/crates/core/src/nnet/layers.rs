//! Dense kernels behind the network: im2col convolution, SiLU, global
//! average pooling and the fully connected head. Everything works on flat
//! `f64` slices in channel-major (C, H, W) order.

/// Shape bookkeeping for one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Rows of the unfolded input: one per (input channel, kernel offset).
    pub fn patch(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.patch()
    }

    pub fn output_len(&self) -> usize {
        self.out_c * self.positions()
    }
}

/// Unfolds `x` (in_c, in_h, in_w) into a (patch, positions) matrix.
pub fn im2col(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let mut col = vec![0.0; g.patch() * p];
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters a (patch, positions) matrix back onto the
/// input grid, summing overlaps.
pub fn col2im(g: &ConvGeom, col: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let mut x = vec![0.0; g.in_c * g.in_h * g.in_w];
    for c in 0..g.in_c {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight interleaved accumulators so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for i in 0..chunks {
        let aa = &a[i * 8..i * 8 + 8];
        let bb = &b[i * 8..i * 8 + 8];
        for j in 0..8 {
            acc[j] += aa[j] * bb[j];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// C = A B + beta C for row-major slices with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], (rsa, csa): (usize, usize), b: &[f64], (rsb, csb): (usize, usize), beta: f64, c: &mut [f64]) {
    assert!(m == 0 || k == 0 || n == 0 || (a.len() > (m - 1) * rsa + (k - 1) * csa && b.len() > (k - 1) * rsb + (n - 1) * csb));
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// z = W col + b, with W (out_c, patch) and col (patch, positions).
pub fn conv_forward(g: &ConvGeom, weight: &[f64], bias: &[f64], col: &[f64]) -> Vec<f64> {
    let p = g.positions();
    let patch = g.patch();
    let mut z = vec![0.0; g.out_c * p];
    for (oc, out) in z.chunks_exact_mut(p).enumerate() {
        out.fill(bias[oc]);
    }
    gemm(g.out_c, patch, p, weight, (patch, 1), col, (p, 1), 1.0, &mut z);
    z
}

/// Accumulates weight and bias gradients for `dz`; returns d(col) when
/// `need_input_grad` is set.
pub fn conv_backward(
    g: &ConvGeom,
    weight: &[f64],
    col: &[f64],
    dz: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let p = g.positions();
    let patch = g.patch();
    for (oc, d) in dz.chunks_exact(p).enumerate() {
        dbias[oc] += d.iter().sum::<f64>();
    }
    gemm(g.out_c, p, patch, dz, (p, 1), col, (1, p), 1.0, dweight);
    if !need_input_grad {
        return None;
    }
    let mut dcol = vec![0.0; patch * p];
    gemm(patch, g.out_c, p, weight, (1, patch), dz, (p, 1), 0.0, &mut dcol);
    Some(dcol)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&x| x * sigmoid(x)).collect()
}

/// dL/dz given dL/da for a = silu(z).
pub fn silu_backward(z: &[f64], da: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(da)
        .map(|(&x, &g)| {
            let s = sigmoid(x);
            g * s * (1.0 + x * (1.0 - s))
        })
        .collect()
}

/// Mean over the spatial positions of each channel.
pub fn global_avg_pool(x: &[f64], channels: usize) -> Vec<f64> {
    let p = x.len() / channels;
    (0..channels)
        .map(|c| x[c * p..(c + 1) * p].iter().sum::<f64>() / p as f64)
        .collect()
}

pub fn global_avg_pool_backward(dpool: &[f64], positions: usize) -> Vec<f64> {
    let mut dx = Vec::with_capacity(dpool.len() * positions);
    for &d in dpool {
        dx.extend(std::iter::repeat(d / positions as f64).take(positions));
    }
    dx
}

/// logits = W x + b with W (out, in).
pub fn dense_forward(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(k, &b)| b + dot(&weight[k * n_in..(k + 1) * n_in], x))
        .collect()
}

pub fn dense_backward(
    weight: &[f64],
    x: &[f64],
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (k, &d) in dout.iter().enumerate() {
        dbias[k] += d;
        axpy(&mut dweight[k * n_in..(k + 1) * n_in], d, x);
        axpy(&mut dx, d, &weight[k * n_in..(k + 1) * n_in]);
    }
    dx
}
