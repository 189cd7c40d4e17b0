//! Convolution, pooling and GEMM kernels on raw slices. Feature maps are
//! (C, H, W) row-major per sample.

/// `c = beta * c + op(a) * op(b)` where `op(a)` is m×k and `op(b)` is k×n, all
/// row-major in storage.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every index reachable with these strides.
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

/// Unfolds a 3×3, padding-1 neighbourhood: `cols` is (C·9, H·W). With `relu`
/// the input is rectified on the way in.
pub fn im2col3(input: &[f64], c: usize, h: usize, w: usize, relu: bool, cols: &mut [f64]) {
    let hw = h * w;
    debug_assert!(input.len() >= c * hw && cols.len() >= c * 9 * hw);
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let iy = y + ky;
                    if iy == 0 || iy > h {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[(iy - 1) * w..iy * w];
                    // out[x] = src[x + kx - 1]
                    let (x0, x1) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w - 1),
                    };
                    out[..x0].fill(0.0);
                    out[x1..].fill(0.0);
                    let s = &src[x0 + kx - 1..x1 + kx - 1];
                    if relu {
                        for (o, &v) in out[x0..x1].iter_mut().zip(s) {
                            *o = v.max(0.0);
                        }
                    } else {
                        out[x0..x1].copy_from_slice(s);
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col3` without the rectifier: scatters `cols` back and adds
/// into `grad`.
pub fn col2im3_add(cols: &[f64], c: usize, h: usize, w: usize, grad: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut grad[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let iy = y + ky;
                    if iy == 0 || iy > h {
                        continue;
                    }
                    let (x0, x1) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w - 1),
                    };
                    let dst = &mut plane[(iy - 1) * w + x0 + kx - 1..(iy - 1) * w + x1 + kx - 1];
                    for (d, &g) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

/// Adds `bias[o]` to every element of output channel `o`.
pub fn add_bias(out: &mut [f64], bias: &[f64], hw: usize) {
    for (plane, &b) in out.chunks_exact_mut(hw).zip(bias) {
        for v in plane {
            *v += b;
        }
    }
}

/// Sums each channel plane of `grad` into `bias_grad`.
pub fn accumulate_bias_grad(grad: &[f64], bias_grad: &mut [f64], hw: usize) {
    for (plane, b) in grad.chunks_exact(hw).zip(bias_grad) {
        *b += plane.iter().sum::<f64>();
    }
}

/// 2×2 mean pooling with stride 2; odd sizes are zero-padded on the
/// bottom/right, so every window divides by 4.
pub fn avg_pool2(input: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        dst.fill(0.0);
        for y in 0..h {
            for x in 0..w {
                dst[(y / 2) * wo + x / 2] += src[y * w + x];
            }
        }
        for v in dst.iter_mut() {
            *v *= 0.25;
        }
    }
}

/// Adjoint of `avg_pool2`, overwriting `grad_in`.
pub fn avg_pool2_backward(grad_out: &[f64], c: usize, h: usize, w: usize, grad_in: &mut [f64]) {
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    for ch in 0..c {
        let src = &grad_out[ch * ho * wo..(ch + 1) * ho * wo];
        let dst = &mut grad_in[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * src[(y / 2) * wo + x / 2];
            }
        }
    }
}
