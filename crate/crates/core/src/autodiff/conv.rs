//! Same-padded 2-D convolution kernels (stride 1, zero padding).
//!
//! Dense convolutions (`groups == 1`) lower to im2col + GEMM; grouped
//! convolutions run as direct loops.

/// Geometry of a grouped, dilated, same-padded convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    fn pad(&self) -> isize {
        (self.dilation * (self.k - 1) / 2) as isize
    }

    /// Spatial offset of tap `t` and the output range it touches.
    fn tap(&self, t: usize, len: usize) -> (isize, usize, usize) {
        let d = (t * self.dilation) as isize - self.pad();
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).clamp(0, len as isize) as usize;
        (d, lo, hi.max(lo))
    }
}

/// Unfold one batch item into `[Cin*k*k, H*W]` patch columns.
fn im2col(g: &ConvGeom, input: &[f64], col: &mut [f64]) {
    let (h, w, k) = (g.h, g.w, g.k);
    let plane = h * w;
    col.iter_mut().for_each(|v| *v = 0.0);
    for ci in 0..g.c_in {
        let inp = &input[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            let (dy, y0, y1) = g.tap(ky, h);
            for kx in 0..k {
                let (dx, x0, x1) = g.tap(kx, w);
                let row = &mut col[((ci * k + ky) * k + kx) * plane..][..plane];
                for y in y0..y1 {
                    let src = (((y as isize + dy) as usize) * w) as isize + dx;
                    row[y * w + x0..y * w + x1]
                        .copy_from_slice(&inp[(src + x0 as isize) as usize..(src + x1 as isize) as usize]);
                }
            }
        }
    }
}

/// Fold patch columns back, accumulating into `grad_input`.
fn col2im(g: &ConvGeom, col: &[f64], grad_input: &mut [f64]) {
    let (h, w, k) = (g.h, g.w, g.k);
    let plane = h * w;
    for ci in 0..g.c_in {
        let gi = &mut grad_input[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            let (dy, y0, y1) = g.tap(ky, h);
            for kx in 0..k {
                let (dx, x0, x1) = g.tap(kx, w);
                let row = &col[((ci * k + ky) * k + kx) * plane..][..plane];
                for y in y0..y1 {
                    let src = (((y as isize + dy) as usize) * w) as isize + dx;
                    let dst = &mut gi[(src + x0 as isize) as usize..(src + x1 as isize) as usize];
                    for (a, b) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// `c = a * b` (row-major, `m x kk` times `kk x n`), with optional
/// transposition of the stored operands via strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, kk: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (kk as isize, 1) };
    let (rsb, csb) = if b_t { (1, kk as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * kk && b.len() >= kk * n && c.len() >= m * n);
    // SAFETY: the slices cover every element addressed by the given
    // dimensions and strides, checked by the assert above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            kk,
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

fn forward_gemm(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let plane = g.h * g.w;
    let rows = g.c_in * g.k * g.k;
    let mut out = vec![0.0; g.batch * g.c_out * plane];
    let mut col = vec![0.0; rows * plane];
    for n in 0..g.batch {
        let inp = &input[n * g.c_in * plane..(n + 1) * g.c_in * plane];
        let o = &mut out[n * g.c_out * plane..(n + 1) * g.c_out * plane];
        if g.k == 1 {
            gemm(g.c_out, rows, plane, kernel, false, inp, false, 0.0, o);
        } else {
            im2col(g, inp, &mut col);
            gemm(g.c_out, rows, plane, kernel, false, &col, false, 0.0, o);
        }
    }
    out
}

fn backward_gemm(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let plane = g.h * g.w;
    let rows = g.c_in * g.k * g.k;
    let mut gi = need_input.then(|| vec![0.0; input.len()]);
    let mut gk = need_kernel.then(|| vec![0.0; kernel.len()]);
    let mut col = vec![0.0; rows * plane];
    for n in 0..g.batch {
        let inp = &input[n * g.c_in * plane..(n + 1) * g.c_in * plane];
        let go = &grad_out[n * g.c_out * plane..(n + 1) * g.c_out * plane];
        if let Some(gk) = gk.as_mut() {
            let patches: &[f64] = if g.k == 1 {
                inp
            } else {
                im2col(g, inp, &mut col);
                &col
            };
            // gK[Cout, rows] += gO[Cout, HW] * patches[rows, HW]^T
            gemm(g.c_out, plane, rows, go, false, patches, true, 1.0, gk);
        }
        if let Some(gi) = gi.as_mut() {
            let dst = &mut gi[n * g.c_in * plane..(n + 1) * g.c_in * plane];
            if g.k == 1 {
                gemm(rows, g.c_out, plane, kernel, true, go, false, 1.0, dst);
            } else {
                gemm(rows, g.c_out, plane, kernel, true, go, false, 0.0, &mut col);
                col2im(g, &col, dst);
            }
        }
    }
    (gi, gk)
}

pub fn forward(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    if g.groups == 1 {
        return forward_gemm(g, input, kernel);
    }
    forward_direct(g, input, kernel)
}

fn forward_direct(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (h, w, k) = (g.h, g.w, g.k);
    let plane = h * w;
    let mut out = vec![0.0; g.batch * g.c_out * plane];
    for n in 0..g.batch {
        for co in 0..g.c_out {
            let grp = co / g.cout_g();
            let o_off = (n * g.c_out + co) * plane;
            let o = &mut out[o_off..o_off + plane];
            for cig in 0..g.cin_g() {
                let ci = grp * g.cin_g() + cig;
                let i_off = (n * g.c_in + ci) * plane;
                let inp = &input[i_off..i_off + plane];
                let k_off = (co * g.cin_g() + cig) * k * k;
                for ky in 0..k {
                    let (dy, y0, y1) = g.tap(ky, h);
                    for kx in 0..k {
                        let wv = kernel[k_off + ky * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (dx, x0, x1) = g.tap(kx, w);
                        for y in y0..y1 {
                            let src = ((y as isize + dy) as usize) * w;
                            let orow = &mut o[y * w + x0..y * w + x1];
                            let irow = &inp[(src as isize + x0 as isize + dx) as usize
                                ..(src as isize + x1 as isize + dx) as usize];
                            for (a, b) in orow.iter_mut().zip(irow) {
                                *a += wv * b;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients with respect to the input and the kernel.
pub fn backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    if g.groups == 1 {
        return backward_gemm(g, input, kernel, grad_out, need_input, need_kernel);
    }
    backward_direct(g, input, kernel, grad_out, need_input, need_kernel)
}

fn backward_direct(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (h, w, k) = (g.h, g.w, g.k);
    let plane = h * w;
    let mut gi = need_input.then(|| vec![0.0; input.len()]);
    let mut gk = need_kernel.then(|| vec![0.0; kernel.len()]);
    for n in 0..g.batch {
        for co in 0..g.c_out {
            let grp = co / g.cout_g();
            let o_off = (n * g.c_out + co) * plane;
            let go = &grad_out[o_off..o_off + plane];
            for cig in 0..g.cin_g() {
                let ci = grp * g.cin_g() + cig;
                let i_off = (n * g.c_in + ci) * plane;
                let inp = &input[i_off..i_off + plane];
                let k_off = (co * g.cin_g() + cig) * k * k;
                for ky in 0..k {
                    let (dy, y0, y1) = g.tap(ky, h);
                    for kx in 0..k {
                        let (dx, x0, x1) = g.tap(kx, w);
                        let wv = kernel[k_off + ky * k + kx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let src = (((y as isize + dy) as usize) * w) as isize + dx;
                            let grow = &go[y * w + x0..y * w + x1];
                            let s0 = (src + x0 as isize) as usize;
                            let s1 = (src + x1 as isize) as usize;
                            if gk.is_some() {
                                let irow = &inp[s0..s1];
                                acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if let Some(gi) = gi.as_mut() {
                                let dst = &mut gi[i_off + s0..i_off + s1];
                                for (a, b) in dst.iter_mut().zip(grow) {
                                    *a += wv * b;
                                }
                            }
                        }
                        if let Some(gk) = gk.as_mut() {
                            gk[k_off + ky * k + kx] += acc;
                        }
                    }
                }
            }
        }
    }
    (gi, gk)
}
