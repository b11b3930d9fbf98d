//! Radix-2 FFT over split real/imaginary buffers.
//!
//! Tensors carry complex images as two real channels `[..., 2, H, W]`.
//! `fft2_planes` transforms every (real, imag) plane pair in place with
//! unitary scaling `1/sqrt(H*W)` in both directions, so the inverse is also
//! the adjoint.

use std::f64::consts::PI;

use crate::error::{Error, Result};

fn check_pow2(n: usize, what: &str) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::UnsupportedSize(format!("{what} = {n} is not a power of two")));
    }
    Ok(())
}

/// Unnormalized in-place 1-D transform of length `re.len()`.
///
/// `inverse` flips the twiddle sign; no scaling is applied.
pub fn fft1d(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert_eq!(n, im.len());
    debug_assert!(n.is_power_of_two());
    if n < 2 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let ang = sign * 2.0 * PI / len as f64;
        for k in 0..half {
            let (ws, wc) = (ang * k as f64).sin_cos();
            let mut start = 0;
            while start < n {
                let a = start + k;
                let b = a + half;
                let tr = re[b] * wc - im[b] * ws;
                let ti = re[b] * ws + im[b] * wc;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                start += len;
            }
        }
        len <<= 1;
    }
}

/// Unitary 2-D transform of one `h x w` complex plane.
pub fn fft2_plane(re: &mut [f64], im: &mut [f64], h: usize, w: usize, inverse: bool) {
    for y in 0..h {
        let r = y * w..(y + 1) * w;
        fft1d(&mut re[r.clone()], &mut im[r], inverse);
    }
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col_re[y] = re[y * w + x];
            col_im[y] = im[y * w + x];
        }
        fft1d(&mut col_re, &mut col_im, inverse);
        for y in 0..h {
            re[y * w + x] = col_re[y];
            im[y * w + x] = col_im[y];
        }
    }
    let s = 1.0 / ((h * w) as f64).sqrt();
    re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= s);
}

/// Transform every complex plane of a `[..., 2, H, W]` buffer in place.
pub fn fft2_planes(data: &mut [f64], shape: &[usize], inverse: bool) -> Result<()> {
    let r = shape.len();
    if r < 3 || shape[r - 3] != 2 {
        return Err(Error::Dimension(format!("fft2 expects [..., 2, H, W], got {shape:?}")));
    }
    let (h, w) = (shape[r - 2], shape[r - 1]);
    check_pow2(h, "height")?;
    check_pow2(w, "width")?;
    let plane = h * w;
    for pair in data.chunks_mut(2 * plane) {
        let (re, im) = pair.split_at_mut(plane);
        fft2_plane(re, im, h, w, inverse);
    }
    Ok(())
}
