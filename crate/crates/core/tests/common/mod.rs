//! Reference implementations shared by the integration tests. They are
//! written directly from the mathematical definitions and deliberately do
//! not call the library routine they check.

#![allow(dead_code)]

pub mod grad_cases;

use fednas::autodiff::{BoundParams, Graph, ParamSet, Var};
use fednas::seed::rng_for;
use fednas::Tensor;
use nalgebra::{Complex, DMatrix, DVector};
use rand::seq::index::sample;

pub type C64 = Complex<f64>;

/// Worst relative error `|a - n| / max(|a|, |n|)` (vector norms) over the
/// tensors of `inputs`, comparing reverse-mode gradients with central
/// differences of step `h`. Tensors with more than `max_coords` scalars
/// are checked on a random subset.
pub fn grad_check<F>(inputs: &ParamSet, h: f64, max_coords: usize, seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph, &BoundParams) -> Var,
{
    let eval = |ps: &ParamSet| {
        let mut g = Graph::new();
        let b = ps.bind_frozen(&mut g);
        let out = build(&mut g, &b);
        g.value(out).item().unwrap()
    };
    let mut g = Graph::new();
    let b = inputs.bind(&mut g);
    let out = build(&mut g, &b);
    let analytic = g.backward(out).unwrap().params();

    let mut rng = rng_for(&[seed]);
    let mut worst: f64 = 0.0;
    for (name, t) in inputs.iter() {
        let coords: Vec<usize> = if t.len() <= max_coords {
            (0..t.len()).collect()
        } else {
            sample(&mut rng, t.len(), max_coords).into_vec()
        };
        let a = analytic.get(name).unwrap();
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &i in &coords {
            let mut plus = inputs.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= h;
            let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = a.data()[i];
            diff += (an - num) * (an - num);
            na += an * an;
            nn += num * num;
        }
        let denom = na.sqrt().max(nn.sqrt());
        if denom > 1e-12 {
            worst = worst.max(diff.sqrt() / denom);
        }
    }
    worst
}

/// Reduce a tensor to a scalar with fixed random weights so that every
/// output element influences the checked gradient.
pub fn project(g: &mut Graph, v: Var, seed: u64) -> Var {
    let shape = g.value(v).shape().to_vec();
    let w = g.constant(Tensor::randn(&shape, 1.0, &mut rng_for(&[seed, 99])));
    let p = g.mul(v, w).unwrap();
    g.sum(p)
}

/// Direct nested-loop convolution with zero padding.
pub fn naive_conv(x: &Tensor, k: &Tensor, dilation: usize, groups: usize) -> Tensor {
    let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cpg, ks) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    let opg = cout / groups;
    let pad = (dilation * (ks - 1) / 2) as isize;
    let mut out = Tensor::zeros(&[n, cout, h, w]);
    for b in 0..n {
        for o in 0..cout {
            let grp = o / opg;
            for y in 0..h {
                for xx in 0..w {
                    let mut s = 0.0;
                    for ci in 0..cpg {
                        let c = grp * cpg + ci;
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let iy = y as isize + (ky * dilation) as isize - pad;
                                let ix = xx as isize + (kx * dilation) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += x.data()[((b * cin + c) * h + iy as usize) * w + ix as usize]
                                    * k.data()[((o * cpg + ci) * ks + ky) * ks + kx];
                            }
                        }
                    }
                    out.data_mut()[((b * cout + o) * h + y) * w + xx] = s;
                }
            }
        }
    }
    out
}

/// Unitary 1-D DFT matrix.
pub fn dft_matrix(n: usize) -> DMatrix<C64> {
    let s = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |k, t| {
        C64::from_polar(s, -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64)
    })
}

/// Unitary 2-D DFT on row-major `h x w` vectors.
pub fn dft2_matrix(h: usize, w: usize) -> DMatrix<C64> {
    dft_matrix(h).kronecker(&dft_matrix(w))
}

pub fn to_complex(t: &Tensor) -> DVector<C64> {
    let hw = t.len() / 2;
    DVector::from_fn(hw, |i, _| C64::new(t.data()[i], t.data()[hw + i]))
}

pub fn from_complex(v: &DVector<C64>, h: usize, w: usize) -> Tensor {
    let mut d: Vec<f64> = v.iter().map(|c| c.re).collect();
    d.extend(v.iter().map(|c| c.im));
    Tensor::new(&[2, h, w], d).unwrap()
}

/// Sampling weight of unshifted column `x` for a centered column mask.
pub fn unshifted(columns: &[bool], x: usize) -> bool {
    let w = columns.len();
    columns[(x + w / 2) % w]
}

/// Solve `(A^H A + lam I) x = A^H b + lam z` with `A = M F` assembled
/// densely. `b` is the masked k-space.
pub fn dense_dc(z: &Tensor, b: &Tensor, columns: &[bool], lam: f64) -> Tensor {
    let (h, w) = (z.shape()[1], z.shape()[2]);
    let f = dft2_matrix(h, w);
    let m = DMatrix::<C64>::from_fn(h * w, h * w, |i, j| {
        if i == j && unshifted(columns, i % w) {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let a = &m * &f;
    let ah = a.adjoint();
    let lhs = &ah * &a + DMatrix::<C64>::identity(h * w, h * w) * C64::new(lam, 0.0);
    let rhs = &ah * to_complex(b) + to_complex(z) * C64::new(lam, 0.0);
    let x = lhs.lu().solve(&rhs).expect("system is non-singular for lam > 0");
    from_complex(&x, h, w)
}

/// Fairness re-weighting written straight from its definition.
pub fn brute_force_fair(a: &[f64], gaps: &[f64], gamma: f64) -> Vec<f64> {
    let mut gmax = f64::NEG_INFINITY;
    for &g in gaps {
        if g > gmax {
            gmax = g;
        }
    }
    if gmax <= 0.0 {
        return a.to_vec();
    }
    let mut beta = Vec::new();
    for i in 0..a.len() {
        if gaps[i] > 0.0 {
            beta.push(a[i] + gamma * gaps[i] / gmax);
        } else {
            beta.push(a[i]);
        }
    }
    let mut total = 0.0;
    for b in &beta {
        total += b;
    }
    beta.iter().map(|b| b / total).collect()
}

fn modulus(t: &Tensor) -> Vec<f64> {
    let hw = t.len() / 2;
    (0..hw).map(|i| t.data()[i].hypot(t.data()[hw + i])).collect()
}

pub fn psnr_reference(pred: &Tensor, reference: &Tensor) -> f64 {
    let (p, r) = (modulus(pred), modulus(reference));
    let peak = r.iter().cloned().fold(0.0, f64::max);
    let mse = p.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64;
    10.0 * (peak * peak / mse).log10()
}

/// Sliding 11x11 Gaussian-window SSIM over valid positions.
pub fn ssim_reference(pred: &Tensor, reference: &Tensor) -> f64 {
    let (h, w) = (reference.shape()[1], reference.shape()[2]);
    let (x, y) = (modulus(pred), modulus(reference));
    let range = y.iter().cloned().fold(0.0, f64::max);
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut win = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let mut acc = 0.0;
    let mut count = 0;
    for top in 0..=h - 11 {
        for left in 0..=w - 11 {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let g = win[i][j] / total;
                    let (a, b) = (x[(top + i) * w + left + j], y[(top + i) * w + left + j]);
                    mx += g * a;
                    my += g * b;
                    sxx += g * a * a;
                    syy += g * b * b;
                    sxy += g * a * b;
                }
            }
            let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}
