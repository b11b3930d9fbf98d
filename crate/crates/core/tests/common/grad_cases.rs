//! Finite-difference gradient cases. Each returns `(label, relative error)`
//! pairs; callers decide the tolerance.

use super::{grad_check, project};
use fednas::autodiff::ParamSet;
use fednas::reconstructor::{Batch, KSpace, MaskKind, MaskSpec, UnrolledModel};
use fednas::search_space::{
    mixed_op_forward, op_forward, ArchEncoding, Denoiser, ModelShape, OpKind, OpWeights, NUM_OPS,
};
use fednas::seed::rng_for;
use fednas::Tensor;
use std::rc::Rc;

pub const H: f64 = 1e-5;

/// Every case, in a fixed order.
pub fn all() -> Vec<(String, f64)> {
    let mut out = every_candidate_op();
    out.extend(primitives_over_many_seeds());
    out.extend(mixed_op_including_logits());
    out.extend(full_cell_including_logits());
    out.extend(data_consistency_wrt_z_and_lambda());
    out.extend(end_to_end_loss_supernet());
    out.extend(end_to_end_loss_discrete());
    out
}

fn op_inputs(kind: OpKind, c: usize, seed: u64) -> ParamSet {
    let mut rng = rng_for(&[seed]);
    let mut ps = ParamSet::new();
    ps.insert("x", Tensor::randn(&[1, c, 8, 8], 1.0, &mut rng)).unwrap();
    for (suffix, s) in kind.param_shapes(c) {
        ps.insert(format!("op.{suffix}"), Tensor::randn(&s, 0.4, &mut rng))
            .unwrap();
    }
    ps
}

pub fn every_candidate_op() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (i, kind) in OpKind::ALL.into_iter().enumerate() {
        let ps = op_inputs(kind, 2, 100 + i as u64);
        let err = grad_check(&ps, H, 200, 1, |g, b| {
            let op = OpWeights::bind(kind, b, "op").unwrap();
            let y = op_forward(g, b.get("x").unwrap(), &op).unwrap();
            project(g, y, 3)
        });
        out.push((kind.name().to_string(), err));
    }
    out
}

pub fn primitives_over_many_seeds() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for seed in 0..100u64 {
        let mut rng = rng_for(&[seed, 7]);
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::randn(&[1, 2, 4, 4], 1.0, &mut rng)).unwrap();
        ps.insert("k", Tensor::randn(&[2, 2, 3, 3], 0.5, &mut rng)).unwrap();
        ps.insert("d", Tensor::randn(&[2, 1, 3, 3], 0.5, &mut rng)).unwrap();
        ps.insert("l", Tensor::randn(&[3], 1.0, &mut rng)).unwrap();
        let err = grad_check(&ps, H, 64, seed, |g, b| {
            let x = b.get("x").unwrap();
            let y = g.conv2d(x, b.get("k").unwrap(), 1 + (seed as usize % 3), 1).unwrap();
            let z = g.conv2d(y, b.get("d").unwrap(), 1, 2).unwrap();
            let f = g.fft2(z, seed % 2 == 0).unwrap();
            let p = g.softmax(b.get("l").unwrap()).unwrap();
            let s = g.select(p, (seed % 3) as usize).unwrap();
            let m = g.mul_scalar(f, s).unwrap();
            let sp = g.softplus(m);
            project(g, sp, seed)
        });
        out.push((format!("primitives seed {seed}"), err));
    }
    out
}

pub fn mixed_op_including_logits() -> Vec<(String, f64)> {
    let c = 2;
    let mut rng = rng_for(&[5]);
    let mut ps = ParamSet::new();
    ps.insert("x", Tensor::randn(&[1, c, 8, 8], 1.0, &mut rng)).unwrap();
    ps.insert("alpha", Tensor::randn(&[NUM_OPS], 1.0, &mut rng)).unwrap();
    for k in OpKind::ALL {
        for (suffix, s) in k.param_shapes(c) {
            ps.insert(format!("{}.{suffix}", k.name()), Tensor::randn(&s, 0.4, &mut rng))
                .unwrap();
        }
    }
    let err = grad_check(&ps, H, 80, 2, |g, b| {
        let ops: Vec<OpWeights> = OpKind::ALL
            .iter()
            .map(|&k| OpWeights::bind(k, b, k.name()).unwrap())
            .collect();
        let y = mixed_op_forward(g, b.get("x").unwrap(), b.get("alpha").unwrap(), &ops).unwrap();
        project(g, y, 4)
    });
    vec![("mixed op".to_string(), err)]
}

pub fn full_cell_including_logits() -> Vec<(String, f64)> {
    let shape = ModelShape {
        channels: 2,
        cells: 1,
        nodes: 2,
    };
    let den = Denoiser::supernet(shape).unwrap();
    let mut ps = den.init_params(&mut rng_for(&[6])).unwrap();
    let mut rng = rng_for(&[7]);
    ps.insert("in_a", Tensor::randn(&[1, 2, 8, 8], 1.0, &mut rng)).unwrap();
    ps.insert("in_b", Tensor::randn(&[1, 2, 8, 8], 1.0, &mut rng)).unwrap();
    ps.insert("alpha", Tensor::randn(&[5, NUM_OPS], 1.0, &mut rng)).unwrap();
    let err = grad_check(&ps, H, 40, 3, |g, b| {
        let (a, c, al) = (b.get("in_a").unwrap(), b.get("in_b").unwrap(), b.get("alpha").unwrap());
        let y = den.cell_forward(g, 0, a, c, b, Some(al)).unwrap();
        project(g, y, 5)
    });
    vec![("cell".to_string(), err)]
}

pub fn data_consistency_wrt_z_and_lambda() -> Vec<(String, f64)> {
    let mut rng = rng_for(&[8]);
    let mask: Vec<bool> = (0..8).map(|i| i % 3 != 1).collect();
    let spec = MaskSpec {
        kind: MaskKind::Random1d,
        acceleration: 1.5,
        acs_fraction: 0.25,
        columns: mask,
    };
    let b = KSpace::from_full(Tensor::randn(&[2, 8, 8], 1.0, &mut rng), spec).unwrap();
    let weights = Rc::new(b.mask.kspace_weights(8));
    let measured = Rc::new(b.data.clone().reshape(&[1, 2, 8, 8]).unwrap());
    let mut ps = ParamSet::new();
    ps.insert("z", Tensor::randn(&[1, 2, 8, 8], 1.0, &mut rng)).unwrap();
    ps.insert("raw", Tensor::scalar(0.3)).unwrap();
    let err = grad_check(&ps, H, 200, 4, |g, p| {
        let lam = g.softplus(p.get("raw").unwrap());
        let zhat = g.fft2(p.get("z").unwrap(), false).unwrap();
        let x = g.dc_combine(zhat, lam, measured.clone(), weights.clone()).unwrap();
        let out = g.fft2(x, true).unwrap();
        project(g, out, 6)
    });
    vec![("data consistency".to_string(), err)]
}

fn toy_batch(seed: u64) -> Batch {
    let mut rng = rng_for(&[seed]);
    let spec = MaskSpec {
        kind: MaskKind::Random1d,
        acceleration: 2.0,
        acs_fraction: 0.25,
        columns: vec![true, false, false, true, true, true, false, true],
    };
    let img = |rng: &mut _| {
        let mut t = Tensor::randn(&[2, 8, 8], 0.5, rng);
        t.data_mut()[64..].fill(0.0);
        t
    };
    let targets: Vec<Tensor> = (0..2).map(|_| img(&mut rng)).collect();
    let ks: Vec<KSpace> = targets
        .iter()
        .map(|t| KSpace::from_full(fednas::reconstructor::fft2(t).unwrap(), spec.clone()).unwrap())
        .collect();
    Batch::new(
        &ks.iter().collect::<Vec<_>>(),
        Some(&targets.iter().collect::<Vec<_>>()),
    )
    .unwrap()
}

pub fn end_to_end_loss_supernet() -> Vec<(String, f64)> {
    let shape = ModelShape {
        channels: 2,
        cells: 1,
        nodes: 2,
    };
    let model = UnrolledModel::new(2, Denoiser::supernet(shape).unwrap()).unwrap();
    let mut ps = model.init_params(&mut rng_for(&[9])).unwrap();
    let logits: Vec<f64> = (0..5 * NUM_OPS).map(|i| ((i * 37) % 11) as f64 * 0.2 - 1.0).collect();
    ps.insert("alpha", Tensor::new(&[5, NUM_OPS], logits).unwrap()).unwrap();
    // Enlarge the head so the denoiser contributes visibly to the loss.
    ps.get_mut("head.w")
        .unwrap()
        .data_mut()
        .iter_mut()
        .for_each(|v| *v *= 10.0);
    let batch = toy_batch(10);
    let err = grad_check(&ps, H, 12, 5, |g, b| {
        let a = b.get("alpha").unwrap();
        model.loss(g, b, Some(a), &batch).unwrap()
    });
    vec![("loss (supernet)".to_string(), err)]
}

pub fn end_to_end_loss_discrete() -> Vec<(String, f64)> {
    let shape = ModelShape {
        channels: 3,
        cells: 2,
        nodes: 2,
    };
    let mut logits = Tensor::zeros(&[5, NUM_OPS]);
    for (e, o) in [3usize, 6, 1, 7, 5].iter().enumerate() {
        logits.data_mut()[e * NUM_OPS + o] = 1.0;
    }
    let arch = fednas::search_space::discretize(&ArchEncoding::new(logits).unwrap(), &shape).unwrap();
    let model = UnrolledModel::new(3, Denoiser::discrete(&arch).unwrap()).unwrap();
    let mut ps = model.init_params(&mut rng_for(&[11])).unwrap();
    ps.get_mut("head.w")
        .unwrap()
        .data_mut()
        .iter_mut()
        .for_each(|v| *v *= 10.0);
    let batch = toy_batch(12);
    let err = grad_check(&ps, H, 30, 6, |g, b| model.loss(g, b, None, &batch).unwrap());
    vec![("loss (discrete)".to_string(), err)]
}
