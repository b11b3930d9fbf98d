//! Unrolled reconstruction: a shared denoiser alternated with a closed-form
//! data-consistency step.
//!
//! Encoding is single-coil Cartesian, `A = M F` with `F` the unitary 2-D
//! FFT and `M` a column mask, so `(A^H A + lam I)^{-1}` is diagonal in
//! k-space:
//!
//! ```text
//! X_k = (M_k B_k + lam Z_k) / (M_k + lam),   Z = F z,   x = F^H X
//! ```

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::fft::fft2_planes;
use crate::autodiff::{softplus_inverse, BoundParams, Graph, ParamSet, Var};
use crate::error::{dim_err, Error, Result};
use crate::search_space::{ArchEncoding, Denoiser};
use crate::tensor::Tensor;

/// Initial data-consistency weight, `softplus(lambda_raw)`.
pub const LAMBDA_INIT: f64 = 0.05;
pub const LAMBDA_PARAM: &str = "lambda_raw";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Random1d,
    Equispaced1d,
}

/// A 1-D column mask.
///
/// `columns` is in centered order: index `W/2` is the DC column. Use
/// [`MaskSpec::kspace_weights`] for the unshifted FFT layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub acceleration: f64,
    pub acs_fraction: f64,
    pub columns: Vec<bool>,
}

impl MaskSpec {
    /// Every column sampled.
    pub fn full(width: usize) -> Self {
        Self {
            kind: MaskKind::Equispaced1d,
            acceleration: 1.0,
            acs_fraction: 1.0,
            columns: vec![true; width],
        }
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn sampled(&self) -> usize {
        self.columns.iter().filter(|&&c| c).count()
    }

    /// `W / sampled columns`.
    pub fn realized_acceleration(&self) -> f64 {
        self.width() as f64 / self.sampled().max(1) as f64
    }

    /// Whether unshifted k-space column `x` is sampled.
    pub fn is_sampled_unshifted(&self, x: usize) -> bool {
        let w = self.width();
        self.columns[(x + w / 2) % w]
    }

    /// 0/1 weights over an `height x W` plane in unshifted FFT layout.
    pub fn kspace_weights(&self, height: usize) -> Vec<f64> {
        let w = self.width();
        let row: Vec<f64> = (0..w)
            .map(|x| if self.is_sampled_unshifted(x) { 1.0 } else { 0.0 })
            .collect();
        (0..height).flat_map(|_| row.iter().copied()).collect()
    }
}

/// Undersampled measurements `[2, H, W]`, zero where the mask is off.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpace {
    pub data: Tensor,
    pub mask: MaskSpec,
}

impl KSpace {
    /// Mask a full k-space array.
    pub fn from_full(mut full: Tensor, mask: MaskSpec) -> Result<Self> {
        let (h, w) = plane_dims(&full)?;
        if w != mask.width() {
            return dim_err(format!("mask width {} vs k-space width {w}", mask.width()));
        }
        let weights = mask.kspace_weights(h);
        for (i, v) in full.data_mut().iter_mut().enumerate() {
            if weights[i % (h * w)] == 0.0 {
                *v = 0.0;
            }
        }
        Ok(Self { data: full, mask })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.data.shape()[1], self.data.shape()[2])
    }
}

fn plane_dims(t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 2 {
        return dim_err(format!("expected a [2, H, W] complex image, got {s:?}"));
    }
    Ok((s[1], s[2]))
}

/// Unitary forward FFT of a `[..., 2, H, W]` tensor.
pub fn fft2(x: &Tensor) -> Result<Tensor> {
    let mut out = x.clone();
    let shape = out.shape().to_vec();
    fft2_planes(out.data_mut(), &shape, false)?;
    Ok(out)
}

/// Unitary inverse FFT of a `[..., 2, H, W]` tensor.
pub fn ifft2(x: &Tensor) -> Result<Tensor> {
    let mut out = x.clone();
    let shape = out.shape().to_vec();
    fft2_planes(out.data_mut(), &shape, true)?;
    Ok(out)
}

/// `x0 = A^H b`.
pub fn zero_filled(b: &KSpace) -> Result<Tensor> {
    plane_dims(&b.data)?;
    ifft2(&b.data)
}

/// Closed-form data consistency for one image.
pub fn data_consistency(z: &Tensor, b: &KSpace, lambda: f64) -> Result<Tensor> {
    if !(lambda > 0.0) {
        return Err(Error::Contract(format!("lambda must be positive, got {lambda}")));
    }
    let (h, w) = plane_dims(z)?;
    if b.dims() != (h, w) {
        return dim_err(format!("image {h}x{w} vs k-space {:?}", b.dims()));
    }
    let mut g = Graph::new();
    let zv = g.constant(z.clone().reshape(&[1, 2, h, w])?);
    let lam = g.constant(Tensor::scalar(lambda));
    let zhat = g.fft2(zv, false)?;
    let measured = Rc::new(b.data.clone().reshape(&[1, 2, h, w])?);
    let x = g.dc_combine(zhat, lam, measured, Rc::new(b.mask.kspace_weights(h)))?;
    let out = g.fft2(x, true)?;
    g.value(out).clone().reshape(&[2, h, w])
}

/// Mean squared error over all elements.
pub fn training_loss(pred: &Tensor, reference: &Tensor) -> Result<f64> {
    pred.check_same_shape(reference, "training loss")?;
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Stacked measurements, masks and (optionally) references for a batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[N, 2, H, W]` k-space.
    pub kspace: Rc<Tensor>,
    /// `N * H * W` mask weights.
    pub mask: Rc<Vec<f64>>,
    /// `[N, 2, H, W]` ground-truth images.
    pub target: Option<Tensor>,
}

impl Batch {
    pub fn new(kspaces: &[&KSpace], targets: Option<&[&Tensor]>) -> Result<Self> {
        let first = kspaces.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
        let (h, _) = first.dims();
        let data: Vec<&Tensor> = kspaces.iter().map(|k| &k.data).collect();
        let kspace = Rc::new(Tensor::stack(&data)?);
        let mask = Rc::new(kspaces.iter().flat_map(|k| k.mask.kspace_weights(h)).collect());
        let target = match targets {
            Some(t) => {
                if t.len() != kspaces.len() {
                    return dim_err("targets and measurements differ in count");
                }
                Some(Tensor::stack(t)?)
            }
            None => None,
        };
        Ok(Self { kspace, mask, target })
    }

    pub fn len(&self) -> usize {
        self.kspace.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `J` shared-weight iterations of residual denoising and data consistency.
#[derive(Clone, Debug, PartialEq)]
pub struct UnrolledModel {
    pub iterations: usize,
    pub denoiser: Denoiser,
}

impl UnrolledModel {
    pub fn new(iterations: usize, denoiser: Denoiser) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::Construction(
                "at least one unrolled iteration is required".into(),
            ));
        }
        Ok(Self { iterations, denoiser })
    }

    /// Denoiser weights plus `lambda_raw`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet> {
        let mut ps = self.denoiser.init_params(rng)?;
        ps.insert(LAMBDA_PARAM, Tensor::scalar(softplus_inverse(LAMBDA_INIT)))?;
        Ok(ps)
    }

    /// Residual denoising step `z = x + net(x)`.
    pub fn denoise(&self, g: &mut Graph, x: Var, params: &BoundParams, alpha: Option<Var>) -> Result<Var> {
        let r = self.denoiser.forward(g, x, params, alpha)?;
        g.add(x, r)
    }

    /// One data-consistency step on the graph.
    pub fn consistency(&self, g: &mut Graph, z: Var, lambda: Var, batch: &Batch) -> Result<Var> {
        let zhat = g.fft2(z, false)?;
        let x = g.dc_combine(zhat, lambda, batch.kspace.clone(), batch.mask.clone())?;
        g.fft2(x, true)
    }

    /// Records the full unrolled pass and returns the `[N, 2, H, W]` output.
    pub fn forward(&self, g: &mut Graph, params: &BoundParams, alpha: Option<Var>, batch: &Batch) -> Result<Var> {
        let b = g.constant((*batch.kspace).clone());
        let mut x = g.fft2(b, true)?;
        let raw = params.get(LAMBDA_PARAM)?;
        let lambda = g.softplus(raw);
        for _ in 0..self.iterations {
            let z = self.denoise(g, x, params, alpha)?;
            x = self.consistency(g, z, lambda, batch)?;
        }
        Ok(x)
    }

    /// Training loss of a batch with targets, recorded on `g`.
    pub fn loss(&self, g: &mut Graph, params: &BoundParams, alpha: Option<Var>, batch: &Batch) -> Result<Var> {
        let target = batch
            .target
            .clone()
            .ok_or_else(|| Error::Contract("batch has no targets".into()))?;
        let pred = self.forward(g, params, alpha, batch)?;
        let t = g.constant(target);
        g.mse(pred, t)
    }

    /// Reconstructed images for a batch, `[N, 2, H, W]`.
    pub fn predict(&self, params: &ParamSet, alpha: Option<&ArchEncoding>, batch: &Batch) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = params.bind_frozen(&mut g);
        let a = alpha.map(|a| g.constant(a.logits.clone()));
        let out = self.forward(&mut g, &bound, a, batch)?;
        Ok(g.value(out).clone())
    }

    pub fn lambda(params: &ParamSet) -> Result<f64> {
        let raw = params
            .get(LAMBDA_PARAM)
            .ok_or_else(|| Error::Construction(format!("missing `{LAMBDA_PARAM}`")))?
            .item()?;
        Ok(crate::autodiff::softplus(raw))
    }
}

/// Reconstruct one image from its measurements.
pub fn reconstruct(
    b: &KSpace,
    model: &UnrolledModel,
    params: &ParamSet,
    alpha: Option<&ArchEncoding>,
) -> Result<Tensor> {
    let (h, w) = b.dims();
    let batch = Batch::new(&[b], None)?;
    model.predict(params, alpha, &batch)?.reshape(&[2, h, w])
}
