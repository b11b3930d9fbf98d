use crate::autodiff::{Graph, ParamSet};
use crate::datasim::Sample;
use crate::error::{Error, Result};
use crate::reconstructor::{Batch, UnrolledModel};
use crate::tensor::Tensor;

/// A differentiable per-batch loss over model weights and (optionally)
/// architecture logits.
pub trait Objective: Sync {
    type Item: Sync + Send;

    /// Loss with gradients for `theta` and, when `alpha` is given, for it.
    fn loss_grad(
        &self,
        theta: &ParamSet,
        alpha: Option<&Tensor>,
        batch: &[&Self::Item],
    ) -> Result<(f64, ParamSet, Option<Tensor>)>;

    fn loss(&self, theta: &ParamSet, alpha: Option<&Tensor>, batch: &[&Self::Item]) -> Result<f64>;
}

/// Mean loss over `items`, evaluated in order in chunks of `batch_size`.
pub fn mean_loss<O: Objective>(
    obj: &O,
    theta: &ParamSet,
    alpha: Option<&Tensor>,
    items: &[O::Item],
    batch_size: usize,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Config("cannot evaluate a loss on an empty split".into()));
    }
    let refs: Vec<&O::Item> = items.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(batch_size.max(1)) {
        total += obj.loss(theta, alpha, chunk)? * chunk.len() as f64;
    }
    Ok(total / items.len() as f64)
}

/// MSE of an unrolled reconstructor against ground-truth images.
pub struct ReconObjective {
    pub model: UnrolledModel,
}

impl ReconObjective {
    fn batch(samples: &[&Sample]) -> Result<Batch> {
        let ks: Vec<_> = samples.iter().map(|s| &s.kspace).collect();
        let ims: Vec<_> = samples.iter().map(|s| &s.image).collect();
        Batch::new(&ks, Some(&ims))
    }
}

impl Objective for ReconObjective {
    type Item = Sample;

    fn loss_grad(
        &self,
        theta: &ParamSet,
        alpha: Option<&Tensor>,
        batch: &[&Sample],
    ) -> Result<(f64, ParamSet, Option<Tensor>)> {
        let b = Self::batch(batch)?;
        let mut g = Graph::new();
        let bound = theta.bind(&mut g);
        let a = alpha.map(|a| g.input(a.clone()));
        let loss = self.model.loss(&mut g, &bound, a, &b)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).item()?, grads.params(), a.map(|v| grads.wrt(v))))
    }

    fn loss(&self, theta: &ParamSet, alpha: Option<&Tensor>, batch: &[&Sample]) -> Result<f64> {
        let b = Self::batch(batch)?;
        let mut g = Graph::new();
        let bound = theta.bind_frozen(&mut g);
        let a = alpha.map(|a| g.constant(a.clone()));
        let loss = self.model.loss(&mut g, &bound, a, &b)?;
        g.value(loss).item()
    }
}
