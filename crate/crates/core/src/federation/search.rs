use serde::{Deserialize, Serialize};

use super::{
    aggregate_weighted, check_clients, epoch_batches, map_clients, mean_loss, AggregationWeights, ClientState,
    FederationConfig, Objective, PHASE_SEARCH,
};
use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::search_space::{discretize, ArchEncoding, DiscreteArch, ModelShape};
use crate::seed::tag;
use crate::tensor::Tensor;

const ALPHA: &str = "alpha";

fn alpha_set(t: Tensor) -> ParamSet {
    [(ALPHA.to_string(), t)].into_iter().collect()
}

/// `Z` local epochs of joint updates on one client.
///
/// Each step evaluates gradients at the current `(theta, alpha)`, then
/// moves `alpha` along `grad_tr + mix * grad_val` and `theta` along
/// `grad_tr` only. Returns the client's `(alpha, theta)`.
pub fn local_search_step<O: Objective>(
    client: &mut ClientState<O::Item>,
    theta: &ParamSet,
    alpha: &Tensor,
    cfg: &FederationConfig,
    obj: &O,
    round: usize,
) -> Result<(Tensor, ParamSet)> {
    if client.data.train.is_empty() || client.data.val.is_empty() {
        return Err(Error::Config(format!(
            "client {} needs non-empty train and validation splits",
            client.id
        )));
    }
    let mut theta = theta.clone();
    let mut alpha = alpha_set(alpha.clone());
    let bs = cfg.batch_size;
    for epoch in 0..cfg.local_epochs {
        let key = [
            tag::BATCH,
            cfg.master_seed,
            PHASE_SEARCH,
            client.id,
            round as u64,
            epoch as u64,
        ];
        let train = epoch_batches(&client.data.train, bs, &[&key[..], &[0]].concat());
        let val = epoch_batches(&client.data.val, bs, &[&key[..], &[1]].concat());
        for (i, tb) in train.iter().enumerate() {
            let a = alpha.get(ALPHA).expect("alpha present");
            let (_, g_theta, g_alpha) = obj.loss_grad(&theta, Some(a), tb)?;
            let mut g_alpha = g_alpha.ok_or_else(|| Error::Contract("objective returned no alpha gradient".into()))?;
            if cfg.mix_coeff != 0.0 {
                let vb = &val[i % val.len()];
                let (_, _, g_val) = obj.loss_grad(&theta, Some(a), vb)?;
                let g_val = g_val.ok_or_else(|| Error::Contract("objective returned no alpha gradient".into()))?;
                g_alpha.axpy(cfg.mix_coeff, &g_val)?;
            }
            client.alpha_opt.step(&mut alpha, &alpha_set(g_alpha))?;
            client.theta_opt.step(&mut theta, &g_theta)?;
        }
    }
    let alpha = alpha.into_iter().next().expect("alpha present").1;
    client.local_alpha = Some(alpha.clone());
    client.local_theta = Some(theta.clone());
    Ok((alpha, theta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchClientEntry {
    pub client_id: u64,
    /// Validation loss of the aggregated model on this client.
    pub val_loss: f64,
    pub weight: f64,
    pub samples: usize,
}

/// Global-model validation losses after a search round (round 0 is the
/// initialization).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRoundReport {
    pub round: usize,
    pub mean_val_loss: f64,
    pub clients: Vec<SearchClientEntry>,
}

pub struct SearchOutcome {
    pub arch: DiscreteArch,
    pub alpha: ArchEncoding,
    pub theta: ParamSet,
    pub reports: Vec<SearchRoundReport>,
}

fn search_report<O: Objective>(
    round: usize,
    clients: &[ClientState<O::Item>],
    weights: &AggregationWeights,
    theta: &ParamSet,
    alpha: &Tensor,
    cfg: &FederationConfig,
    obj: &O,
) -> Result<SearchRoundReport> {
    let entries = clients
        .iter()
        .zip(&weights.a)
        .map(|(c, &w)| {
            Ok(SearchClientEntry {
                client_id: c.id,
                val_loss: mean_loss(obj, theta, Some(alpha), &c.data.val, cfg.batch_size)?,
                weight: w,
                samples: c.sample_count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_val_loss = entries.iter().map(|e| e.val_loss).sum::<f64>() / entries.len() as f64;
    Ok(SearchRoundReport {
        round,
        mean_val_loss,
        clients: entries,
    })
}

/// Federated search: `R` rounds of local joint updates followed by
/// `N_c/N`-weighted aggregation of both logits and weights, then
/// discretization of the final logits.
pub fn searcher_run<O: Objective>(
    cfg: &FederationConfig,
    clients: &mut [ClientState<O::Item>],
    obj: &O,
    theta0: ParamSet,
    alpha0: ArchEncoding,
    shape: &ModelShape,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    check_clients(clients)?;
    let weights = AggregationWeights::from_counts(&clients.iter().map(|c| c.sample_count()).collect::<Vec<_>>())?;
    let mut theta = theta0;
    let mut alpha = alpha0.logits;
    let mut reports = vec![search_report(0, clients, &weights, &theta, &alpha, cfg, obj)?];
    for round in 1..=cfg.rounds {
        let (t_snap, a_snap) = (&theta, &alpha);
        let results = map_clients(clients, cfg.parallel, |c| {
            local_search_step(c, t_snap, a_snap, cfg, obj, round)
        })?;
        let thetas: Vec<&ParamSet> = results.iter().map(|(_, t)| t).collect();
        let alphas: Vec<ParamSet> = results.iter().map(|(a, _)| alpha_set(a.clone())).collect();
        let alpha_refs: Vec<&ParamSet> = alphas.iter().collect();
        let new_theta = aggregate_weighted(&thetas, &weights.a)?;
        let new_alpha = aggregate_weighted(&alpha_refs, &weights.a)?;
        theta = new_theta;
        alpha = new_alpha.into_iter().next().expect("alpha present").1;
        reports.push(search_report(round, clients, &weights, &theta, &alpha, cfg, obj)?);
    }
    let alpha = ArchEncoding::new(alpha)?;
    Ok(SearchOutcome {
        arch: discretize(&alpha, shape)?,
        alpha,
        theta,
        reports,
    })
}
