use serde::{Deserialize, Serialize};

use super::{
    aggregate_weighted, check_clients, epoch_batches, map_clients, mean_loss, update_fair_weights, AggregationWeights,
    ClientState, FederationConfig, Objective, PHASE_TRAIN,
};
use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::seed::tag;

/// Server state of the training phase.
#[derive(Clone, Debug)]
pub struct ServerState {
    pub global_theta: ParamSet,
    /// Fairness-adjusted weights, starting at `1/C`.
    pub agg_weights: AggregationWeights,
    /// Completed rounds.
    pub round: usize,
}

impl ServerState {
    pub fn new(theta0: ParamSet, clients: usize) -> Self {
        Self {
            global_theta: theta0,
            agg_weights: AggregationWeights::uniform(clients),
            round: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundEntry {
    pub client_id: u64,
    /// `None` in round 1, where no previous local model exists.
    pub gap: Option<f64>,
    /// Validation loss of the received global model.
    pub global_loss: f64,
    /// Validation loss of the client's newly trained local model.
    pub local_loss: f64,
    /// Weight used for this round's aggregation.
    pub weight: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub fairness_applied: bool,
    pub clients: Vec<ClientRoundEntry>,
    pub mean_global_loss: f64,
    pub mean_local_loss: f64,
}

/// `loss(global) - loss(previous local)` on the client's validation split.
pub fn compute_risk_gap<O: Objective>(
    client: &ClientState<O::Item>,
    global_theta: &ParamSet,
    obj: &O,
    batch_size: usize,
) -> Result<f64> {
    let prev = client.prev_local_loss.ok_or_else(|| {
        Error::Contract(format!(
            "client {} has no previous local model; the gap is undefined in round 1",
            client.id
        ))
    })?;
    Ok(mean_loss(obj, global_theta, None, &client.data.val, batch_size)? - prev)
}

struct ClientResult {
    gap: Option<f64>,
    global_loss: f64,
    local_loss: f64,
    theta: ParamSet,
}

fn local_train<O: Objective>(
    client: &mut ClientState<O::Item>,
    global: &ParamSet,
    cfg: &FederationConfig,
    obj: &O,
    round: usize,
) -> Result<ClientResult> {
    if client.data.train.is_empty() || client.data.val.is_empty() {
        return Err(Error::Config(format!(
            "client {} needs non-empty train and validation splits",
            client.id
        )));
    }
    let global_loss = mean_loss(obj, global, None, &client.data.val, cfg.batch_size)?;
    let gap = client.prev_local_loss.map(|p| global_loss - p);
    let mut theta = global.clone();
    for epoch in 0..cfg.local_epochs {
        let key = [
            tag::BATCH,
            cfg.master_seed,
            PHASE_TRAIN,
            client.id,
            round as u64,
            epoch as u64,
        ];
        for batch in epoch_batches(&client.data.train, cfg.batch_size, &key) {
            let (_, grads, _) = obj.loss_grad(&theta, None, &batch)?;
            client.theta_opt.step(&mut theta, &grads)?;
        }
    }
    let local_loss = mean_loss(obj, &theta, None, &client.data.val, cfg.batch_size)?;
    client.prev_local_loss = Some(local_loss);
    client.local_theta = Some(theta.clone());
    Ok(ClientResult {
        gap,
        global_loss,
        local_loss,
        theta,
    })
}

/// One training round: broadcast, local training, optional fairness
/// re-weighting (from round 2), aggregation.
///
/// With fairness disabled the aggregation uses `N_c/N`.
pub fn trainer_round<O: Objective>(
    server: &mut ServerState,
    clients: &mut [ClientState<O::Item>],
    cfg: &FederationConfig,
    obj: &O,
) -> Result<RoundReport> {
    check_clients(clients)?;
    if server.agg_weights.len() != clients.len() {
        return Err(Error::Contract(format!(
            "{} aggregation weights for {} clients",
            server.agg_weights.len(),
            clients.len()
        )));
    }
    let round = server.round + 1;
    let snapshot = &server.global_theta;
    let results = map_clients(clients, cfg.parallel, |c| local_train(c, snapshot, cfg, obj, round))?;

    let gaps: Option<Vec<f64>> = results.iter().map(|r| r.gap).collect();
    let mut fairness_applied = false;
    let weights = if cfg.fairness_enabled {
        if let Some(gaps) = gaps {
            server.agg_weights = update_fair_weights(&server.agg_weights, &gaps, cfg.fairness_gamma)?;
            fairness_applied = true;
        }
        server.agg_weights.clone()
    } else {
        AggregationWeights::from_counts(&clients.iter().map(|c| c.sample_count()).collect::<Vec<_>>())?
    };
    let thetas: Vec<&ParamSet> = results.iter().map(|r| &r.theta).collect();
    server.global_theta = aggregate_weighted(&thetas, &weights.a)?;
    server.round = round;

    let entries: Vec<ClientRoundEntry> = clients
        .iter()
        .zip(&results)
        .zip(&weights.a)
        .map(|((c, r), &w)| ClientRoundEntry {
            client_id: c.id,
            gap: r.gap,
            global_loss: r.global_loss,
            local_loss: r.local_loss,
            weight: w,
            samples: c.sample_count(),
        })
        .collect();
    let n = entries.len() as f64;
    Ok(RoundReport {
        round,
        fairness_applied,
        mean_global_loss: entries.iter().map(|e| e.global_loss).sum::<f64>() / n,
        mean_local_loss: entries.iter().map(|e| e.local_loss).sum::<f64>() / n,
        clients: entries,
    })
}

/// `R` sequential rounds. `on_round` sees every report and the server
/// state right after the round (for streaming reports or checkpoints).
pub fn trainer_run<O, F>(
    cfg: &FederationConfig,
    clients: &mut [ClientState<O::Item>],
    obj: &O,
    theta0: ParamSet,
    mut on_round: F,
) -> Result<(ParamSet, Vec<RoundReport>)>
where
    O: Objective,
    F: FnMut(&RoundReport, &ServerState) -> Result<()>,
{
    cfg.validate()?;
    check_clients(clients)?;
    let mut server = ServerState::new(theta0, clients.len());
    let mut reports = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let report = trainer_round(&mut server, clients, cfg, obj)?;
        on_round(&report, &server)?;
        reports.push(report);
    }
    Ok((server.global_theta, reports))
}
