//! Simulated server and clients for federated architecture search and
//! fairness-weighted federated training.
//!
//! Clients in a round only read an immutable snapshot of the global state
//! and return their results; the server aggregates in ascending client-id
//! order. Each client's batch order comes from a stream keyed by
//! `(master_seed, phase, client id, round, epoch)`, so running clients in
//! parallel or sequentially produces bit-identical server state.

mod aggregate;
mod objective;
mod optim;
mod search;
mod train;

use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate, aggregate_weighted, update_fair_weights, AggregationWeights, SIMPLEX_TOL};
pub use objective::{mean_loss, Objective, ReconObjective};
pub use optim::{OptimSpec, Optimizer, OptimizerKind};
pub use search::{local_search_step, searcher_run, SearchClientEntry, SearchOutcome, SearchRoundReport};
pub use train::{compute_risk_gap, trainer_round, trainer_run, ClientRoundEntry, RoundReport, ServerState};

use crate::autodiff::ParamSet;
use crate::datasim::DatasetSplit;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Settings of one federated phase (search or training).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    /// Optimizer for the architecture logits (search only).
    pub alpha_opt: OptimSpec,
    /// Optimizer for the model weights.
    pub theta_opt: OptimSpec,
    /// Weight of the validation-loss gradient in the logits update.
    pub mix_coeff: f64,
    pub fairness_gamma: f64,
    pub fairness_enabled: bool,
    pub batch_size: usize,
    pub master_seed: u64,
    /// Run the clients of a round on the rayon pool.
    pub parallel: bool,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::Validation("local_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        if !(self.fairness_gamma >= 0.0) {
            return Err(Error::Validation(format!(
                "fairness gamma must be >= 0, got {}",
                self.fairness_gamma
            )));
        }
        if !self.mix_coeff.is_finite() {
            return Err(Error::Validation("mix_coeff must be finite".into()));
        }
        self.alpha_opt.validate("alpha optimizer")?;
        self.theta_opt.validate("theta optimizer")
    }
}

/// Phase tags for batch-order streams.
pub(crate) const PHASE_SEARCH: u64 = 1;
pub(crate) const PHASE_TRAIN: u64 = 2;

/// Client-side state carried across rounds.
#[derive(Clone, Debug)]
pub struct ClientState<T> {
    pub id: u64,
    pub data: DatasetSplit<T>,
    pub local_theta: Option<ParamSet>,
    pub local_alpha: Option<Tensor>,
    /// Validation loss of the client's previous local model.
    pub prev_local_loss: Option<f64>,
    pub theta_opt: Optimizer,
    pub alpha_opt: Optimizer,
}

impl<T> ClientState<T> {
    pub fn new(id: u64, data: DatasetSplit<T>, cfg: &FederationConfig) -> Self {
        Self {
            id,
            data,
            local_theta: None,
            local_alpha: None,
            prev_local_loss: None,
            theta_opt: Optimizer::new(cfg.theta_opt),
            alpha_opt: Optimizer::new(cfg.alpha_opt),
        }
    }

    /// `N_c`, the training-split size.
    pub fn sample_count(&self) -> usize {
        self.data.train.len()
    }
}

fn check_clients<T>(clients: &[ClientState<T>]) -> Result<()> {
    if clients.is_empty() {
        return Err(Error::Config("at least one client is required".into()));
    }
    if clients.windows(2).any(|w| w[0].id >= w[1].id) {
        return Err(Error::Config("clients must be sorted by strictly increasing id".into()));
    }
    Ok(())
}

/// Run `f` on every client, in parallel when requested; results keep
/// client order.
fn map_clients<T, R, F>(clients: &mut [ClientState<T>], parallel: bool, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(&mut ClientState<T>) -> Result<R> + Sync + Send,
{
    if parallel {
        use rayon::prelude::*;
        clients.par_iter_mut().map(f).collect()
    } else {
        clients.iter_mut().map(f).collect()
    }
}

/// Shuffled minibatches of `items` for one epoch.
fn epoch_batches<'a, T>(items: &'a [T], batch_size: usize, seed_parts: &[u64]) -> Vec<Vec<&'a T>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut crate::seed::rng_for(seed_parts));
    order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| &items[i]).collect())
        .collect()
}
