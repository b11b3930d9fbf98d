//! Server-side weighted aggregation and the fairness weight rule.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};

/// Aggregation weights on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    pub a: Vec<f64>,
}

pub const SIMPLEX_TOL: f64 = 1e-12;

impl AggregationWeights {
    /// `1/C` for each client.
    pub fn uniform(clients: usize) -> Self {
        Self {
            a: vec![1.0 / clients as f64; clients],
        }
    }

    /// `N_c / N`.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Aggregation("no samples to weight".into()));
        }
        Ok(Self {
            a: counts.iter().map(|&n| n as f64 / total as f64).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        !self.a.is_empty()
            && self.a.iter().all(|&v| v >= 0.0 && v.is_finite())
            && (self.a.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
    }
}

/// `sum_c w_c theta_c`, accumulated in the given (ascending client id)
/// order as `theta_0 + sum_c w_c (theta_c - theta_0)`, so identical
/// inputs aggregate to exactly that value.
pub fn aggregate_weighted(updates: &[&ParamSet], weights: &[f64]) -> Result<ParamSet> {
    let (&anchor, _) = updates
        .split_first()
        .ok_or_else(|| Error::Aggregation("no client updates".into()))?;
    if weights.len() != updates.len() {
        return Err(Error::Aggregation(format!(
            "{} weights for {} updates",
            weights.len(),
            updates.len()
        )));
    }
    if updates.iter().any(|u| !u.same_structure(anchor)) {
        return Err(Error::Aggregation("client parameter sets differ in structure".into()));
    }
    let mut out = anchor.clone();
    let mut acc = anchor.zeros_like();
    for (u, &w) in updates.iter().zip(weights) {
        for ((_, a), ((_, x), (_, x0))) in acc.iter_mut().zip(u.iter().zip(anchor.iter())) {
            for ((av, xv), x0v) in a.data_mut().iter_mut().zip(x.data()).zip(x0.data()) {
                *av += w * (xv - x0v);
            }
        }
    }
    out.axpy(1.0, &acc)?;
    Ok(out)
}

/// Aggregate with explicit weights, or `N_c/N` when `weights` is `None`.
pub fn aggregate(updates: &[(&ParamSet, usize)], weights: Option<&AggregationWeights>) -> Result<ParamSet> {
    let params: Vec<&ParamSet> = updates.iter().map(|(p, _)| *p).collect();
    let w = match weights {
        Some(w) => w.clone(),
        None => AggregationWeights::from_counts(&updates.iter().map(|(_, n)| *n).collect::<Vec<_>>())?,
    };
    aggregate_weighted(&params, &w.a)
}

/// Fairness adjustment of aggregation weights from risk gaps.
///
/// `beta_c = a_c` when `G_c <= 0`, otherwise `a_c + gamma * G_c / max(G)`;
/// the result is `beta / sum(beta)`. When no gap is positive the previous
/// weights are returned unchanged.
pub fn update_fair_weights(prev: &AggregationWeights, gaps: &[f64], gamma: f64) -> Result<AggregationWeights> {
    if !prev.is_valid() {
        return Err(Error::Contract(format!(
            "previous weights {:?} are not on the simplex",
            prev.a
        )));
    }
    if gaps.len() != prev.len() {
        return Err(Error::Contract(format!(
            "{} gaps for {} clients",
            gaps.len(),
            prev.len()
        )));
    }
    if gaps.iter().any(|g| g.is_nan()) {
        return Err(Error::Contract("risk gap is NaN".into()));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Contract(format!("gamma must be >= 0, got {gamma}")));
    }
    let max_gap = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_gap <= 0.0 {
        return Ok(prev.clone());
    }
    let beta: Vec<f64> = prev
        .a
        .iter()
        .zip(gaps)
        .map(|(&a, &g)| if g <= 0.0 { a } else { a + gamma * g / max_gap })
        .collect();
    let total: f64 = beta.iter().sum();
    Ok(AggregationWeights {
        a: beta.iter().map(|b| b / total).collect(),
    })
}
