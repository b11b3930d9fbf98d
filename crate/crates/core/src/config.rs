//! Run configuration: JSON with documented defaults and strict keys.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasim::{
    acs_columns, default_contrast_shift_profile, default_training_profiles, default_unseen_center_profile,
    ClientProfile, MaskParams,
};
use crate::error::{Error, Result};
use crate::federation::{FederationConfig, OptimSpec, OptimizerKind};
use crate::metrics::Scenario;
use crate::reconstructor::MaskKind;
use crate::search_space::ModelShape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Square image side, a power of two and at least 16.
    pub image_size: usize,
    pub samples_per_client: usize,
    /// Train : validation : test.
    pub split_ratios: [f64; 3],
    pub clients: Vec<ClientProfile>,
    pub contrast_shift_profile: ClientProfile,
    pub unseen_center_profile: ClientProfile,
    /// Images drawn from each held-out generator at evaluation.
    pub holdout_samples: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            samples_per_client: 64,
            split_ratios: [7.0, 1.0, 2.0],
            clients: default_training_profiles(),
            contrast_shift_profile: default_contrast_shift_profile(),
            unseen_center_profile: default_unseen_center_profile(),
            holdout_samples: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub cells: usize,
    pub nodes: usize,
    /// Unrolled iterations `J`.
    pub iterations: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            cells: 3,
            nodes: 2,
            iterations: 3,
        }
    }
}

impl ModelConfig {
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            channels: self.channels,
            cells: self.cells,
            nodes: self.nodes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr_alpha: f64,
    pub alpha_weight_decay: f64,
    pub lr_theta: f64,
    pub mix_coeff: f64,
    pub batch_size: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            local_epochs: 5,
            lr_alpha: 1e-4,
            alpha_weight_decay: 1e-3,
            lr_theta: 1e-3,
            mix_coeff: 1.0,
            batch_size: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Fairness increment control.
    pub gamma: f64,
    pub fairness_enabled: bool,
    /// Write a checkpoint every this many rounds (0 disables).
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            local_epochs: 5,
            lr: 1e-3,
            weight_decay: 1e-2,
            batch_size: 4,
            gamma: 0.1,
            fairness_enabled: true,
            checkpoint_interval: 0,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub mask: MaskParams,
    pub model: ModelConfig,
    pub search: SearchConfig,
    pub train: TrainConfig,
    /// Run the clients of a round on the rayon pool.
    pub parallel_clients: bool,
    pub scenarios: Vec<Scenario>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            mask: MaskParams::default(),
            model: ModelConfig::default(),
            search: SearchConfig::default(),
            train: TrainConfig::default(),
            parallel_clients: false,
            scenarios: Scenario::ALL.to_vec(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.image_size < 16 || !d.image_size.is_power_of_two() {
            return Err(invalid(format!(
                "data.image_size must be a power of two >= 16, got {}",
                d.image_size
            )));
        }
        if d.samples_per_client < 3 {
            return Err(invalid("data.samples_per_client must be >= 3"));
        }
        if d.split_ratios.iter().any(|r| !(*r > 0.0)) {
            return Err(invalid("data.split_ratios must be positive"));
        }
        if d.clients.is_empty() {
            return Err(invalid("data.clients must list at least one client"));
        }
        if d.holdout_samples == 0 {
            return Err(invalid("data.holdout_samples must be >= 1"));
        }
        let mut ids = BTreeSet::new();
        for p in d
            .clients
            .iter()
            .chain([&d.contrast_shift_profile, &d.unseen_center_profile])
        {
            p.validate()?;
            if !ids.insert(p.client_id) {
                return Err(invalid(format!("duplicate client_id {}", p.client_id)));
            }
        }
        let m = &self.mask;
        if !(m.acceleration >= 1.0) {
            return Err(invalid("mask.acceleration must be >= 1"));
        }
        if !(m.acs_fraction > 0.0 && m.acs_fraction < 1.0) || m.acs_fraction * (d.image_size as f64) < 2.0 {
            return Err(invalid(format!(
                "mask.acs_fraction {} must lie in (0,1) and cover >= 2 of {} columns",
                m.acs_fraction, d.image_size
            )));
        }
        if acs_columns(d.image_size, m.acs_fraction) > (d.image_size as f64 / m.acceleration).round() as usize {
            return Err(invalid("mask: ACS block exceeds the sampling budget"));
        }
        let md = &self.model;
        if md.channels == 0 || md.nodes == 0 || md.iterations == 0 {
            return Err(invalid("model.channels, model.nodes and model.iterations must be >= 1"));
        }
        if self.train.gamma < 0.0 || !self.train.gamma.is_finite() {
            return Err(invalid(format!("train.gamma must be >= 0, got {}", self.train.gamma)));
        }
        let mut seen = BTreeSet::new();
        if !self.scenarios.iter().all(|s| seen.insert(*s)) {
            return Err(invalid("scenarios contain duplicates"));
        }
        self.search_federation().validate()?;
        self.train_federation().validate()
    }

    pub fn search_federation(&self) -> FederationConfig {
        let s = &self.search;
        FederationConfig {
            rounds: s.rounds,
            local_epochs: s.local_epochs,
            alpha_opt: OptimSpec::new(OptimizerKind::Adam, s.lr_alpha, s.alpha_weight_decay),
            theta_opt: OptimSpec::new(OptimizerKind::Adam, s.lr_theta, 0.0),
            mix_coeff: s.mix_coeff,
            fairness_gamma: 0.0,
            fairness_enabled: false,
            batch_size: s.batch_size,
            master_seed: self.seed,
            parallel: self.parallel_clients,
        }
    }

    pub fn train_federation(&self) -> FederationConfig {
        let t = &self.train;
        FederationConfig {
            rounds: t.rounds,
            local_epochs: t.local_epochs,
            alpha_opt: OptimSpec::new(OptimizerKind::Adam, 1e-4, 0.0),
            theta_opt: OptimSpec::new(OptimizerKind::AdamW, t.lr, t.weight_decay),
            mix_coeff: 0.0,
            fairness_gamma: t.gamma,
            fairness_enabled: t.fairness_enabled,
            batch_size: t.batch_size,
            master_seed: self.seed,
            parallel: self.parallel_clients,
        }
    }

    /// Mask of a scenario's measurements.
    pub fn scenario_mask(&self, scenario: Scenario) -> MaskParams {
        match scenario {
            Scenario::MaskShift => MaskParams {
                kind: MaskKind::Equispaced1d,
                ..self.mask
            },
            Scenario::AccelerationShift => MaskParams {
                acceleration: 6.0,
                ..self.mask
            },
            _ => self.mask,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Parse, fill defaults and validate a JSON document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let text = if text.trim().is_empty() { "{}" } else { text };
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}
