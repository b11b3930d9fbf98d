//! End-to-end stages behind the command-line tool. Every stage reads a
//! [`RunConfig`] and writes under `out_dir`:
//!
//! ```text
//! config.json                 resolved configuration
//! data/client_XXX.gamr        per-client datasets
//! search/search.gamr          supernet weights, logits and chosen architecture
//! search/arch.json            chosen architecture
//! search/rounds.jsonl         per-round validation losses
//! train/model.gamr            trained discrete model
//! train/rounds.jsonl          per-round losses, gaps and weights
//! eval/metrics.{csv,jsonl}    per-scenario, per-client metrics
//! report/summary.{csv,md}     per-scenario means and fairness statistics
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::ParamSet;
use crate::checkpoint::{load_checkpoint, read_container, save_checkpoint, Checkpoint, ContainerWriter, DType, MAGIC};
use crate::config::RunConfig;
use crate::datasim::{generate_client, split_dataset, ClientProfile, MaskParams, Sample};
use crate::error::{Error, Result};
use crate::federation::{
    searcher_run, trainer_run, ClientState, FederationConfig, ReconObjective, RoundReport, SearchRoundReport,
};
use crate::metrics::{fairness_stats, param_count, psnr, ssim, MetricRecord, Scenario};
use crate::reconstructor::{training_loss, zero_filled, Batch, KSpace, MaskSpec, UnrolledModel};
use crate::search_space::{ArchEncoding, Denoiser, DiscreteArch};
use crate::seed::{derive_seed, rng_for, tag};
use crate::tensor::Tensor;

/// Entry name of the architecture logits inside a search checkpoint.
pub const LOGITS_ENTRY: &str = "arch.logits";

const PHASE_SEARCH: u64 = 1;
const PHASE_TRAIN: u64 = 2;

/// Output locations under one run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn client_data(&self, id: u64) -> PathBuf {
        self.root.join("data").join(format!("client_{id:03}.gamr"))
    }
    pub fn search_checkpoint(&self) -> PathBuf {
        self.root.join("search/search.gamr")
    }
    pub fn search_arch(&self) -> PathBuf {
        self.root.join("search/arch.json")
    }
    pub fn search_rounds(&self) -> PathBuf {
        self.root.join("search/rounds.jsonl")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("train/model.gamr")
    }
    pub fn round_checkpoint(&self, round: usize) -> PathBuf {
        self.root.join(format!("train/round_{round:04}.gamr"))
    }
    pub fn train_rounds(&self) -> PathBuf {
        self.root.join("train/rounds.jsonl")
    }
    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("eval/metrics.csv")
    }
    pub fn metrics_jsonl(&self) -> PathBuf {
        self.root.join("eval/metrics.jsonl")
    }
    pub fn summary_csv(&self) -> PathBuf {
        self.root.join("report/summary.csv")
    }
    pub fn summary_md(&self) -> PathBuf {
        self.root.join("report/summary.md")
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    write_text(path, &s)
}

/// Echo the resolved configuration into the run directory.
pub fn write_config(cfg: &RunConfig) -> Result<()> {
    write_text(&RunPaths::new(&cfg.out_dir).config(), &(cfg.to_json()? + "\n"))
}

/// A profile whose generator streams also depend on the run seed.
pub fn effective_profile(cfg: &RunConfig, p: &ClientProfile) -> ClientProfile {
    ClientProfile {
        seed: derive_seed(&[cfg.seed, p.seed]),
        ..p.clone()
    }
}

fn data_key(cfg: &RunConfig) -> String {
    let json = serde_json::json!({ "seed": cfg.seed, "data": cfg.data, "mask": cfg.mask });
    Sha256::digest(json.to_string().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A client's samples under the training mask settings.
pub fn client_samples(cfg: &RunConfig, profile: &ClientProfile, count: usize) -> Result<Vec<Sample>> {
    generate_client(
        &effective_profile(cfg, profile),
        count,
        cfg.data.image_size,
        &cfg.mask,
        0,
    )
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    data_key: String,
    profile: ClientProfile,
    mask: MaskParams,
}

/// Store samples as `images`, `kspace` (`[N, 2, H, W]`) and centered
/// column masks (`[N, W]`, 0/1).
pub fn save_dataset(
    path: &Path,
    key: &str,
    profile: &ClientProfile,
    mask: &MaskParams,
    samples: &[Sample],
) -> Result<()> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let kspace: Vec<&Tensor> = samples.iter().map(|s| &s.kspace.data).collect();
    let masks: Vec<Tensor> = samples
        .iter()
        .map(|s| Tensor::from_vec(s.mask().columns.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()))
        .collect();
    let mut w = ContainerWriter::new();
    w.push("images", &Tensor::stack(&images)?, DType::F64)?;
    w.push("kspace", &Tensor::stack(&kspace)?, DType::F64)?;
    w.push("masks", &Tensor::stack(&masks.iter().collect::<Vec<_>>())?, DType::F64)?;
    w.extra = serde_json::to_value(DatasetMeta {
        data_key: key.to_string(),
        profile: profile.clone(),
        mask: *mask,
    })?;
    w.write(path)
}

/// Inverse of [`save_dataset`]; also returns the stored data key.
pub fn load_dataset(path: &Path) -> Result<(String, ClientProfile, Vec<Sample>)> {
    let c = read_container(path)?;
    let meta: DatasetMeta = serde_json::from_value(c.manifest.extra.clone())
        .map_err(|e| Error::Format(format!("{}: bad dataset metadata: {e}", path.display())))?;
    let get = |n: &str| {
        c.get(n)
            .ok_or_else(|| Error::Format(format!("{}: missing entry {n:?}", path.display())))
    };
    let (images, kspace, masks) = (get("images")?, get("kspace")?, get("masks")?);
    let n = images.shape()[0];
    if kspace.shape() != images.shape() || masks.shape().first() != Some(&n) {
        return Err(Error::Format(format!(
            "{}: inconsistent dataset shapes",
            path.display()
        )));
    }
    let samples = (0..n)
        .map(|i| {
            let mask = MaskSpec {
                kind: meta.mask.kind,
                acceleration: meta.mask.acceleration,
                acs_fraction: meta.mask.acs_fraction,
                columns: masks.index0(i)?.data().iter().map(|&v| v != 0.0).collect(),
            };
            Ok(Sample {
                image: images.index0(i)?,
                kspace: KSpace {
                    data: kspace.index0(i)?,
                    mask,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((meta.data_key, meta.profile, samples))
}

/// Generate and store every training client's dataset.
pub fn gen_data(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let paths = RunPaths::new(&cfg.out_dir);
    let key = data_key(cfg);
    cfg.data
        .clients
        .iter()
        .map(|p| {
            let samples = client_samples(cfg, p, cfg.data.samples_per_client)?;
            let path = paths.client_data(p.client_id);
            save_dataset(&path, &key, p, &cfg.mask, &samples)?;
            Ok(path)
        })
        .collect()
}

/// Training-client samples: read from the run directory when stored data
/// matches this configuration, generated otherwise.
fn load_or_generate(cfg: &RunConfig, p: &ClientProfile) -> Result<Vec<Sample>> {
    let path = RunPaths::new(&cfg.out_dir).client_data(p.client_id);
    if path.exists() {
        let (key, _, samples) = load_dataset(&path)?;
        if key == data_key(cfg) {
            return Ok(samples);
        }
    }
    client_samples(cfg, p, cfg.data.samples_per_client)
}

fn split_seed(cfg: &RunConfig, p: &ClientProfile) -> u64 {
    derive_seed(&[cfg.seed, p.client_id])
}

/// Training clients in ascending id order with their data splits.
pub fn training_clients(cfg: &RunConfig, fed: &FederationConfig) -> Result<Vec<ClientState<Sample>>> {
    let mut profiles = cfg.data.clients.clone();
    profiles.sort_by_key(|p| p.client_id);
    profiles
        .iter()
        .map(|p| {
            let samples = load_or_generate(cfg, p)?;
            let split = split_dataset(&samples, cfg.data.split_ratios, split_seed(cfg, p))?;
            Ok(ClientState::new(p.client_id, split, fed))
        })
        .collect()
}

fn model_for(arch: &DiscreteArch, iterations: usize) -> Result<UnrolledModel> {
    UnrolledModel::new(iterations, Denoiser::discrete(arch)?)
}

fn run_extra(cfg: &RunConfig, kind: &str, params: usize) -> serde_json::Value {
    serde_json::json!({
        "kind": kind,
        "iterations": cfg.model.iterations,
        "seed": cfg.seed,
        "param_count": params,
    })
}

/// Federated architecture search; writes `search/`.
pub fn run_search(cfg: &RunConfig) -> Result<(DiscreteArch, Vec<SearchRoundReport>)> {
    let fed = cfg.search_federation();
    let mut clients = training_clients(cfg, &fed)?;
    let shape = cfg.model.shape();
    let model = UnrolledModel::new(cfg.model.iterations, Denoiser::supernet(shape)?)?;
    let theta0 = model.init_params(&mut rng_for(&[tag::INIT, cfg.seed, PHASE_SEARCH]))?;
    let alpha0 = ArchEncoding::uniform(model.denoiser.num_edges());
    let obj = ReconObjective { model };
    let out = searcher_run(&fed, &mut clients, &obj, theta0, alpha0, &shape)?;

    let paths = RunPaths::new(&cfg.out_dir);
    let mut w = ContainerWriter::new();
    w.push_params(&out.theta, DType::F64)?;
    w.push(LOGITS_ENTRY, &out.alpha.logits, DType::F64)?;
    w.arch = Some(out.arch.clone());
    w.config_hash = Some(cfg.hash());
    w.extra = run_extra(cfg, "supernet", param_count(&out.theta, Some(&out.alpha)));
    w.write(&paths.search_checkpoint())?;
    write_text(&paths.search_arch(), &(serde_json::to_string_pretty(&out.arch)? + "\n"))?;
    write_jsonl(&paths.search_rounds(), &out.reports)?;
    Ok((out.arch, out.reports))
}

/// Architecture from a container's manifest or a JSON file.
pub fn load_arch(path: &Path) -> Result<DiscreteArch> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(&MAGIC) {
        return crate::checkpoint::decode(&bytes)?
            .manifest
            .arch
            .ok_or_else(|| Error::Validation(format!("{} holds no architecture", path.display())));
    }
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Validation(format!("{}: not an architecture file: {e}", path.display())))
}

/// Fairness-weighted federated training of `arch`; writes `train/`.
pub fn run_train(cfg: &RunConfig, arch: &DiscreteArch) -> Result<(ParamSet, Vec<RoundReport>)> {
    let fed = cfg.train_federation();
    let mut clients = training_clients(cfg, &fed)?;
    let model = model_for(arch, cfg.model.iterations)?;
    let theta0 = model.init_params(&mut rng_for(&[tag::INIT, cfg.seed, PHASE_TRAIN]))?;
    let obj = ReconObjective { model };

    let paths = RunPaths::new(&cfg.out_dir);
    let rounds_path = paths.train_rounds();
    create_parent(&rounds_path)?;
    let mut log = BufWriter::new(File::create(&rounds_path)?);
    let ckpt = |theta: &ParamSet, round: usize| Checkpoint {
        params: theta.clone(),
        arch: Some(arch.clone()),
        config_hash: Some(cfg.hash()),
        extra: {
            let mut e = run_extra(cfg, "discrete", param_count(theta, None));
            e["round"] = round.into();
            e
        },
    };
    let interval = cfg.train.checkpoint_interval;
    let (theta, reports) = trainer_run(&fed, &mut clients, &obj, theta0, |report, server| {
        writeln!(log, "{}", serde_json::to_string(report)?)?;
        log.flush()?;
        if interval > 0 && server.round % interval == 0 {
            save_checkpoint(
                &paths.round_checkpoint(server.round),
                &ckpt(&server.global_theta, server.round),
            )?;
        }
        Ok(())
    })?;
    save_checkpoint(&paths.model(), &ckpt(&theta, reports.len()))?;
    Ok((theta, reports))
}

/// Test images of every client for one scenario, keyed by client id.
pub fn scenario_sets(cfg: &RunConfig, scenario: Scenario) -> Result<Vec<(u64, Vec<Sample>)>> {
    let held_out = |p: &ClientProfile| -> Result<Vec<(u64, Vec<Sample>)>> {
        Ok(vec![(p.client_id, client_samples(cfg, p, cfg.data.holdout_samples)?)])
    };
    match scenario {
        Scenario::ContrastShift => held_out(&cfg.data.contrast_shift_profile),
        Scenario::UnseenCenter => held_out(&cfg.data.unseen_center_profile),
        _ => {
            let mask = cfg.scenario_mask(scenario);
            let stream = if scenario == Scenario::InDistribution {
                0
            } else {
                derive_seed(&[tag::EVAL_MASK, scenario as u64])
            };
            let mut profiles = cfg.data.clients.clone();
            profiles.sort_by_key(|p| p.client_id);
            profiles
                .iter()
                .map(|p| {
                    let samples = generate_client(
                        &effective_profile(cfg, p),
                        cfg.data.samples_per_client,
                        cfg.data.image_size,
                        &mask,
                        stream,
                    )?;
                    let split = split_dataset(&samples, cfg.data.split_ratios, split_seed(cfg, p))?;
                    Ok((p.client_id, split.test))
                })
                .collect()
        }
    }
}

/// Per-image means of reconstruction and zero-filled quality.
pub fn evaluate_samples(
    model: &UnrolledModel,
    params: &ParamSet,
    alpha: Option<&ArchEncoding>,
    samples: &[Sample],
    batch_size: usize,
    scenario: Scenario,
    client_id: u64,
) -> Result<MetricRecord> {
    if samples.is_empty() {
        return Err(Error::Config(format!("no test samples for client {client_id}")));
    }
    let mut acc = [0.0; 5];
    for chunk in samples.chunks(batch_size.max(1)) {
        let ks: Vec<&KSpace> = chunk.iter().map(|s| &s.kspace).collect();
        let pred = model.predict(params, alpha, &Batch::new(&ks, None)?)?;
        for (i, s) in chunk.iter().enumerate() {
            let x = pred.index0(i)?;
            let zf = zero_filled(&s.kspace)?;
            acc[0] += psnr(&x, &s.image)?;
            acc[1] += ssim(&x, &s.image)?;
            acc[2] += training_loss(&x, &s.image)?;
            acc[3] += psnr(&zf, &s.image)?;
            acc[4] += ssim(&zf, &s.image)?;
        }
    }
    let n = samples.len() as f64;
    Ok(MetricRecord {
        scenario,
        client_id,
        psnr: acc[0] / n,
        ssim: acc[1] / n,
        loss: acc[2] / n,
        zf_psnr: acc[3] / n,
        zf_ssim: acc[4] / n,
        samples: samples.len(),
    })
}

/// Evaluate a checkpoint on the requested scenarios; writes `eval/`.
/// `arch` overrides the architecture stored in the checkpoint.
pub fn run_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    arch: Option<&DiscreteArch>,
    scenarios: &[Scenario],
) -> Result<Vec<MetricRecord>> {
    let ckpt = load_checkpoint(checkpoint)?;
    let arch = arch
        .cloned()
        .or(ckpt.arch)
        .ok_or_else(|| Error::Validation(format!("{} holds no architecture", checkpoint.display())))?;
    let iterations = ckpt.extra["iterations"]
        .as_u64()
        .map_or(cfg.model.iterations, |j| j as usize);
    let mut params = ckpt.params;
    let (model, alpha) = match params.remove(LOGITS_ENTRY) {
        Some(logits) => (
            UnrolledModel::new(iterations, Denoiser::supernet(arch.shape())?)?,
            Some(ArchEncoding::new(logits)?),
        ),
        None => (model_for(&arch, iterations)?, None),
    };
    let mut records = Vec::new();
    for &scenario in scenarios {
        for (id, samples) in scenario_sets(cfg, scenario)? {
            records.push(evaluate_samples(
                &model,
                &params,
                alpha.as_ref(),
                &samples,
                cfg.train.batch_size,
                scenario,
                id,
            )?);
        }
    }
    let paths = RunPaths::new(&cfg.out_dir);
    let mut csv = String::from(MetricRecord::CSV_HEADER);
    csv.push('\n');
    for r in &records {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&paths.metrics_csv(), &csv)?;
    write_jsonl(&paths.metrics_jsonl(), &records)?;
    Ok(records)
}

/// Per-scenario aggregate over clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub clients: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub zf_psnr: f64,
    pub zf_ssim: f64,
    /// Mean and population std of per-client test losses.
    pub loss_mean: f64,
    pub loss_std: f64,
}

pub const SUMMARY_HEADER: &str = "scenario,clients,psnr,ssim,zf_psnr,zf_ssim,loss_mean,loss_std";

pub fn summarize(records: &[MetricRecord]) -> Result<Vec<ScenarioSummary>> {
    let mut out = Vec::new();
    for s in Scenario::ALL {
        let rs: Vec<&MetricRecord> = records.iter().filter(|r| r.scenario == s).collect();
        if rs.is_empty() {
            continue;
        }
        let n = rs.len() as f64;
        let mean = |f: fn(&MetricRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
        let (loss_mean, loss_std) = fairness_stats(&rs.iter().map(|r| r.loss).collect::<Vec<_>>())?;
        out.push(ScenarioSummary {
            scenario: s,
            clients: rs.len(),
            psnr: mean(|r| r.psnr),
            ssim: mean(|r| r.ssim),
            zf_psnr: mean(|r| r.zf_psnr),
            zf_ssim: mean(|r| r.zf_ssim),
            loss_mean,
            loss_std,
        });
    }
    Ok(out)
}

pub fn summary_markdown(rows: &[ScenarioSummary]) -> String {
    let mut s = String::from(
        "| scenario | clients | PSNR (dB) | SSIM | zero-filled PSNR | zero-filled SSIM | loss mean | loss std |\n\
         |---|---:|---:|---:|---:|---:|---:|---:|\n",
    );
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {:.2} | {:.4} | {:.2} | {:.4} | {:.3e} | {:.3e} |\n",
            r.scenario, r.clients, r.psnr, r.ssim, r.zf_psnr, r.zf_ssim, r.loss_mean, r.loss_std
        ));
    }
    s
}

/// Summaries of `eval/metrics.jsonl`; writes `report/` and returns the
/// markdown table.
pub fn run_report(cfg: &RunConfig) -> Result<String> {
    let paths = RunPaths::new(&cfg.out_dir);
    let text = fs::read_to_string(paths.metrics_jsonl())?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<Vec<MetricRecord>, _>>()?;
    let rows = summarize(&records)?;
    let mut csv = String::from(SUMMARY_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.scenario, r.clients, r.psnr, r.ssim, r.zf_psnr, r.zf_ssim, r.loss_mean, r.loss_std
        ));
    }
    write_text(&paths.summary_csv(), &csv)?;
    let md = summary_markdown(&rows);
    write_text(&paths.summary_md(), &md)?;
    Ok(md)
}
