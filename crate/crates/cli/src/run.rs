//! Sweep orchestration: data preparation, parallel chains, aggregation.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use coldpost::curation::{
    curate, curate_split, simulate_label_counts, split_pretrain, train_labeller, write_curated, CurationProvenance,
    CurationResult, Labeller, MlpLabeller, RelabelMode,
};
use coldpost::data::{
    gen_toy_gaussians, load_idx, read_csv, schedule_for_budget, subsample, BudgetSchedule, LabeledDataset,
};
use coldpost::energy::LikelihoodKind;
use coldpost::eval::{
    boundary_agreement, decision_grid, evaluate, write_metrics_csv, MetricsRecord, SweepResult, SweepSummary,
};
use coldpost::nn::init_params;
use coldpost::sampler::{run_sampler, BnnPosterior, SamplerConfig};
use coldpost::seed::derive_seed;
use coldpost::Error;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSource, ExperimentConfig, ExperimentKind};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainStatus {
    Completed,
    Diverged { reason: String },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEntry {
    pub id: String,
    pub condition: String,
    pub n_train: usize,
    pub seed: u64,
    pub temperature: f64,
    pub chain_seed: u64,
    #[serde(flatten)]
    pub status: ChainStatus,
    pub total_gradient_steps: u64,
    pub samples: usize,
    pub wall_clock_secs: f64,
    pub metrics: Option<MetricsRecord>,
    pub kinetic_temperature: Option<f64>,
    pub boundary_agreement: Option<f64>,
    pub outputs: Vec<String>,
}

impl ChainEntry {
    pub fn is_completed(&self) -> bool {
        self.status == ChainStatus::Completed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub name: String,
    pub n_train: usize,
    pub likelihood: LikelihoodKind,
    pub labellers: Option<usize>,
    pub retention_rate: Option<f64>,
    pub consensus_agreement: Option<f64>,
    pub sweep: Option<SweepSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_checksum: String,
    pub kind: ExperimentKind,
    pub temperatures: Vec<f64>,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub conditions: Vec<ConditionEntry>,
    pub chains: Vec<ChainEntry>,
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn failures(&self) -> usize {
        self.chains.iter().filter(|c| !c.is_completed()).count()
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; `None` means one per chain up to the core count.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub new_chains: usize,
}

/// One cell of the sweep: a dataset variant evaluated at every (seed, T).
struct Condition {
    name: String,
    likelihood: LikelihoodKind,
    labellers: Option<usize>,
    /// One training set per seed, or a single set shared by all seeds.
    train: Vec<Arc<LabeledDataset>>,
    test: Arc<LabeledDataset>,
    sampler: SamplerConfig,
    retention_rate: Option<f64>,
    consensus_agreement: Option<f64>,
}

impl Condition {
    fn train_for(&self, seed_idx: usize) -> &Arc<LabeledDataset> {
        if self.train.len() == 1 {
            &self.train[0]
        } else {
            &self.train[seed_idx]
        }
    }

    fn entry(&self) -> ConditionEntry {
        ConditionEntry {
            name: self.name.clone(),
            n_train: self.train[0].len(),
            likelihood: self.likelihood,
            labellers: self.labellers,
            retention_rate: self.retention_rate,
            consensus_agreement: self.consensus_agreement,
            sweep: None,
        }
    }
}

pub fn likelihood_label(l: &LikelihoodKind) -> String {
    match l {
        LikelihoodKind::Categorical => "categorical".into(),
        LikelihoodKind::Counts => "counts".into(),
        LikelihoodKind::CountsSmoothed { labellers: None } => "counts_smoothed".into(),
        LikelihoodKind::CountsSmoothed { labellers: Some(s) } => format!("counts_smoothed(S={s})"),
        LikelihoodKind::LabelSmoothing { alpha } => format!("label_smoothing(alpha={alpha})"),
    }
}

fn size_names(cfg: &ExperimentConfig) -> Vec<(String, Option<usize>)> {
    match &cfg.sizes {
        Some(sizes) => sizes.iter().map(|&n| (format!("n={n}"), Some(n))).collect(),
        None => vec![("full".into(), None)],
    }
}

fn counts_likelihoods(cfg: &ExperimentConfig) -> Vec<LikelihoodKind> {
    cfg.likelihoods.clone().unwrap_or_else(|| {
        vec![
            LikelihoodKind::Categorical,
            LikelihoodKind::Counts,
            LikelihoodKind::CountsSmoothed { labellers: None },
        ]
    })
}

/// Condition names in sweep order; known before any data is loaded.
pub fn condition_names(cfg: &ExperimentConfig) -> Vec<String> {
    match cfg.kind {
        ExperimentKind::CurationSweep => cfg
            .curation
            .as_ref()
            .map(|p| p.labeller_grid().iter().map(|s| format!("S={s}")).collect())
            .unwrap_or_default(),
        ExperimentKind::CountsLosses => counts_likelihoods(cfg)
            .iter()
            .flat_map(|l| {
                let label = likelihood_label(l);
                size_names(cfg).into_iter().map(move |(n, _)| format!("{label}/{n}"))
            })
            .collect(),
        _ => size_names(cfg).into_iter().map(|(n, _)| n).collect(),
    }
}

/// Total number of chains the configuration describes.
pub fn planned_chains(cfg: &ExperimentConfig) -> usize {
    condition_names(cfg).len() * cfg.seeds.len() * cfg.temperatures.len()
}

pub fn chain_id(condition: &str, seed: u64, temperature: f64) -> String {
    format!("{condition}|seed={seed}|T={temperature}")
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn chain_seed(master: u64, condition: &str, seed: u64, temperature: f64) -> u64 {
    derive_seed(
        derive_seed(master, "chain", seed),
        &format!("{condition}|T={temperature}"),
        0,
    )
}

fn load_pool(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    Ok(match &cfg.dataset {
        DatasetSource::Toy { test_size, pool_size } => (
            gen_toy_gaussians(*pool_size, derive_seed(cfg.master_seed, "toy-pool", 0))?,
            gen_toy_gaussians(*test_size, derive_seed(cfg.master_seed, "toy-test", 0))?,
        ),
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            load_idx(train_images, train_labels)?,
            load_idx(test_images, test_labels)?,
        ),
        DatasetSource::Csv {
            train,
            test,
            num_classes,
        } => {
            let classes = num_classes.or(Some(cfg.model.num_classes));
            let tr = read_csv(fs::File::open(train)?, "train", classes)?;
            let te = read_csv(fs::File::open(test)?, "test", classes)?;
            (tr, te)
        }
    })
}

/// Sampler template with the budget schedule for `n` applied when a budget
/// reference is in effect.
fn sampler_for(cfg: &ExperimentConfig, n: usize, budget_ref: Option<usize>) -> Result<SamplerConfig> {
    let t = &cfg.sampler;
    match budget_ref {
        None => Ok(t.clone()),
        Some(n_ref) => {
            let reference = BudgetSchedule::new(n_ref, t.batch_size, t.total_epochs, t.burn_in_epochs, t.cycle_epochs)?;
            let sched = schedule_for_budget(&reference, n).with_context(|| format!("budget schedule for n={n}"))?;
            Ok(t.clone().with_schedule(&sched))
        }
    }
}

fn budget_reference(cfg: &ExperimentConfig) -> Option<usize> {
    cfg.budget.map(|b| b.n_ref).or_else(|| match cfg.kind {
        ExperimentKind::Subsample | ExperimentKind::CurateAndSubsample => {
            cfg.sizes.as_ref().and_then(|s| s.iter().copied().max())
        }
        _ => None,
    })
}

fn subsample_per_seed(
    cfg: &ExperimentConfig,
    base: &LabeledDataset,
    n: Option<usize>,
) -> Result<Vec<Arc<LabeledDataset>>> {
    let Some(n) = n else {
        return Ok(vec![Arc::new(base.clone())]);
    };
    ensure!(
        n <= base.len(),
        "requested subsample of {n} points from a set of {}",
        base.len()
    );
    cfg.seeds
        .iter()
        .map(|&s| {
            let seed = derive_seed(derive_seed(cfg.master_seed, "subsample", s), "n", n as u64);
            let mut d = subsample(base, n, seed)?;
            d.name = format!("{} n={n}", base.name);
            Ok(Arc::new(d))
        })
        .collect()
}

fn train_curation_labeller(cfg: &ExperimentConfig, pool: &LabeledDataset) -> Result<(MlpLabeller, LabeledDataset)> {
    let plan = cfg.curation.as_ref().context("missing curation section")?;
    let c = &plan.config;
    let (pre, tr) = split_pretrain(pool, c.pretrain_fraction, c.seed)?;
    info!("training labeller on {} points", pre.len());
    let lab = train_labeller(&pre, &c.labeller_arch, &c.labeller_train, c.seed)?;
    Ok((lab, tr))
}

#[allow(clippy::too_many_arguments)]
fn write_provenance(
    out: &Path,
    name: &str,
    res: &CurationResult,
    lab: &dyn Labeller,
    s: usize,
    alpha: f64,
    seed: u64,
    outputs: &mut Vec<String>,
) -> Result<()> {
    let dir = out.join("curated");
    fs::create_dir_all(&dir)?;
    let rel = format!("curated/{}.csv", file_stem(name));
    let sidecar = write_curated(
        &out.join(&rel),
        res,
        &CurationProvenance {
            num_labellers: s,
            flatten_alpha: alpha,
            labeller_checksum: lab.checksum(),
            retention_rate: res.retention_rate,
            consensus_vs_original_agreement: res.consensus_vs_original_agreement,
            seed,
        },
    )?;
    outputs.push(rel);
    if let Ok(p) = sidecar.strip_prefix(out) {
        outputs.push(p.to_string_lossy().into_owned());
    }
    Ok(())
}

fn prepare_conditions(cfg: &ExperimentConfig, out: &Path, outputs: &mut Vec<String>) -> Result<Vec<Condition>> {
    let budget_ref = budget_reference(cfg);
    let mut conds = Vec::new();
    match cfg.kind {
        ExperimentKind::ToyCpe => {
            let DatasetSource::Toy { test_size, .. } = cfg.dataset else {
                bail!("toy_cpe needs the toy dataset source");
            };
            let test = Arc::new(gen_toy_gaussians(
                test_size,
                derive_seed(cfg.master_seed, "toy-test", 0),
            )?);
            for (name, n) in size_names(cfg) {
                let n = n.context("toy_cpe needs sizes")?;
                let train = cfg
                    .seeds
                    .iter()
                    .map(|&s| {
                        let seed = derive_seed(derive_seed(cfg.master_seed, "toy-train", s), "n", n as u64);
                        Ok(Arc::new(gen_toy_gaussians(n, seed)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                conds.push(Condition {
                    name,
                    likelihood: cfg.likelihood,
                    labellers: None,
                    train,
                    test: test.clone(),
                    sampler: sampler_for(cfg, n, budget_ref)?,
                    retention_rate: None,
                    consensus_agreement: None,
                });
            }
        }
        ExperimentKind::Subsample | ExperimentKind::Diagnostics => {
            let (pool, test) = load_pool(cfg)?;
            let test = Arc::new(test);
            for (name, n) in size_names(cfg) {
                let train = subsample_per_seed(cfg, &pool, n)?;
                let sampler = sampler_for(cfg, train[0].len(), budget_ref)?;
                conds.push(Condition {
                    name,
                    likelihood: cfg.likelihood,
                    labellers: None,
                    train,
                    test: test.clone(),
                    sampler,
                    retention_rate: None,
                    consensus_agreement: None,
                });
            }
        }
        ExperimentKind::CurationSweep => {
            let (pool, test) = load_pool(cfg)?;
            let (lab, tr) = train_curation_labeller(cfg, &pool)?;
            let plan = cfg.curation.as_ref().context("missing curation section")?;
            let c = &plan.config;
            for s in plan.labeller_grid() {
                let name = format!("S={s}");
                let (trc, tec) = curate_split(
                    &tr,
                    &test,
                    &lab,
                    s,
                    c.flatten_alpha,
                    c.seed,
                    c.sampling,
                    plan.curate_test,
                )?;
                info!("{name}: kept {} of {} training points", trc.curated.len(), tr.len());
                ensure!(!trc.curated.is_empty(), "curation with S={s} kept no training points");
                write_provenance(out, &name, &trc, &lab, s, c.flatten_alpha, c.seed, outputs)?;
                let sampler = sampler_for(cfg, trc.curated.len(), budget_ref)?;
                conds.push(Condition {
                    name,
                    likelihood: cfg.likelihood,
                    labellers: Some(s),
                    retention_rate: Some(trc.retention_rate),
                    consensus_agreement: Some(trc.consensus_vs_original_agreement),
                    train: vec![Arc::new(trc.curated)],
                    test: Arc::new(tec.curated),
                    sampler,
                });
            }
        }
        ExperimentKind::CurateAndSubsample => {
            let (pool, test) = load_pool(cfg)?;
            let (lab, tr) = train_curation_labeller(cfg, &pool)?;
            let plan = cfg.curation.as_ref().context("missing curation section")?;
            let c = &plan.config;
            let s = c.num_labellers;
            let (trc, tec) = curate_split(
                &tr,
                &test,
                &lab,
                s,
                c.flatten_alpha,
                c.seed,
                c.sampling,
                plan.curate_test,
            )?;
            write_provenance(out, &format!("S={s}"), &trc, &lab, s, c.flatten_alpha, c.seed, outputs)?;
            let test = Arc::new(tec.curated);
            for (name, n) in size_names(cfg) {
                let train = subsample_per_seed(cfg, &trc.curated, n)?;
                let sampler = sampler_for(cfg, train[0].len(), budget_ref)?;
                conds.push(Condition {
                    name,
                    likelihood: cfg.likelihood,
                    labellers: Some(s),
                    train,
                    test: test.clone(),
                    sampler,
                    retention_rate: Some(trc.retention_rate),
                    consensus_agreement: Some(trc.consensus_vs_original_agreement),
                });
            }
        }
        ExperimentKind::CountsLosses => {
            let (pool, test) = load_pool(cfg)?;
            let (base, test, labellers) = if pool.counts.is_some() {
                (pool, test, None)
            } else {
                let (lab, tr) = train_curation_labeller(cfg, &pool)?;
                let c = &cfg.curation.as_ref().context("missing curation section")?.config;
                let counted = simulate_label_counts(&tr, &lab, c.num_labellers, c.flatten_alpha, c.seed)?;
                // test labels come from the same labelling population, one draw each
                let relabelled = curate(
                    &test,
                    &lab,
                    1,
                    c.flatten_alpha,
                    derive_seed(c.seed, "counts-test", 0),
                    RelabelMode::ConsensusLabel,
                    c.sampling,
                )?;
                (counted, relabelled.curated, Some(c.num_labellers))
            };
            let test = Arc::new(test);
            for lik in counts_likelihoods(cfg) {
                let label = likelihood_label(&lik);
                for (size, n) in size_names(cfg) {
                    let train = subsample_per_seed(cfg, &base, n)?;
                    let sampler = sampler_for(cfg, train[0].len(), budget_ref)?;
                    conds.push(Condition {
                        name: format!("{label}/{size}"),
                        likelihood: lik,
                        labellers,
                        train,
                        test: test.clone(),
                        sampler,
                        retention_rate: None,
                        consensus_agreement: None,
                    });
                }
            }
        }
    }
    Ok(conds)
}

struct Job<'a> {
    cond: &'a Condition,
    seed_idx: usize,
    seed: u64,
    temperature: f64,
    id: String,
}

fn run_job(cfg: &ExperimentConfig, job: &Job<'_>, out: &Path) -> ChainEntry {
    let start = Instant::now();
    let train = job.cond.train_for(job.seed_idx);
    let cseed = chain_seed(cfg.master_seed, &job.cond.name, job.seed, job.temperature);
    let mut entry = ChainEntry {
        id: job.id.clone(),
        condition: job.cond.name.clone(),
        n_train: train.len(),
        seed: job.seed,
        temperature: job.temperature,
        chain_seed: cseed,
        status: ChainStatus::Completed,
        total_gradient_steps: 0,
        samples: 0,
        wall_clock_secs: 0.0,
        metrics: None,
        kinetic_temperature: None,
        boundary_agreement: None,
        outputs: Vec::new(),
    };
    if let Err(e) = run_job_inner(cfg, job, train, cseed, out, &mut entry) {
        let reason = format!("{e:#}");
        warn!("chain {} did not complete: {reason}", job.id);
        entry.status = match e.downcast_ref::<Error>() {
            Some(Error::Diverged { step, .. }) => {
                entry.total_gradient_steps = *step;
                ChainStatus::Diverged { reason }
            }
            _ => ChainStatus::Failed { reason },
        };
    }
    entry.wall_clock_secs = start.elapsed().as_secs_f64();
    entry
}

fn run_job_inner(
    cfg: &ExperimentConfig,
    job: &Job<'_>,
    train: &LabeledDataset,
    cseed: u64,
    out: &Path,
    entry: &mut ChainEntry,
) -> Result<()> {
    let mut sampler = job.cond.sampler.clone();
    sampler.temperature = job.temperature;
    sampler.seed = cseed;
    let target = BnnPosterior::new(&cfg.model, train, job.cond.likelihood, cfg.prior)?
        .with_likelihood_weight(cfg.likelihood_weight)
        .with_augmentation(cfg.augment);
    let init = init_params(&cfg.model, cfg.prior.std, derive_seed(cseed, "chain-init", 0))?;
    let chain = run_sampler(&target, init, &sampler, &mut ())?;
    entry.total_gradient_steps = chain.gradient_evals;
    entry.samples = chain.ensemble.len();
    entry.kinetic_temperature = chain.kinetic_temperature();

    let stem = file_stem(&job.id);
    let log_rel = format!("logs/{stem}.log");
    let mut log = BufWriter::new(fs::File::create(out.join(&log_rel))?);
    writeln!(log, "# {}", job.id)?;
    for rec in &chain.cycle_log {
        writeln!(log, "{rec}")?;
    }
    log.flush()?;
    entry.outputs.push(log_rel);

    let test = &job.cond.test;
    let (ce, acc, ece) = evaluate(&cfg.model, &chain.ensemble, &test.features, &test.labels, cfg.ece_bins)?;
    let record = MetricsRecord {
        dataset: job.cond.name.clone(),
        n_train: train.len(),
        seed: job.seed,
        temperature: job.temperature,
        ensemble_size: chain.ensemble.len(),
        test_ce: ce,
        accuracy: acc,
        ece,
    };
    record.validate()?;
    entry.metrics = Some(record);

    if cfg.model.input_dim == 2 {
        let grid = decision_grid(&cfg.model, &chain.ensemble, cfg.grid_bounds, cfg.grid_resolution)?;
        if matches!(cfg.dataset, DatasetSource::Toy { .. }) {
            entry.boundary_agreement = Some(boundary_agreement(&grid));
        }
        let grid_rel = format!("grids/{stem}.csv");
        grid.write_csv(BufWriter::new(fs::File::create(out.join(&grid_rel))?))?;
        entry.outputs.push(grid_rel);
    }
    Ok(())
}

fn load_previous(out: &Path, checksum: &str) -> Result<Option<RunManifest>> {
    let path = out.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let prev = RunManifest::load(&path)?;
    ensure!(
        prev.config_checksum == checksum,
        "{} holds results of a different configuration (checksum {}); use another output directory",
        out.display(),
        prev.config_checksum
    );
    Ok(Some(prev))
}

/// Runs every missing chain of the sweep and rewrites all aggregate outputs.
///
/// Chains already recorded in `out_dir/manifest.json` for the same config
/// checksum are not rerun. Diverged or failed chains are recorded and the
/// sweep carries on.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let out = &opts.out_dir;
    fs::create_dir_all(out.join("logs"))?;
    if cfg.model.input_dim == 2 {
        fs::create_dir_all(out.join("grids"))?;
    }
    let checksum = cfg.checksum();
    let previous = load_previous(out, &checksum)?;

    let names = condition_names(cfg);
    let mut done: HashMap<String, ChainEntry> = previous
        .as_ref()
        .map(|m| m.chains.iter().map(|c| (c.id.clone(), c.clone())).collect())
        .unwrap_or_default();
    let all_done = names.iter().all(|name| {
        cfg.seeds.iter().all(|&s| {
            cfg.temperatures
                .iter()
                .all(|&t| done.contains_key(&chain_id(name, s, t)))
        })
    });

    let mut outputs = Vec::new();
    let mut conditions: Vec<ConditionEntry>;
    let mut new_entries = Vec::new();
    if all_done {
        let prev = previous.as_ref().expect("completed chains imply a manifest");
        conditions = prev.conditions.clone();
        outputs.extend(prev.outputs.iter().filter(|o| o.starts_with("curated/")).cloned());
        info!("all {} chains already recorded in {}", done.len(), out.display());
    } else {
        let conds = prepare_conditions(cfg, out, &mut outputs)?;
        conditions = conds.iter().map(Condition::entry).collect();
        let jobs: Vec<Job<'_>> = conds
            .iter()
            .flat_map(|cond| {
                cfg.seeds.iter().enumerate().flat_map(move |(seed_idx, &seed)| {
                    cfg.temperatures.iter().map(move |&temperature| Job {
                        cond,
                        seed_idx,
                        seed,
                        temperature,
                        id: chain_id(&cond.name, seed, temperature),
                    })
                })
            })
            .filter(|j| !done.contains_key(&j.id))
            .collect();
        let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let workers = opts.workers.unwrap_or(cores).clamp(1, jobs.len().max(1));
        info!("running {} chains on {workers} workers", jobs.len());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
        new_entries = pool.install(|| jobs.par_iter().map(|j| run_job(cfg, j, out)).collect::<Vec<_>>());
    }
    let new_chains = new_entries.len();
    for e in new_entries {
        done.insert(e.id.clone(), e);
    }

    // aggregation in sweep order, after all workers have joined
    let mut chains = Vec::with_capacity(done.len());
    for name in &names {
        for &s in &cfg.seeds {
            for &t in &cfg.temperatures {
                if let Some(e) = done.remove(&chain_id(name, s, t)) {
                    chains.push(e);
                }
            }
        }
    }
    let records: Vec<MetricsRecord> = chains.iter().filter_map(|c| c.metrics.clone()).collect();
    for cond in &mut conditions {
        let rs: Vec<MetricsRecord> = records.iter().filter(|r| r.dataset == cond.name).cloned().collect();
        cond.sweep = match SweepResult::new(rs).summary() {
            Ok(s) => Some(s),
            Err(e) => {
                warn!("no CPER for {}: {e}", cond.name);
                None
            }
        };
    }

    write_metrics_csv(BufWriter::new(fs::File::create(out.join("metrics.csv"))?), &records)?;
    outputs.push("metrics.csv".into());
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&conditions)?)?;
    outputs.push("sweep.json".into());
    if cfg.kind == ExperimentKind::Diagnostics {
        fs::write(
            out.join("diagnostics.json"),
            serde_json::to_string_pretty(&diagnostics(&chains))?,
        )?;
        outputs.push("diagnostics.json".into());
    }
    outputs.extend(chains.iter().flat_map(|c| c.outputs.iter().cloned()));
    outputs.push(MANIFEST_FILE.into());

    let manifest = RunManifest {
        config_checksum: checksum,
        kind: cfg.kind,
        temperatures: cfg.temperatures.clone(),
        seeds: cfg.seeds.clone(),
        master_seed: cfg.master_seed,
        conditions,
        chains,
        outputs,
        wall_clock_secs: previous.map_or(0.0, |p| p.wall_clock_secs) + start.elapsed().as_secs_f64(),
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome { manifest, new_chains })
}

/// Seed-averaged SG-HMC kinetic temperature per (condition, T).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticSummary {
    pub condition: String,
    pub temperature: f64,
    pub mean_kinetic_temperature: f64,
    pub ratio_to_target: f64,
    pub chains: usize,
}

pub fn diagnostics(chains: &[ChainEntry]) -> Vec<KineticSummary> {
    // groups keep the order in which chains appear in the sweep
    let mut groups: Vec<((&str, f64), Vec<f64>)> = Vec::new();
    for c in chains {
        let Some(k) = c.kinetic_temperature else { continue };
        let key = (c.condition.as_str(), c.temperature);
        match groups.iter_mut().find(|(g, _)| *g == key) {
            Some((_, ks)) => ks.push(k),
            None => groups.push((key, vec![k])),
        }
    }
    groups.sort_by(|a, b| a.0 .1.total_cmp(&b.0 .1));
    let order: Vec<&str> = chains
        .iter()
        .map(|c| c.condition.as_str())
        .fold(Vec::new(), |mut v, n| {
            if !v.contains(&n) {
                v.push(n);
            }
            v
        });
    groups.sort_by_key(|((name, _), _)| order.iter().position(|n| n == name));
    groups
        .into_iter()
        .map(|((condition, temperature), ks)| {
            let mean = ks.iter().sum::<f64>() / ks.len() as f64;
            KineticSummary {
                condition: condition.to_string(),
                temperature,
                mean_kinetic_temperature: mean,
                ratio_to_target: mean / temperature,
                chains: ks.len(),
            }
        })
        .collect()
}
