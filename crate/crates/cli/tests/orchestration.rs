use std::collections::HashSet;
use std::path::Path;
use std::process::Command;

use coldpost_cli::config::{ExperimentConfig, ExperimentKind};
use coldpost_cli::run::{planned_chains, run_experiment, ChainStatus, RunManifest, RunOptions, MANIFEST_FILE};
use coldpost_cli::{default_temperature_grid, emit_report};
use serde_json::json;

fn config(value: serde_json::Value) -> ExperimentConfig {
    serde_json::from_value(value).unwrap()
}

fn short_sampler() -> serde_json::Value {
    json!({ "batch_size": 32, "burn_in_epochs": 16, "cycle_epochs": 8, "total_epochs": 40 })
}

fn toy_cpe(seeds: &[u64]) -> ExperimentConfig {
    config(json!({
        "kind": "toy_cpe",
        "dataset": { "source": "toy", "test_size": 500 },
        "model": { "input_dim": 2, "hidden_widths": [20], "num_classes": 2 },
        "sampler": short_sampler(),
        "seeds": seeds,
        "sizes": [32],
        "grid_resolution": 10
    }))
}

fn run(cfg: &ExperimentConfig, dir: &Path) -> coldpost_cli::RunOutcome {
    run_experiment(
        cfg,
        &RunOptions {
            out_dir: dir.to_path_buf(),
            workers: Some(2),
        },
    )
    .unwrap()
}

#[test]
fn toy_sweep_has_one_chain_per_seed_and_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_cpe(&[0, 1, 2]);
    assert_eq!(cfg.temperatures, default_temperature_grid());
    assert_eq!(planned_chains(&cfg), 18);
    let out = run(&cfg, dir.path());
    assert_eq!(out.new_chains, 18);
    let m = &out.manifest;
    assert_eq!(m.chains.len(), 18);
    assert!(m.chains.iter().all(|c| c.status == ChainStatus::Completed));
    let ids: HashSet<_> = m.chains.iter().map(|c| &c.id).collect();
    assert_eq!(ids.len(), 18);
    let seeds: HashSet<_> = m.chains.iter().map(|c| c.chain_seed).collect();
    assert_eq!(seeds.len(), 18, "chains must not share RNG streams");

    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 19);
    assert!(csv.starts_with("dataset,n,seed,T,K,ce,acc,ece"));
    assert_eq!(m.conditions.len(), 1);
    let sweep = m.conditions[0].sweep.as_ref().unwrap();
    assert!(sweep.cper > 0.0 && sweep.cper <= 1.0);
    assert_eq!(sweep.per_temperature.len(), 6);

    for c in &m.chains {
        assert_eq!(c.total_gradient_steps, 40);
        assert_eq!(c.samples, 3);
        assert!(c.boundary_agreement.is_some());
        for f in &c.outputs {
            assert!(dir.path().join(f).exists(), "{f}");
            assert!(m.outputs.contains(f));
        }
    }
    for f in &m.outputs {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn rerun_on_completed_output_runs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_cpe(&[0]);
    let first = run(&cfg, dir.path());
    assert_eq!(first.new_chains, 6);
    let again = run(&cfg, dir.path());
    assert_eq!(again.new_chains, 0);
    assert_eq!(again.manifest.chains, first.manifest.chains);
    assert_eq!(again.manifest.conditions, first.manifest.conditions);

    // a second seed only adds its own chains
    let mut grown = toy_cpe(&[0]);
    grown.sizes = Some(vec![32, 64]);
    let other = tempfile::tempdir().unwrap();
    assert_eq!(run(&grown, other.path()).new_chains, 12);
    // a different configuration cannot reuse the directory
    assert!(run_experiment(
        &grown,
        &RunOptions {
            out_dir: dir.path().to_path_buf(),
            workers: None
        }
    )
    .is_err());
}

#[test]
fn sweeps_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = toy_cpe(&[4]);
    let ma = run(&cfg, a.path()).manifest;
    let mb = run(&cfg, b.path()).manifest;
    let metrics = |m: &RunManifest| m.chains.iter().map(|c| c.metrics.clone()).collect::<Vec<_>>();
    assert_eq!(metrics(&ma), metrics(&mb));
    assert_eq!(ma.config_checksum, mb.config_checksum);
}

#[test]
fn grid_without_unit_temperature_is_rejected() {
    let mut cfg = toy_cpe(&[0]);
    cfg.temperatures = vec![0.001, 0.01, 0.1];
    let err = cfg.validate().unwrap_err().to_string();
    assert!(err.contains("1.0"), "{err}");
    let dir = tempfile::tempdir().unwrap();
    assert!(run_experiment(
        &cfg,
        &RunOptions {
            out_dir: dir.path().to_path_buf(),
            workers: None
        }
    )
    .is_err());

    let mut empty = toy_cpe(&[]);
    empty.temperatures = vec![1.0];
    assert!(empty.validate().is_err());
}

#[test]
fn missing_data_files_are_rejected() {
    let cfg = config(json!({
        "kind": "subsample",
        "dataset": { "source": "csv", "train": "/nonexistent/train.csv", "test": "/nonexistent/test.csv" },
        "model": { "input_dim": 2, "hidden_widths": [4], "num_classes": 2 },
        "seeds": [0],
        "sizes": [10]
    }));
    assert!(cfg.validate().unwrap_err().to_string().contains("does not exist"));
}

#[test]
fn subsample_runs_share_one_gradient_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "kind": "subsample",
        "dataset": { "source": "toy", "test_size": 200, "pool_size": 512 },
        "model": { "input_dim": 2, "hidden_widths": [8], "num_classes": 2 },
        "sampler": short_sampler(),
        "temperatures": [0.1, 1.0],
        "seeds": [0, 1],
        "sizes": [64, 128, 256],
        "budget": { "n_ref": 256 },
        "grid_resolution": 5
    }));
    let m = run(&cfg, dir.path()).manifest;
    assert_eq!(m.chains.len(), 12);
    let steps: HashSet<u64> = m.chains.iter().map(|c| c.total_gradient_steps).collect();
    assert_eq!(steps, HashSet::from([8 * 40]));
    let samples: HashSet<usize> = m.chains.iter().map(|c| c.samples).collect();
    assert_eq!(samples, HashSet::from([3]));
    let sizes: Vec<usize> = m.conditions.iter().map(|c| c.n_train).collect();
    assert_eq!(sizes, vec![64, 128, 256]);
}

fn curation_section(grid: &[usize]) -> serde_json::Value {
    json!({
        "num_labellers": 3,
        "flatten_alpha": 0.5,
        "pretrain_fraction": 0.5,
        "labeller_arch": { "input_dim": 2, "hidden_widths": [8], "num_classes": 2 },
        "labeller_train": { "epochs": 5, "batch_size": 32, "adam": { "lr": 0.01 } },
        "seed": 3,
        "labeller_grid": grid
    })
}

#[test]
fn curation_sweep_reports_retention() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "kind": "curation_sweep",
        "dataset": { "source": "toy", "test_size": 200, "pool_size": 400 },
        "model": { "input_dim": 2, "hidden_widths": [8], "num_classes": 2 },
        "sampler": short_sampler(),
        "temperatures": [0.1, 1.0],
        "seeds": [0],
        "curation": curation_section(&[1, 2, 5]),
        "grid_resolution": 5
    }));
    let m = run(&cfg, dir.path()).manifest;
    let rates: Vec<f64> = m.conditions.iter().map(|c| c.retention_rate.unwrap()).collect();
    assert_eq!(rates[0], 1.0);
    assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
    assert_eq!(m.conditions[0].n_train, 200);
    for s in ["S_1", "S_2", "S_5"] {
        assert!(dir.path().join(format!("curated/{s}.csv")).exists());
        assert!(dir.path().join(format!("curated/{s}.csv.provenance.json")).exists());
    }
    let report = emit_report(&m).unwrap();
    assert!(report.contains("curation retention"));
    assert!(report.contains("S=5"));
}

#[test]
fn curate_then_subsample_and_counts_losses_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "kind": "curate_and_subsample",
        "dataset": { "source": "toy", "test_size": 200, "pool_size": 800 },
        "model": { "input_dim": 2, "hidden_widths": [8], "num_classes": 2 },
        "sampler": short_sampler(),
        "temperatures": [1.0],
        "seeds": [0, 1],
        "sizes": [32, 64],
        "curation": curation_section(&[2]),
        "grid_resolution": 5
    }));
    let m = run(&cfg, dir.path()).manifest;
    assert_eq!(m.chains.len(), 4);
    assert!(m.conditions.iter().all(|c| c.labellers == Some(3)));
    let steps: HashSet<u64> = m.chains.iter().map(|c| c.total_gradient_steps).collect();
    assert_eq!(steps.len(), 1);

    let dir = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "kind": "counts_losses",
        "dataset": { "source": "toy", "test_size": 200, "pool_size": 200 },
        "model": { "input_dim": 2, "hidden_widths": [8], "num_classes": 2 },
        "sampler": short_sampler(),
        "temperatures": [1.0],
        "seeds": [0],
        "curation": curation_section(&[3]),
        "grid_resolution": 5
    }));
    let m = run(&cfg, dir.path()).manifest;
    let names: Vec<&str> = m.conditions.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, vec!["categorical/full", "counts/full", "counts_smoothed/full"]);
    assert_eq!(m.failures(), 0);
}

#[test]
fn diagnostics_record_kinetic_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "kind": "diagnostics",
        "dataset": { "source": "toy", "test_size": 200, "pool_size": 128 },
        "model": { "input_dim": 2, "hidden_widths": [8], "num_classes": 2 },
        "sampler": short_sampler(),
        "temperatures": [0.1, 1.0],
        "seeds": [0],
        "grid_resolution": 5
    }));
    let m = run(&cfg, dir.path()).manifest;
    assert!(m.chains.iter().all(|c| c.kinetic_temperature.is_some()));
    let text = std::fs::read_to_string(dir.path().join("diagnostics.json")).unwrap();
    let diag: Vec<serde_json::Value> = serde_json::from_str(&text).unwrap();
    assert_eq!(diag.len(), 2);
}

#[test]
fn diverged_chains_are_recorded_and_the_sweep_continues() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_cpe(&[0]);
    // a huge direct step blows up the warm chains
    cfg.sampler.step_convention = coldpost::sampler::StepConvention::Direct;
    cfg.sampler.base_step = 1.0;
    cfg.sampler.momentum_weight = 0.5;
    cfg.temperatures = vec![1e-3, 1.0];
    cfg.prior.std = 1e4;
    let m = run(&cfg, dir.path()).manifest;
    assert_eq!(m.chains.len(), 2);
    assert!(m.failures() > 0);
    assert!(m
        .chains
        .iter()
        .any(|c| matches!(c.status, ChainStatus::Diverged { .. })));
    let report = emit_report(&m).unwrap();
    assert!(report.contains("chains not completed"));
}

#[test]
fn report_requires_chains() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&toy_cpe(&[0]), dir.path()).manifest;
    let report = emit_report(&m).unwrap();
    assert!(report.contains("n=32"));
    let mut empty = m.clone();
    empty.chains.clear();
    assert!(emit_report(&empty).is_err());
    let loaded = RunManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, m);
}

#[test]
fn seed_offset_shifts_every_seed() {
    let cfg = toy_cpe(&[0, 1]).with_seed_offset(10);
    assert_eq!(cfg.seeds, vec![10, 11]);
    assert_ne!(cfg.checksum(), toy_cpe(&[0, 1]).checksum());
    let mut moved = toy_cpe(&[0, 1]);
    moved.out_dir = Some("/elsewhere".into());
    assert_eq!(moved.checksum(), toy_cpe(&[0, 1]).checksum());
    assert_eq!(cfg.kind, ExperimentKind::ToyCpe);
}

#[test]
fn binary_commands() {
    let bin = env!("CARGO_BIN_EXE_coldpost");
    let grid = Command::new(bin).arg("grid").output().unwrap();
    assert!(grid.status.success());
    assert_eq!(String::from_utf8(grid.stdout).unwrap().lines().count(), 6);

    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string(&toy_cpe(&[0])).unwrap()).unwrap();
    let ok = Command::new(bin).args(["validate"]).arg(&cfg_path).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8(ok.stdout).unwrap().contains("6 chains"));

    let out = dir.path().join("out");
    let run = Command::new(bin)
        .env("COLDPOST_OUT_DIR", &out)
        .args(["--workers", "1", "run"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join(MANIFEST_FILE).exists());
    let report = Command::new(bin).arg("report").arg(&out).output().unwrap();
    assert!(String::from_utf8(report.stdout).unwrap().contains("CPER by condition"));

    let mut bad = toy_cpe(&[0]);
    bad.temperatures = vec![0.5];
    std::fs::write(&cfg_path, serde_json::to_string(&bad).unwrap()).unwrap();
    let rejected = Command::new(bin).arg("validate").arg(&cfg_path).output().unwrap();
    assert!(!rejected.status.success());
}
