//! Plain-text summary of a finished run.

use std::fmt::Write;

use anyhow::{ensure, Result};

use crate::run::RunManifest;

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

/// Renders the CPER table, one CE-vs-T table per condition and, when the run
/// curated data, a retention table.
pub fn emit_report(manifest: &RunManifest) -> Result<String> {
    ensure!(!manifest.chains.is_empty(), "manifest lists no chains");
    let mut s = String::new();
    let completed = manifest.chains.iter().filter(|c| c.is_completed()).count();
    writeln!(s, "experiment: {:?}", manifest.kind)?;
    writeln!(s, "config checksum: {}", manifest.config_checksum)?;
    writeln!(
        s,
        "chains: {completed} completed, {} not completed, {:.1} s wall clock",
        manifest.chains.len() - completed,
        manifest.wall_clock_secs
    )?;

    writeln!(s, "\nCPER by condition")?;
    writeln!(
        s,
        "{:<32} {:>8} {:>8} {:>10} {:>14}",
        "condition", "n", "CPER", "T*", "per-seed CPER"
    )?;
    for c in &manifest.conditions {
        let sw = c.sweep.as_ref();
        writeln!(
            s,
            "{:<32} {:>8} {:>8} {:>10} {:>14}",
            c.name,
            c.n_train,
            fmt_opt(sw.map(|x| x.cper), 4),
            fmt_opt(sw.map(|x| x.t_star), 5),
            fmt_opt(sw.map(|x| x.cper_per_seed_mean), 4),
        )?;
    }

    for c in &manifest.conditions {
        let Some(sw) = &c.sweep else { continue };
        writeln!(s, "\ntest cross-entropy vs T: {}", c.name)?;
        writeln!(
            s,
            "{:>10} {:>6} {:>10} {:>9} {:>9} {:>9}",
            "T", "seeds", "CE", "+-SE", "acc", "ECE"
        )?;
        for t in &sw.per_temperature {
            writeln!(
                s,
                "{:>10.5} {:>6} {:>10.5} {:>9.5} {:>9.4} {:>9.4}",
                t.temperature, t.seeds, t.mean_ce, t.se_ce, t.mean_accuracy, t.mean_ece
            )?;
        }
    }

    let curated: Vec<_> = manifest
        .conditions
        .iter()
        .filter(|c| c.retention_rate.is_some())
        .collect();
    if !curated.is_empty() {
        writeln!(s, "\ncuration retention")?;
        writeln!(
            s,
            "{:<32} {:>4} {:>10} {:>10}",
            "condition", "S", "retained", "agreement"
        )?;
        for c in curated {
            writeln!(
                s,
                "{:<32} {:>4} {:>10} {:>10}",
                c.name,
                c.labellers.map_or_else(|| "-".into(), |v| v.to_string()),
                fmt_opt(c.retention_rate, 4),
                fmt_opt(c.consensus_agreement, 4),
            )?;
        }
    }

    let ba: Vec<_> = manifest
        .chains
        .iter()
        .filter(|c| c.boundary_agreement.is_some())
        .collect();
    if !ba.is_empty() {
        writeln!(s, "\nboundary agreement with the Bayes rule (mean over seeds)")?;
        for c in &manifest.conditions {
            for &t in &manifest.temperatures {
                let vals: Vec<f64> = ba
                    .iter()
                    .filter(|e| e.condition == c.name && e.temperature == t)
                    .filter_map(|e| e.boundary_agreement)
                    .collect();
                if !vals.is_empty() {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    writeln!(s, "{:<32} T={t:<10.5} {mean:.4}", c.name)?;
                }
            }
        }
    }

    let failed: Vec<_> = manifest.chains.iter().filter(|c| !c.is_completed()).collect();
    if !failed.is_empty() {
        writeln!(s, "\nchains not completed")?;
        for c in failed {
            writeln!(s, "{}: {:?}", c.id, c.status)?;
        }
    }

    writeln!(s, "\nfiles")?;
    for f in manifest
        .outputs
        .iter()
        .filter(|f| !f.starts_with("logs/") && !f.starts_with("grids/"))
    {
        writeln!(s, "  {f}")?;
    }
    let per_chain = manifest.outputs.len()
        - manifest
            .outputs
            .iter()
            .filter(|f| !f.starts_with("logs/") && !f.starts_with("grids/"))
            .count();
    if per_chain > 0 {
        writeln!(s, "  (+{per_chain} per-chain logs and grids)")?;
    }
    Ok(s)
}
