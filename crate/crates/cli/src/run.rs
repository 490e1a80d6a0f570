use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use cpbias::conformal::coverage_gap;
use cpbias::cqr::{run_cqr_experiment, write_cqr_csv, CqrSpec};
use cpbias::harness::{
    bound_for_tuner, dkw_violation_rate, estimate_tuning_bias, replication_sup_process,
    run_replication, sweep_calibration_size, sweep_param_complexity, write_bound_comparison_csv,
    write_bounds_csv, write_results_csv, write_summary_csv, BiasEstimate, BoundComparisonRow,
    ExperimentSpec, Prepared, Protocol, ResultRow, TunerSpec,
};
use cpbias::rng::derive_seed;
use cpbias::stats::mean_stderr;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;

/// What a run produced, for the manifest and the exit code.
#[derive(Debug, Default, Serialize)]
pub struct RunOutcome {
    pub outputs: Vec<String>,
    pub replication_seeds: Vec<u64>,
    pub violations: Vec<String>,
}

fn create(dir: &Path, name: &str, out: &mut RunOutcome) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    out.outputs.push(name.to_string());
    Ok(BufWriter::new(f))
}

fn write_rows<T: Serialize>(w: impl std::io::Write, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

fn rep_seeds(seed: u64, reps: usize) -> Vec<u64> {
    (0..reps).map(|r| derive_seed(seed, &[r as u64])).collect()
}

pub fn run(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    let mut out = RunOutcome::default();
    match cfg {
        RunConfig::CoverageCheck { experiment, .. } => coverage_check(experiment, dir, &mut out)?,
        RunConfig::Bias { experiment, .. } => {
            let est = estimate_tuning_bias(experiment)?;
            bias_outputs(experiment, &[est], dir, &mut out)?;
        }
        RunConfig::SweepN { experiment, n_values, .. } => {
            let ests = sweep_calibration_size(experiment, n_values)?;
            bias_outputs(experiment, &ests, dir, &mut out)?;
        }
        RunConfig::SweepComplexity { experiment, levels, .. } => {
            let ests = sweep_param_complexity(experiment, levels)?;
            bias_outputs(experiment, &ests, dir, &mut out)?;
        }
        RunConfig::SupProcess { experiment, reference_factor, .. } => {
            sup_process(experiment, *reference_factor, dir, &mut out)?
        }
        RunConfig::Dkw { n, eps, trials, seed, .. } => {
            let r = dkw_violation_rate(*n, *eps, *trials, *seed)?;
            if r.rate > r.bound + 3.0 * r.stderr {
                out.violations.push(format!(
                    "DKW violation rate {} exceeds the bound {} by more than 3 standard errors",
                    r.rate, r.bound
                ));
            }
            write_rows(create(dir, "results.csv", &mut out)?, &[r])?;
        }
        RunConfig::Bounds { entries, .. } => {
            let reports = entries
                .iter()
                .enumerate()
                .map(|(i, e)| Ok((format!("entry-{i}"), e.report()?)))
                .collect::<Result<Vec<_>>>()?;
            write_bounds_csv(create(dir, "bounds.csv", &mut out)?, &reports)?;
        }
        RunConfig::Cqr { experiment, n_values, .. } => cqr(experiment, n_values, dir, &mut out)?,
    }
    Ok(out)
}

fn coverage_check(spec: &ExperimentSpec, dir: &Path, out: &mut RunOutcome) -> Result<()> {
    let prep = Prepared::new(spec.clone())?;
    let arms = (0..spec.replications)
        .into_par_iter()
        .map(|r| run_replication(&prep, r, Protocol::SameSet))
        .collect::<cpbias::Result<Vec<_>>>()?;
    out.replication_seeds = rep_seeds(spec.seed, spec.replications);
    let cov: Vec<f64> = arms.iter().map(|a| a.coverage).collect();
    let size: Vec<f64> = arms.iter().map(|a| a.avg_size).collect();
    let (mean, se) = mean_stderr(&cov);
    let row = |rep: String, coverage, avg_size, seed| ResultRow {
        experiment_id: spec.id.clone(),
        protocol: "same",
        tuner: spec.tuner.name().into(),
        n_cal: spec.n_cal,
        complexity: spec.tuner.complexity(),
        rep,
        coverage,
        avg_size,
        covgap: coverage_gap(coverage, spec.alpha),
        seed,
    };
    let mut rows: Vec<ResultRow> = arms
        .iter()
        .enumerate()
        .map(|(r, a)| row(r.to_string(), a.coverage, a.avg_size, out.replication_seeds[r]))
        .collect();
    rows.push(row("mean".into(), mean, mean_stderr(&size).0, spec.seed));
    write_rows(create(dir, "results.csv", out)?, &rows)?;

    // The sandwich holds for an untuned score; tuned scores may break it.
    if matches!(spec.tuner, TunerSpec::Identity) {
        let lo = 1.0 - spec.alpha - 3.0 * se;
        let hi = 1.0 - spec.alpha + 1.0 / (spec.n_cal as f64 + 1.0) + 3.0 * se;
        if !(lo..=hi).contains(&mean) {
            out.violations.push(format!("mean coverage {mean} outside the coverage sandwich [{lo}, {hi}]"));
        }
    }
    log::info!("{}: mean coverage {mean:.4} ± {se:.4}", spec.id);
    Ok(())
}

fn bias_outputs(spec: &ExperimentSpec, ests: &[BiasEstimate], dir: &Path, out: &mut RunOutcome) -> Result<()> {
    out.replication_seeds = rep_seeds(spec.seed, spec.replications);
    write_results_csv(create(dir, "results.csv", out)?, ests, spec.seed)?;
    write_summary_csv(create(dir, "summary.csv", out)?, ests)?;
    let k = Prepared::new(spec.clone())?.num_classes();
    let mut rows = Vec::with_capacity(ests.len());
    for (e, cell) in ests.iter().zip(cells(spec, ests)) {
        let row = BoundComparisonRow::new(e, &bound_for_tuner(&cell.tuner, k, e.n_cal)?);
        if row.violated {
            out.violations.push(format!(
                "{}: tuning bias {} ± {} exceeds the certified {} bound {}",
                e.experiment_id, e.tuning_bias.mean, e.tuning_bias.stderr, row.kind, row.bound
            ));
        }
        log::info!(
            "{}: tuning bias {:.4} ± {:.4} (bound {:.4})",
            e.experiment_id,
            e.tuning_bias.mean,
            e.tuning_bias.stderr,
            row.bound
        );
        rows.push(row);
    }
    write_bound_comparison_csv(create(dir, "bounds.csv", out)?, &rows)?;
    Ok(())
}

/// Per-cell specs, with the swept complexity level applied.
fn cells(spec: &ExperimentSpec, ests: &[BiasEstimate]) -> Vec<ExperimentSpec> {
    ests.iter()
        .map(|e| {
            let tuner = e
                .complexity
                .and_then(|c| spec.tuner.with_complexity(c).ok())
                .unwrap_or_else(|| spec.tuner.clone());
            ExperimentSpec { tuner, n_cal: e.n_cal, ..spec.clone() }
        })
        .collect()
}

#[derive(Serialize)]
struct SupRow {
    experiment_id: String,
    rep: String,
    seed: u64,
    grid_size: usize,
    rhat: f64,
    argmax_index: Option<usize>,
    argmax_t: Option<f64>,
}

fn sup_process(spec: &ExperimentSpec, factor: usize, dir: &Path, out: &mut RunOutcome) -> Result<()> {
    let prep = Prepared::new(spec.clone())?;
    let ests = (0..spec.replications)
        .into_par_iter()
        .map(|r| replication_sup_process(&prep, r, factor))
        .collect::<cpbias::Result<Vec<_>>>()?;
    out.replication_seeds = rep_seeds(spec.seed, spec.replications);
    let mut rows: Vec<SupRow> = ests
        .iter()
        .enumerate()
        .map(|(r, e)| SupRow {
            experiment_id: spec.id.clone(),
            rep: r.to_string(),
            seed: out.replication_seeds[r],
            grid_size: e.grid_size,
            rhat: e.rhat,
            argmax_index: Some(e.argmax_lambda),
            argmax_t: Some(e.argmax_t),
        })
        .collect();
    for e in &ests {
        if !(0.0..=1.0).contains(&e.rhat) {
            out.violations.push(format!("sup-process estimate {} outside [0, 1]", e.rhat));
        }
    }
    let rhat: Vec<f64> = ests.iter().map(|e| e.rhat).collect();
    rows.push(SupRow {
        experiment_id: spec.id.clone(),
        rep: "mean".into(),
        seed: spec.seed,
        grid_size: ests[0].grid_size,
        rhat: mean_stderr(&rhat).0,
        argmax_index: None,
        argmax_t: None,
    });
    write_rows(create(dir, "results.csv", out)?, &rows)?;
    Ok(())
}

fn cqr(spec: &CqrSpec, n_values: &[usize], dir: &Path, out: &mut RunOutcome) -> Result<()> {
    let ns = if n_values.is_empty() { vec![spec.n_cal] } else { n_values.to_vec() };
    let results = ns
        .iter()
        .map(|&n| run_cqr_experiment(&CqrSpec { n_cal: n, id: format!("{}/n={n}", spec.id), ..spec.clone() }))
        .collect::<cpbias::Result<Vec<_>>>()?;
    out.replication_seeds = rep_seeds(spec.seed, spec.replications);
    for r in &results {
        log::info!(
            "{}: coverage same {:.4} / hold-out {:.4}, tuning bias {:.4} ± {:.4}",
            r.experiment_id,
            r.summary.coverage_same.mean,
            r.summary.coverage_holdout.mean,
            r.summary.tuning_bias.mean,
            r.summary.tuning_bias.stderr
        );
    }
    write_cqr_csv(create(dir, "results.csv", out)?, &results)?;
    Ok(())
}
