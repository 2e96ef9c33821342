//! `mfnc`: batch front door for the mean-field neuron coupling experiments.
//! Validates configs, runs simulations and studies, and persists CSV/JSON
//! artifacts (plus static SVG plots) under `--out`.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use mfnc_core::auxiliary_system::coupled_run;
use mfnc_core::config::Config;
use mfnc_core::coupling::coupling_error_summary;
use mfnc_core::finite_system::simulate;
use mfnc_core::kmt::{couple_walk, CouplerMethod};
use mfnc_core::model::{validate_assumptions, DistanceMap};
use mfnc_core::noise::{StreamKey, StreamPurpose};
use mfnc_core::stats;

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "mfnc", version, about = "Mean-field neuron coupling experiments")]
struct Cli {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores). Output bytes do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Config override, repeatable: --set key=value (dotted TOML paths).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Emit SVG plots (default).
    #[arg(long, global = true)]
    plot: bool,
    /// Suppress SVG plots.
    #[arg(long, global = true, conflicts_with = "plot")]
    no_plot: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check the config against the model assumptions and report each one.
    Validate,
    /// Simulate finite-system replicates; dump events and sampled paths.
    SimulateFinite,
    /// Simulate coupled replicates; dump per-interval coupling diagnostics.
    SimulateCoupled,
    /// Monte Carlo sup-distance study over experiment.n_values with rate fit.
    RateStudy,
    /// Walk-to-Brownian coupler comparison across methods and walk lengths.
    CouplerBench,
    /// Realized coupling remainder across experiment.n_values.
    RemainderProbe,
    /// Increment bound and Poisson deviation checks.
    AppendixChecks,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::SimulateFinite => "simulate-finite",
            Command::SimulateCoupled => "simulate-coupled",
            Command::RateStudy => "rate-study",
            Command::CouplerBench => "coupler-bench",
            Command::RemainderProbe => "remainder-probe",
            Command::AppendixChecks => "appendix-checks",
        }
    }
}

enum Failure {
    Usage(String),
    Validation(String),
    Numerical(String),
}

impl From<mfnc_core::Error> for Failure {
    fn from(e: mfnc_core::Error) -> Self {
        use mfnc_core::Error::*;
        match &e {
            Assumptions(_) | InvalidParameter(_) | Config(_) => Failure::Validation(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("validation error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical error: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let base = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            Config::from_toml(&text)?
        }
        None => Config::default(),
    };
    let mut cfg = base.apply_overrides(&cli.set)?;
    if let Ok(seed) = std::env::var("MFNC_SEED") {
        cfg.seed = seed
            .parse()
            .map_err(|_| Failure::Usage(format!("MFNC_SEED must be a u64, got `{seed}`")))?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let cfg = load_config(cli)?;
    let start = Instant::now();
    let dir = cli.out.join(format!("{}-{}", cli.command.name(), cfg.digest()));
    std::fs::create_dir_all(&dir)?;

    match cli.command {
        Command::Validate => cmd_validate(&cfg, &dir)?,
        Command::SimulateFinite => cmd_simulate_finite(&cfg, &dir)?,
        Command::SimulateCoupled => cmd_simulate_coupled(&cfg, &dir)?,
        Command::RateStudy => cmd_rate_study(cli, &cfg, &dir)?,
        Command::CouplerBench => cmd_coupler_bench(cli, &cfg, &dir)?,
        Command::RemainderProbe => cmd_remainder_probe(&cfg, &dir)?,
        Command::AppendixChecks => cmd_appendix_checks(&cfg, &dir)?,
    }

    let manifest = json!({
        "command": cli.command.name(),
        "config_digest": cfg.digest(),
        "config": cfg,
        "seed": cfg.seed,
        "versions": { "mfnc": env!("CARGO_PKG_VERSION") },
        "wall_time_secs": start.elapsed().as_secs_f64(),
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::Numerical(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_validate(cfg: &Config, dir: &Path) -> Result<(), Failure> {
    // Structural errors surface as individual failed checks, so build the
    // params without the usual structural gate.
    let params = match cfg.to_params() {
        Ok(p) => p,
        Err(e) => return Err(Failure::Validation(e.to_string())),
    };
    let report = validate_assumptions(&params);
    for check in &report.checks {
        println!("{} {}: {}", if check.pass { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    write_json(&dir.join("validate.json"), &report)?;
    if report.pass() {
        Ok(())
    } else {
        Err(Failure::Validation("one or more assumption checks failed".into()))
    }
}

fn cmd_simulate_finite(cfg: &Config, dir: &Path) -> Result<(), Failure> {
    let params = cfg.to_params()?;
    let replicates = cfg.experiment.replicates;
    let runs: Vec<_> = (0..replicates)
        .into_par_iter()
        .map(|rep| simulate(&params, rep).map(|r| (rep, r)))
        .collect::<mfnc_core::Result<Vec<_>>>()?;

    // Candidate events: time in model time units, z in rate units, u in
    // potential units.
    let mut events = csv::Writer::from_path(dir.join("events.csv"))?;
    events.write_record(["replicate", "neuron", "time", "z", "u", "accepted_live", "accepted_frozen"])?;
    for (rep, (_, logs)) in &runs {
        for log in logs {
            for c in &log.candidates {
                events.write_record([
                    rep.to_string(),
                    c.neuron.to_string(),
                    format!("{:.17e}", c.time),
                    format!("{:.17e}", c.z),
                    format!("{:.17e}", c.u),
                    c.accepted_live.to_string(),
                    c.accepted_frozen.to_string(),
                ])?;
            }
        }
    }
    events.flush()?;

    // Potentials sampled on the substep grid (potential units).
    let mut paths = csv::Writer::from_path(dir.join("paths.csv"))?;
    paths.write_record(["replicate", "neuron", "grid_time", "value"])?;
    let h = params.delta() / params.substeps_per_delta as f64;
    let ticks = (params.horizon / h).floor() as usize;
    for (rep, (path, _)) in &runs {
        for neuron in 0..params.n_neurons {
            for i in 0..=ticks {
                let t = (i as f64 * h).min(params.horizon);
                paths.write_record([
                    rep.to_string(),
                    neuron.to_string(),
                    format!("{:.17e}", t),
                    format!("{:.17e}", path.value_at(neuron, t, true)),
                ])?;
            }
        }
    }
    paths.flush()?;
    println!("{} replicates, N={}, horizon={}", replicates, params.n_neurons, params.horizon);
    Ok(())
}

fn cmd_simulate_coupled(cfg: &Config, dir: &Path) -> Result<(), Failure> {
    let params = cfg.to_params()?;
    let a = DistanceMap::new(params.epsilon)?;
    let replicates = cfg.experiment.replicates;
    let runs: Vec<_> = (0..replicates)
        .into_par_iter()
        .map(|rep| coupled_run(&params, rep))
        .collect::<mfnc_core::Result<Vec<_>>>()?;

    let mut w = csv::Writer::from_path(dir.join("intervals.csv"))?;
    w.write_record(["replicate", "k", "n_frozen", "w_increment", "k_stat", "e_stat"])?;
    for run in &runs {
        for c in &run.couplings {
            w.write_record([
                run.replicate.to_string(),
                c.k.to_string(),
                c.n_frozen.to_string(),
                format!("{:.17e}", c.w_increment),
                format!("{:.17e}", c.k_stat),
                format!("{:.17e}", c.e_stat),
            ])?;
        }
    }
    w.flush()?;

    let all_couplings: Vec<_> = runs.iter().flat_map(|r| r.couplings.iter().cloned()).collect();
    let summary = coupling_error_summary(&all_couplings, a.d1_sup(), params.n_neurons);
    let distances: Vec<_> = runs.iter().map(|r| stats::sup_distance_detailed(r, &a)).collect();
    let mean_sup = distances.iter().map(|d| d.value).sum::<f64>() / distances.len().max(1) as f64;
    let max_modulus = distances.iter().map(|d| d.grid_modulus).fold(0.0, f64::max);
    write_json(
        &dir.join("summary.json"),
        &json!({
            "experiment": "simulate-coupled",
            "config_digest": cfg.digest(),
            "replicates": replicates,
            "mean_sup_distance": mean_sup,
            "max_grid_modulus": max_modulus,
            "coupling": summary,
        }),
    )?;
    println!("mean sup-distance {mean_sup:.6} over {replicates} replicates");
    Ok(())
}

fn cmd_rate_study(cli: &Cli, cfg: &Config, dir: &Path) -> Result<(), Failure> {
    let params = cfg.to_params()?;
    let digest = cfg.digest();
    let records_path = dir.join("records.csv");
    let mut partial: Vec<stats::RateRecord> = Vec::new();
    let result = stats::mc_rate_study(
        &params,
        &cfg.experiment.n_values,
        cfg.experiment.replicates,
        |rec| {
            partial.push(rec.clone());
            // Persist after every completed N so long studies are resumable
            // by inspection.
            let _ = write_records_csv(&records_path, &partial);
            println!(
                "N={:5}  delta={:.5}  mean={:.6}  ci=[{:.6}, {:.6}]",
                rec.n, rec.delta, rec.mean, rec.ci_low, rec.ci_high
            );
        },
    )?;
    write_records_csv(&records_path, &result.records)?;
    write_json(
        &dir.join("results.json"),
        &json!({
            "experiment": "rate-study",
            "config_digest": digest,
            "records": result.records,
            "fit": result.fit,
        }),
    )?;
    if !cli.no_plot {
        std::fs::write(dir.join("rate.svg"), plot::rate_plot(&result))?;
    }
    match result.fit.slope {
        Some(s) => println!("fit: slope {s:.4}, C = {:.4}", result.fit.c_hat),
        None => println!("fit: degenerate (fewer than 3 sizes), C = {:.4}", result.fit.c_hat),
    }
    Ok(())
}

fn write_records_csv(path: &Path, records: &[stats::RateRecord]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["N", "delta", "R", "mean", "std", "ci_low", "ci_high"])?;
    for r in records {
        w.write_record([
            r.n.to_string(),
            format!("{:.17e}", r.delta),
            r.replicates.to_string(),
            format!("{:.17e}", r.mean),
            format!("{:.17e}", r.std),
            format!("{:.17e}", r.ci_low),
            format!("{:.17e}", r.ci_high),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_coupler_bench(cli: &Cli, cfg: &Config, dir: &Path) -> Result<(), Failure> {
    let params = cfg.to_params()?;
    let methods = [CouplerMethod::Independent, CouplerMethod::Comonotone, CouplerMethod::Dyadic];
    let lengths = [1usize << 10, 1 << 14];
    let replicates = cfg.experiment.replicates;

    let mut rows: Vec<(CouplerMethod, usize, u64, f64)> = Vec::new();
    for method in methods {
        for n in lengths {
            let stats: Vec<f64> = (0..replicates)
                .into_par_iter()
                .map(|rep| {
                    let mark_key = StreamKey {
                        base_seed: params.base_seed,
                        replicate: rep,
                        purpose: StreamPurpose::Marks,
                        neuron: 0,
                        interval: n as u64,
                    };
                    let marks = mfnc_core::noise::draw_marks(mark_key, &params.jump_law, n);
                    let v_key = mark_key.with_purpose(StreamPurpose::CouplerV);
                    couple_walk(&marks, &params.jump_law, v_key, method).map(|c| c.sup_stat)
                })
                .collect::<mfnc_core::Result<Vec<_>>>()?;
            for (rep, s) in stats.iter().enumerate() {
                rows.push((method, n, rep as u64, *s));
            }
        }
    }

    let mut w = csv::Writer::from_path(dir.join("coupler.csv"))?;
    w.write_record(["method", "n", "replicate", "sup_stat"])?;
    for (method, n, rep, s) in &rows {
        w.write_record([
            format!("{method:?}").to_lowercase(),
            n.to_string(),
            rep.to_string(),
            format!("{:.17e}", s),
        ])?;
    }
    w.flush()?;

    if !cli.no_plot {
        let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
        for m in methods {
            for n in lengths {
                let values: Vec<f64> = rows
                    .iter()
                    .filter(|(rm, rn, _, _)| *rm == m && *rn == n)
                    .map(|r| r.3)
                    .collect();
                groups.push((format!("{m:?} n={n}").to_lowercase(), values));
            }
        }
        std::fs::write(dir.join("coupler.svg"), plot::histogram_plot(&groups))?;
    }
    println!("{} rows over {} methods x {} lengths", rows.len(), methods.len(), lengths.len());
    Ok(())
}

fn cmd_remainder_probe(cfg: &Config, dir: &Path) -> Result<(), Failure> {
    let params = cfg.to_params()?;
    let mut w = csv::Writer::from_path(dir.join("remainder.csv"))?;
    w.write_record(["N", "delta", "R", "mean", "ci_low", "ci_high"])?;
    let mut records = Vec::new();
    for &n in &cfg.experiment.n_values {
        let p = mfnc_core::model::ModelParams { n_neurons: n, ..params.clone() };
        let probe = stats::remainder_study(&p, cfg.experiment.replicates)?;
        println!(
            "N={:5}  mean |R| = {:.6}  ci=[{:.6}, {:.6}]",
            n, probe.mean, probe.ci_low, probe.ci_high
        );
        w.write_record([
            n.to_string(),
            format!("{:.17e}", p.delta()),
            cfg.experiment.replicates.to_string(),
            format!("{:.17e}", probe.mean),
            format!("{:.17e}", probe.ci_low),
            format!("{:.17e}", probe.ci_high),
        ])?;
        records.push(json!({
            "N": n,
            "delta": p.delta(),
            "R": cfg.experiment.replicates,
            "mean": probe.mean,
            "ci_low": probe.ci_low,
            "ci_high": probe.ci_high,
        }));
    }
    w.flush()?;
    write_json(
        &dir.join("remainder.json"),
        &json!({
            "experiment": "remainder-probe",
            "config_digest": cfg.digest(),
            "records": records,
        }),
    )?;
    Ok(())
}

fn cmd_appendix_checks(cfg: &Config, dir: &Path) -> Result<(), Failure> {
    let params = cfg.to_params()?;
    let deltas = [0.2, 0.1, 0.05, 0.025];
    let increment = stats::increment_bound_check(
        &mfnc_core::model::ModelParams { n_neurons: 256, ..params.clone() },
        &deltas,
        64,
    )?;
    println!("increment bound: slope {:.4} (target 0.5)", increment.slope);

    let mut deviations = Vec::new();
    for (n, delta) in [(256usize, 0.1f64), (512, 0.1), (1024, 0.05)] {
        let chk = stats::poisson_deviation_check(
            20_000,
            n,
            delta,
            params.rate_fn.f_min,
            params.rate_fn.f_max,
            params.base_seed,
        );
        println!(
            "poisson deviation N={n} delta={delta}: empirical {:.6} <= bound {:.6}: {}",
            chk.empirical,
            chk.bound,
            chk.empirical <= chk.bound
        );
        deviations.push(json!({
            "N": n, "delta": delta,
            "empirical": chk.empirical, "bound": chk.bound,
            "t": chk.t, "eps": chk.eps,
        }));
    }
    write_json(
        &dir.join("appendix.json"),
        &json!({
            "experiment": "appendix-checks",
            "config_digest": cfg.digest(),
            "increment_bound": { "points": increment.points, "slope": increment.slope },
            "poisson_deviation": deviations,
        }),
    )?;
    Ok(())
}
