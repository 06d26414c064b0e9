//! Command-line interface.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng as _;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::allocate::allocate_arm;
use crate::effect::{predict_effect, EffectModel};
use crate::error::{Error, Result};
use crate::estimate::{estimate_all, select_optimal};
use crate::harness::{long_rows, run_replicates, scenario_grid, CellKey, MetricSet};
use crate::io::{
    fmt_f64, read_trajectories_file, write_long_csv, write_text, write_trajectories_file,
    FeaturesFile, RunConfig,
};
use crate::market::draw_assignment;
use crate::rng::stream;
use crate::sim::{simulate_trial, AdhdScenario, ScenarioConfig};
use crate::trial::{DesignKind, DesignSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const TABLE1_PRESET: &str = include_str!("../presets/table1.toml");
pub const ADHD_PRESET: &str = include_str!("../presets/adhd.toml");

#[derive(Debug, Parser)]
#[command(name = "smart-exam", version, about = "Welfare-aware SMART design toolkit")]
pub struct Cli {
    /// Worker threads for replicated runs; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Table1,
    Adhd,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replicate a scenario (or grid) and write metrics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one trial and write its trajectories.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign stage-2 probabilities to a batch of non-responders.
    Allocate {
        #[arg(long)]
        participants: PathBuf,
        #[arg(long)]
        effects: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the Q-learning effect model on pilot trajectories.
    FitEffects {
        #[arg(long)]
        pilot: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// IPW estimates of the four embedded regimes.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a built-in study and write its summary tables.
    Replicate {
        #[arg(long, value_enum)]
        study: Study,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit code for an error: 2 for bad inputs, 3 for failures while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Schema(_)
        | Error::InvalidDesign(_)
        | Error::RankDeficient { .. }
        | Error::TooFewRows { .. }
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => EXIT_CONFIG,
        Error::Cell { source, .. } => match **source {
            Error::Config(_) | Error::InvalidDesign(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        },
        _ => EXIT_RUNTIME,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_CONFIG;
        }
        // a pool may already exist when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate {
            config,
            reps,
            seed,
            out,
        } => cmd_simulate(config, *reps, *seed, out, cli.threads),
        Command::Generate { config, seed, out } => cmd_generate(config, *seed, out),
        Command::Allocate {
            participants,
            effects,
            design,
            seed,
            out,
        } => cmd_allocate(participants, effects, design, *seed, out),
        Command::FitEffects {
            pilot,
            features,
            out,
        } => cmd_fit_effects(pilot, features, out),
        Command::Estimate { data, out } => cmd_estimate(data, out),
        Command::Replicate {
            study,
            reps,
            seed,
            out,
        } => cmd_replicate(*study, *reps, *seed, out, cli.threads),
    }
}

fn read_config(path: &Path) -> Result<(RunConfig, String)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok((RunConfig::from_toml(&text)?, text))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    config_sha256: String,
    seed: u64,
    reps: usize,
    threads: Option<usize>,
    outputs: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn write_metrics(out: &Path, cells: &[(CellKey, MetricSet)]) -> Result<Vec<String>> {
    fs::create_dir_all(out)?;
    let csv_path = out.join("metrics.csv");
    write_long_csv(&long_rows(cells), fs::File::create(&csv_path)?)?;
    #[derive(Serialize)]
    struct Cell<'a> {
        cell: &'a CellKey,
        metrics: &'a MetricSet,
    }
    let json: Vec<Cell> = cells
        .iter()
        .map(|(k, m)| Cell {
            cell: k,
            metrics: m,
        })
        .collect();
    write_json(&out.join("metrics.json"), &json)?;
    Ok(vec!["metrics.csv".into(), "metrics.json".into()])
}

fn cmd_simulate(
    config: &Path,
    reps: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    threads: Option<usize>,
) -> Result<()> {
    let (mut cfg, text) = read_config(config)?;
    if let Some(r) = reps {
        cfg.scenario.reps = r;
    }
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    cfg.scenario.validate()?;
    let axes = cfg.grid.clone().unwrap_or_default();
    let cells = scenario_grid(&cfg.scenario, &axes)?;
    let outputs = write_metrics(out, &cells)?;
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: "simulate",
            config_sha256: sha256_hex(text.as_bytes()),
            seed: cfg.scenario.seed,
            reps: cfg.scenario.reps,
            threads,
            outputs,
        },
    )
}

fn cmd_generate(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let (mut cfg, _) = read_config(config)?;
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    let trial = simulate_trial(&cfg.scenario, &mut stream(cfg.scenario.seed, 0))?;
    if trial.fallback {
        eprintln!("note: burn-in effect fit failed; remainder randomized with balanced probabilities");
    }
    write_trajectories_file(&trial.data, out)
}

fn cmd_fit_effects(pilot: &Path, features: &Path, out: &Path) -> Result<()> {
    let data = read_trajectories_file(pilot)?;
    data.validate(0.0)?;
    let spec = FeaturesFile::from_toml(&fs::read_to_string(features)?)?;
    let model = EffectModel::fit(&data, &spec.stage2, spec.stage1.as_ref(), spec.bins_b)?;
    write_text(out, &model.to_json()?)
}

fn cmd_estimate(data: &Path, out: &Path) -> Result<()> {
    let data = read_trajectories_file(data)?;
    data.validate(0.0)?;
    let estimates = estimate_all(&data)?;
    let best = select_optimal(&estimates);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(out)?;
    w.write_record([
        "d1", "d2", "mean", "se", "ci_low", "ci_high", "n_consistent", "weight_sum", "selected",
    ])?;
    for e in &estimates {
        let (lo, hi) = e.ci();
        w.write_record([
            e.dtr.d1.to_string(),
            e.dtr.d2.to_string(),
            fmt_f64(e.mean),
            fmt_f64(e.se()),
            fmt_f64(lo),
            fmt_f64(hi),
            e.n_consistent.to_string(),
            fmt_f64(e.weight_sum),
            u8::from(e.dtr == best).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the allocation input.
struct Participant {
    id: String,
    a1: i8,
    lambda: u8,
    values: HashMap<String, f64>,
}

fn read_participants(path: &Path, needed: &[String]) -> Result<Vec<Participant>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let pos = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("participants file lacks column '{name}'")))
    };
    let (i_id, i_a1, i_lambda) = (pos("id")?, pos("a1")?, pos("lambda")?);
    let cols: Vec<(String, usize)> = needed
        .iter()
        .map(|n| pos(n).map(|i| (n.clone(), i)))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let bad = |c: &str| Error::Schema(format!("line {line}: invalid value in column '{c}'"));
        let a1: i8 = rec[i_a1].trim().parse().map_err(|_| bad("a1"))?;
        if a1 != 1 && a1 != -1 {
            return Err(bad("a1"));
        }
        let lambda: u8 = rec[i_lambda].trim().parse().map_err(|_| bad("lambda"))?;
        if lambda > 1 {
            return Err(bad("lambda"));
        }
        let mut values = HashMap::new();
        for (name, i) in &cols {
            let v: f64 = rec[*i].trim().parse().map_err(|_| bad(name))?;
            values.insert(name.clone(), v);
        }
        out.push(Participant {
            id: rec[i_id].to_string(),
            a1,
            lambda,
            values,
        });
    }
    Ok(out)
}

fn cmd_allocate(
    participants: &Path,
    effects: &Path,
    design: &Path,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let model = EffectModel::from_json(&fs::read_to_string(effects)?)?;
    let spec: DesignSpec = toml::from_str(&fs::read_to_string(design)?)
        .map_err(|e| Error::Config(e.to_string()))?;
    spec.validate()?;
    let needed: Vec<String> = model
        .stage2
        .feature_spec
        .interaction_columns
        .iter()
        .filter(|c| *c != crate::effect::INTERCEPT && *c != crate::effect::A1)
        .cloned()
        .collect();
    let people = read_participants(participants, &needed)?;

    struct Row {
        g: u32,
        zeta: f64,
        p_plus: f64,
        p_e: f64,
        a2e: i8,
        q: f64,
        beta: f64,
        iterations: usize,
    }
    let mut rows: Vec<Option<Row>> = (0..people.len()).map(|_| None).collect();
    for a1 in [1i8, -1] {
        let idx: Vec<usize> = (0..people.len()).filter(|&i| people[i].a1 == a1).collect();
        if idx.is_empty() {
            continue;
        }
        let lambdas: Vec<u8> = idx.iter().map(|&i| people[i].lambda).collect();
        let zeta_plus = idx
            .iter()
            .map(|&i| {
                let p = &people[i];
                predict_effect(
                    &model.stage2,
                    |name| {
                        if name == crate::effect::A1 {
                            Some(f64::from(p.a1))
                        } else {
                            p.values.get(name).copied()
                        }
                    },
                    1,
                )
            })
            .collect::<Result<Vec<f64>>>()?;
        let alloc = allocate_arm(&spec, a1, &lambdas, &zeta_plus)?;
        for (k, &i) in idx.iter().enumerate() {
            rows[i] = Some(Row {
                g: alloc.groups[k],
                zeta: alloc.effects.binned[k],
                p_plus: alloc.p_plus(k),
                p_e: alloc.state.p_final[k],
                a2e: alloc.state.a2e,
                q: alloc.state.q,
                beta: alloc.state.beta,
                iterations: alloc.state.iterations,
            });
        }
    }
    let mut rng = stream(seed, 0);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(out)?;
    w.write_record([
        "id", "a1", "g", "zeta_binned", "p_arm_plus1", "assigned_a2", "q", "beta", "iterations",
    ])?;
    for (p, row) in people.iter().zip(rows) {
        let row = row.expect("every participant belongs to an arm");
        let a2 = draw_assignment(row.p_e, rng.random::<f64>(), row.a2e);
        w.write_record([
            p.id.clone(),
            p.a1.to_string(),
            row.g.to_string(),
            fmt_f64(row.zeta),
            fmt_f64(row.p_plus),
            a2.to_string(),
            fmt_f64(row.q),
            fmt_f64(row.beta),
            row.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Design cells of a built-in study.
pub fn study_cells(study: Study) -> Result<Vec<(String, ScenarioConfig)>> {
    match study {
        Study::Table1 => {
            let base = RunConfig::from_toml(TABLE1_PRESET)?.scenario;
            let mut cells = Vec::new();
            for (label, kind) in [
                ("SMART", DesignKind::Smart),
                ("SMART-EXAM", DesignKind::SmartExam),
                ("SMART-AR-EXAM", DesignKind::SmartArExam),
            ] {
                let mut cfg = base.clone();
                cfg.design.kind = kind;
                if kind == DesignKind::Smart {
                    cfg.design.epsilon = 0.0;
                }
                cells.push((label.to_string(), cfg));
            }
            Ok(cells)
        }
        Study::Adhd => {
            let base = RunConfig::from_toml(ADHD_PRESET)?.scenario;
            let mut cells = Vec::new();
            for scenario in [AdhdScenario::S1, AdhdScenario::S2, AdhdScenario::S3] {
                let (p0, p1) = scenario.probabilities();
                let mut model = base.model.clone();
                model.preference = crate::sim::PreferenceModel::Covariate {
                    column: "o2_22".into(),
                    p_if_zero: p0,
                    p_if_one: p1,
                };
                let mut smart = base.clone();
                smart.model = model.clone();
                smart.design = DesignSpec::smart(0.5);
                cells.push((format!("{scenario}/SMART"), smart));
                for eps in [0.1, 0.2, 0.3] {
                    let mut cfg = base.clone();
                    cfg.model = model.clone();
                    cfg.design.kind = DesignKind::SmartExam;
                    cfg.design.epsilon = eps;
                    cells.push((format!("{scenario}/SMART-EXAM eps={eps}"), cfg));
                }
            }
            Ok(cells)
        }
    }
}

fn cmd_replicate(
    study: Study,
    reps: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    threads: Option<usize>,
) -> Result<()> {
    let mut cells = study_cells(study)?;
    for (_, cfg) in cells.iter_mut() {
        if let Some(r) = reps {
            cfg.reps = r;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
    }
    let mut results = Vec::new();
    for (label, cfg) in &cells {
        let m = run_replicates(cfg).map_err(|e| Error::Cell {
            cell: label.clone(),
            source: Box::new(e),
        })?;
        results.push((label.clone(), CellKey::of(cfg), m));
    }
    fs::create_dir_all(out)?;
    let keyed: Vec<(CellKey, MetricSet)> = results.iter().map(|(_, k, m)| (k.clone(), m.clone())).collect();
    let mut outputs = write_metrics(out, &keyed)?;

    let table = match study {
        Study::Table1 => "operating_characteristics.csv",
        Study::Adhd => "application.csv",
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(out.join(table))?;
    match study {
        Study::Table1 => {
            w.write_record([
                "design", "d1", "d2", "true_value", "mean_estimate", "empirical_se", "mean_count",
                "selection_prob",
            ])?;
            for (label, _, m) in &results {
                for d in &m.per_dtr {
                    w.write_record([
                        label.clone(),
                        d.dtr.d1.to_string(),
                        d.dtr.d2.to_string(),
                        fmt_f64(d.true_value),
                        fmt_f64(d.mean_estimate.value),
                        fmt_f64(d.empirical_se),
                        fmt_f64(d.mean_count.value),
                        fmt_f64(d.selection_prob.value),
                    ])?;
                }
            }
        }
        Study::Adhd => {
            w.write_record([
                "scenario", "design", "prob_correct", "mean_value_of_selected", "mean_utility",
                "mean_outcome_nonresp",
            ])?;
            for (label, _, m) in &results {
                let (scenario, design) = label.split_once('/').unwrap_or(("", label));
                w.write_record([
                    scenario.to_string(),
                    design.to_string(),
                    fmt_f64(m.prob_correct_selection.value),
                    fmt_f64(m.mean_value_of_selected.value),
                    fmt_f64(m.mean_utility.value),
                    fmt_f64(m.mean_outcome_nonresp.value),
                ])?;
            }
        }
    }
    w.flush()?;
    outputs.push(table.into());
    let preset = match study {
        Study::Table1 => TABLE1_PRESET,
        Study::Adhd => ADHD_PRESET,
    };
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: "replicate",
            config_sha256: sha256_hex(preset.as_bytes()),
            seed: cells[0].1.seed,
            reps: cells[0].1.reps,
            threads,
            outputs,
        },
    )
}
