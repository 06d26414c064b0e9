//! File formats: trajectory CSV, metric tables and TOML run configurations.
//!
//! Trajectory columns, in order: `id, a1, p1, r, o2_*, lambda, g, p2, a2, y, o1_*`.
//! Stage-2 fields are empty for responders. Floats are written with the
//! shortest representation that parses back to the same value.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::effect::FeatureSpec;
use crate::error::{Error, Result};
use crate::harness::{GridAxes, LongRow};
use crate::sim::ScenarioConfig;
use crate::trial::{Dataset, Trajectory};

pub const RUN_CONFIG_SCHEMA: u32 = 1;

/// On-disk run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub grid: Option<GridAxes>,
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != RUN_CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported config schema version {}",
                cfg.schema_version
            )));
        }
        cfg.scenario.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

fn default_bins() -> usize {
    5
}

/// Effect-model columns read by `fit-effects`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesFile {
    pub stage2: FeatureSpec,
    #[serde(default)]
    pub stage1: Option<FeatureSpec>,
    #[serde(default = "default_bins")]
    pub bins_b: usize,
}

impl FeaturesFile {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Shortest round-trip text for a float.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn trajectory_header(data: &Dataset) -> Vec<String> {
    let mut h: Vec<String> = ["id", "a1", "p1", "r"].iter().map(|s| s.to_string()).collect();
    h.extend(data.o2_names.iter().cloned());
    h.extend(["lambda", "g", "p2", "a2", "y"].iter().map(|s| s.to_string()));
    h.extend(data.o1_names.iter().cloned());
    h
}

pub fn write_trajectories<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(trajectory_header(data))?;
    for t in &data.rows {
        let mut rec = vec![
            t.id.to_string(),
            t.a1.to_string(),
            fmt_f64(t.p1),
            u8::from(t.r).to_string(),
        ];
        rec.extend(t.o2.iter().map(|&v| fmt_f64(v)));
        rec.push(opt(t.lambda));
        rec.push(opt(t.g));
        rec.push(opt(t.p2.map(fmt_f64)));
        rec.push(t.a2.to_string());
        rec.push(fmt_f64(t.y));
        rec.extend(t.o1.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectories_file(data: &Dataset, path: &Path) -> Result<()> {
    write_trajectories(data, fs::File::create(path)?)
}

fn parse<T: std::str::FromStr>(field: &str, column: &str, line: usize) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Schema(format!("line {line}: cannot parse '{field}' in column '{column}'")))
}

fn parse_opt<T: std::str::FromStr>(field: &str, column: &str, line: usize) -> Result<Option<T>> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        parse(field, column, line).map(Some)
    }
}

pub fn read_trajectories<R: Read>(input: R) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let o2_names: Vec<String> = header.iter().filter(|h| h.starts_with("o2_")).cloned().collect();
    let o1_names: Vec<String> = header.iter().filter(|h| h.starts_with("o1_")).cloned().collect();
    let expected = trajectory_header(&Dataset::new(o1_names.clone(), o2_names.clone()));
    if header != expected {
        return Err(Error::Schema(format!(
            "trajectory header must be [{}], found [{}]",
            expected.join(","),
            header.join(",")
        )));
    }
    let k2 = o2_names.len();
    let mut data = Dataset::new(o1_names, o2_names);
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |j: usize| &rec[j];
        let col = |j: usize| header[j].as_str();
        let r_flag: u8 = parse(f(3), col(3), line)?;
        if r_flag > 1 {
            return Err(Error::Schema(format!("line {line}: r must be 0 or 1")));
        }
        let o2 = (0..k2)
            .map(|j| parse(f(4 + j), col(4 + j), line))
            .collect::<Result<Vec<f64>>>()?;
        let base = 4 + k2;
        let o1 = (base + 5..header.len())
            .map(|j| parse(f(j), col(j), line))
            .collect::<Result<Vec<f64>>>()?;
        data.rows.push(Trajectory {
            id: parse(f(0), col(0), line)?,
            a1: parse(f(1), col(1), line)?,
            p1: parse(f(2), col(2), line)?,
            r: r_flag == 1,
            o2,
            lambda: parse_opt(f(base), col(base), line)?,
            g: parse_opt(f(base + 1), col(base + 1), line)?,
            p2: parse_opt(f(base + 2), col(base + 2), line)?,
            a2: parse(f(base + 3), col(base + 3), line)?,
            y: parse(f(base + 4), col(base + 4), line)?,
            o1,
        });
    }
    Ok(data)
}

pub fn read_trajectories_file(path: &Path) -> Result<Dataset> {
    read_trajectories(fs::File::open(path)?)
}

pub fn write_long_csv<W: Write>(rows: &[LongRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record([
        "kind", "n", "n_pilot", "capacity", "epsilon", "eta", "association", "metric", "dtr", "value", "mc_se",
    ])?;
    for r in rows {
        w.write_record([
            r.kind.to_string(),
            r.n.to_string(),
            r.n_pilot.to_string(),
            fmt_f64(r.capacity),
            fmt_f64(r.epsilon),
            fmt_f64(r.eta),
            r.association.to_string(),
            r.metric.clone(),
            r.dtr.clone(),
            fmt_f64(r.value),
            opt(r.mc_se.map(fmt_f64)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `contents` to `path` with a trailing newline.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    if !contents.ends_with('\n') {
        f.write_all(b"\n")?;
    }
    Ok(())
}
