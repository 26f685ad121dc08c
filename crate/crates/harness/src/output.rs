//! On-disk layout of an experiment: `replicas.csv`, `summary.json`,
//! `plotdata_<column>.csv` and, for the local census, `census_<n>.csv`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, ExperimentResult, ReplicaRow};

pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let x_name = &result.summary.x_name;

    let mut w = BufWriter::new(File::create(dir.join("replicas.csv"))?);
    write!(w, "{x_name},replica,seed")?;
    for c in &result.columns {
        write!(w, ",{c}")?;
    }
    writeln!(w)?;
    for r in &result.rows {
        write!(w, "{},{},{}", r.x, r.replica, r.seed)?;
        for v in &r.values {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;

    let mut text = serde_json::to_string_pretty(result)?;
    text.push('\n');
    fs::write(dir.join("summary.json"), text)?;

    for c in &result.columns {
        let mut w = BufWriter::new(File::create(dir.join(format!("plotdata_{c}.csv")))?);
        writeln!(w, "x,y,yerr")?;
        for g in &result.summary.groups {
            let s = &g.stats[c];
            writeln!(w, "{},{},{}", g.x, s.mean, s.std_error)?;
        }
        w.flush()?;
    }

    for t in &result.census {
        let mut w = BufWriter::new(File::create(dir.join(format!("census_{}.csv", t.n)))?);
        writeln!(w, "code,graph_count,graph_fraction,tree_probability")?;
        let total: usize = t.graph_counts.values().sum();
        let mut keys: Vec<&String> = t.graph_counts.keys().chain(t.tree_probabilities.keys()).collect();
        keys.sort();
        keys.dedup();
        for k in keys {
            let c = t.graph_counts.get(k).copied().unwrap_or(0);
            let p = t.tree_probabilities.get(k).copied().unwrap_or(0.0);
            writeln!(w, "{k},{c},{},{p}", c as f64 / total.max(1) as f64)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Reads `replicas.csv` back: column names (after `x,replica,seed`) and rows.
pub fn read_replicas_csv(path: &Path) -> Result<(Vec<String>, Vec<ReplicaRow>)> {
    let file = BufReader::new(File::open(path)?);
    let mut lines = file.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Config(format!("{} is empty", path.display())))??;
    let columns: Vec<String> = header.split(',').skip(3).map(str::to_string).collect();
    let bad = |i: usize| HarnessError::Config(format!("{}: malformed line {}", path.display(), i + 2));
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != columns.len() + 3 {
            return Err(bad(i));
        }
        rows.push(ReplicaRow {
            x: f[0].parse().map_err(|_| bad(i))?,
            replica: f[1].parse().map_err(|_| bad(i))?,
            seed: f[2].parse().map_err(|_| bad(i))?,
            values: f[3..].iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(|_| bad(i))?,
        });
    }
    Ok((columns, rows))
}

/// Runs the experiment and writes its outputs to `cfg.out` when set.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let result = run_experiment(cfg)?;
    if let Some(dir) = &cfg.out {
        write_outputs(&result, dir)?;
    }
    Ok(result)
}

/// Sets `param` (a top-level field, `n`, or `thresholds.<field>`) from its
/// textual value. Numbers and booleans are parsed as such, lists as JSON.
pub fn with_parameter(template: &ExperimentConfig, param: &str, value: &str) -> Result<ExperimentConfig> {
    let parsed: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let mut tree = serde_json::to_value(template)?;
    let (path, parsed): (Vec<&str>, Value) = if param == "n" {
        (vec!["n_grid"], Value::Array(vec![parsed]))
    } else {
        (param.split('.').collect(), parsed)
    };
    let mut slot = &mut tree;
    for key in &path {
        slot = slot
            .get_mut(*key)
            .ok_or_else(|| HarnessError::Config(format!("unknown sweep parameter `{param}`")))?;
    }
    *slot = parsed;
    let mut cfg: ExperimentConfig =
        serde_json::from_value(tree).map_err(|e| HarnessError::Config(format!("sweep value `{value}`: {e}")))?;
    cfg.threads = template.threads;
    cfg.out = template.out.as_ref().map(|d| d.join(format!("{param}={value}")));
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one experiment per value. With an output directory each run goes to
/// `<out>/<param>=<value>/` and a combined `sweep.csv` lists every group mean.
pub fn sweep(template: &ExperimentConfig, param: &str, values: &[String]) -> Result<Vec<ExperimentResult>> {
    let configs: Vec<ExperimentConfig> =
        values.iter().map(|v| with_parameter(template, param, v)).collect::<Result<_>>()?;
    let mut results = Vec::with_capacity(configs.len());
    for cfg in &configs {
        results.push(run_and_write(cfg)?);
    }
    if let (Some(dir), Some(first)) = (&template.out, results.first()) {
        fs::create_dir_all(dir)?;
        write_sweep_table(&dir.join("sweep.csv"), param, values, &results, &first.columns)?;
    }
    Ok(results)
}

fn write_sweep_table(
    path: &PathBuf,
    param: &str,
    values: &[String],
    results: &[ExperimentResult],
    columns: &[String],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "{param},{}", results[0].summary.x_name)?;
    for c in columns {
        write!(w, ",{c}_mean,{c}_std_error")?;
    }
    writeln!(w)?;
    for (v, r) in values.iter().zip(results) {
        for g in &r.summary.groups {
            write!(w, "{v},{}", g.x)?;
            for c in columns {
                let s = &g.stats[c];
                write!(w, ",{},{}", s.mean, s.std_error)?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}
