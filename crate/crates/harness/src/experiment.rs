//! Replica execution and aggregation for every experiment kind.

use std::collections::BTreeMap;

use gffperc_core::gff::sample_exact_sparse;
use gffperc_core::green::{conditional_law_from_weights, conditioning_weights, GreenKernel, GreenSolver};
use gffperc_core::levelset::{
    ball_census, components, diameter, kernel, level_set, sample_typical_distances, two_core, ComponentDecomposition,
    NON_TREE_KEY,
};
use gffperc_core::multigraph::{ball, generate_configuration_model, Multigraph};
use gffperc_core::seed::derive_seed;
use gffperc_core::stats::{linear_fit, mean, median, std_error, LinearFit};
use gffperc_core::tree_process::{
    conditioned_ball_distribution, estimate_core_kernel_probs, estimate_eta, estimate_lambda, TreeRun,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub package: String,
}

/// Observables of one replica at grid point `x` (a vertex count, or a level
/// for tree estimates), in the order of [`ExperimentResult::columns`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRow {
    pub x: f64,
    pub replica: usize,
    pub seed: u64,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableStats {
    pub mean: f64,
    pub std_error: f64,
    pub median: f64,
    pub count: usize,
}

impl ObservableStats {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            std_error: std_error(xs),
            median: median(xs),
            count: xs.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub x: f64,
    pub replicas: usize,
    pub stats: BTreeMap<String, ObservableStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: ExperimentKind,
    /// Name of the grid variable, `n` or `h`.
    pub x_name: String,
    pub groups: Vec<GroupSummary>,
    pub fits: BTreeMap<String, LinearFit>,
    /// Kind-specific quantities that are not plain replica averages, such as
    /// tree-side reference values and pooled statistics.
    pub extras: BTreeMap<String, Value>,
}

impl Summary {
    pub fn group(&self, x: f64) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.x == x)
    }

    pub fn stat(&self, x: f64, column: &str) -> Option<ObservableStats> {
        self.group(x).and_then(|g| g.stats.get(column).copied())
    }
}

/// Radius-k ball census of the largest component, pooled over replicas at
/// one vertex count, next to the tree-side law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusTable {
    pub n: usize,
    pub graph_counts: BTreeMap<String, usize>,
    pub tree_probabilities: BTreeMap<String, f64>,
    pub total_variation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub columns: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<ReplicaRow>,
    pub summary: Summary,
    #[serde(skip)]
    pub census: Vec<CensusTable>,
}

impl ExperimentResult {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of one column at grid point `x`, in replica order.
    pub fn values(&self, x: f64, name: &str) -> Vec<f64> {
        let Some(j) = self.column(name) else { return Vec::new() };
        self.rows.iter().filter(|r| r.x == x).map(|r| r.values[j]).collect()
    }
}

pub fn provenance(cfg: &ExperimentConfig) -> Provenance {
    Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        package: env!("CARGO_PKG_NAME").to_string(),
    }
}

/// Seed of replica `replica` at grid point `x`.
pub fn replica_seed_for(cfg: &ExperimentConfig, x: f64, replica: usize) -> u64 {
    derive_seed(cfg.seed, &[cfg.kind.name(), &format!("x={x}"), "replica", &replica.to_string()])
}

fn tree_run(cfg: &ExperimentConfig, h: f64, label: &str) -> TreeRun {
    let t = &cfg.thresholds;
    TreeRun {
        max_size: t.tree_max_size,
        ..TreeRun::new(
            cfg.d,
            h,
            t.tree_generations,
            t.tree_replicas,
            derive_seed(cfg.seed, &[cfg.kind.name(), "tree", label]),
        )
    }
}

/// Runs the experiment, inside a dedicated worker pool when `cfg.threads` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    match cfg.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
            pool.install(|| run_inner(cfg))
        }
        None => run_inner(cfg),
    }
}

fn columns_for(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::GiantFraction => &["c1_fraction", "c2_size", "component_count", "level_fraction"],
        ExperimentKind::SecondComponent => &["c1_fraction", "c2_size", "c2_over_log_n"],
        ExperimentKind::CoreKernel => &["c1_fraction", "core_fraction", "kernel_fraction"],
        ExperimentKind::Diameter => &["c1_size", "diameter", "diameter_over_log_n"],
        ExperimentKind::TypicalDistance => &["c1_size", "median_distance", "mean_distance"],
        ExperimentKind::LocalLimit => &["c1_size", "total_variation", "non_tree_fraction"],
        ExperimentKind::TreeEstimates => &[
            "eta", "eta_std_error", "lambda", "lambda_std_error", "k1", "k1_std_error", "k2", "k2_std_error",
        ],
        ExperimentKind::GreenValidation => &[
            "max_cycles_in_log_ball",
            "pairs",
            "mean_ok",
            "variance_ok",
            "both_ok",
            "max_mean_ratio",
            "max_variance_ratio",
        ],
    }
}

/// Graph, field and level-set components of one replica.
pub fn sample_components(n: usize, d: usize, h: f64, rng: &mut ChaCha8Rng) -> Result<(Multigraph, ComponentDecomposition)> {
    let g = generate_configuration_model(n, d, rng)?;
    let field = sample_exact_sparse(&g, rng)?;
    let s = level_set(&field.values, h);
    let cd = components(&g, &s, h)?;
    Ok((g, cd))
}

/// Tree-side law of the radius-k ball, shared by all local-limit replicas.
struct Context {
    tree_ball: Option<BTreeMap<String, f64>>,
}

fn total_variation(counts: &BTreeMap<String, usize>, law: &BTreeMap<String, f64>) -> f64 {
    let total: usize = counts.values().sum();
    if total == 0 {
        return f64::NAN;
    }
    let mut keys: Vec<&String> = counts.keys().chain(law.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| {
            let p = counts.get(k).copied().unwrap_or(0) as f64 / total as f64;
            let q = law.get(k).copied().unwrap_or(0.0);
            (p - q).abs()
        })
        .sum::<f64>()
}

/// One replica: the row values plus the census when the kind produces one.
fn run_replica(
    cfg: &ExperimentConfig,
    n: usize,
    ctx: &Context,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Option<BTreeMap<String, usize>>)> {
    let d = cfg.d;
    let h = cfg.h;
    let nf = n as f64;
    let log_n = nf.ln();
    if cfg.kind == ExperimentKind::GreenValidation {
        return Ok((green_validation_replica(cfg, n, rng)?, None));
    }
    let (g, cd) = sample_components(n, d, h, rng)?;
    let c1: &[usize] = cd.largest().unwrap_or(&[]);
    let c1_size = c1.len() as f64;
    let row = match cfg.kind {
        ExperimentKind::GiantFraction => {
            let in_level: usize = cd.sizes().iter().sum();
            vec![c1_size / nf, cd.size(1) as f64, cd.components.len() as f64, in_level as f64 / nf]
        }
        ExperimentKind::SecondComponent => {
            let c2 = cd.size(1) as f64;
            vec![c1_size / nf, c2, c2 / log_n]
        }
        ExperimentKind::CoreKernel => {
            let core = two_core(&g, c1)?;
            let k = kernel(&core)?;
            vec![c1_size / nf, core.vertex_count() as f64 / nf, k.vertices.len() as f64 / nf]
        }
        ExperimentKind::Diameter => {
            let diam = if c1.is_empty() { 0.0 } else { diameter(&g, c1)? as f64 };
            vec![c1_size, diam, diam / log_n]
        }
        ExperimentKind::TypicalDistance => {
            if c1.is_empty() {
                vec![0.0, f64::NAN, f64::NAN]
            } else {
                let dist: Vec<f64> = sample_typical_distances(&g, c1, cfg.thresholds.pairs, rng)?
                    .into_iter()
                    .map(|x| x as f64)
                    .collect();
                vec![c1_size, median(&dist), mean(&dist)]
            }
        }
        ExperimentKind::LocalLimit => {
            let census = if c1.is_empty() {
                BTreeMap::new()
            } else {
                ball_census(&g, c1, cfg.thresholds.ball_radius)?
            };
            let law = ctx.tree_ball.as_ref().expect("tree law computed for local limit");
            let total: usize = census.values().sum();
            let non_tree = census.get(NON_TREE_KEY).copied().unwrap_or(0) as f64 / total.max(1) as f64;
            let tv = total_variation(&census, law);
            return Ok((vec![c1_size, tv, non_tree], Some(census)));
        }
        ExperimentKind::TreeEstimates | ExperimentKind::GreenValidation => unreachable!(),
    };
    Ok((row, None))
}

/// Conditioning checks on one graph. For random connected sets `A` whose
/// `r`-neighbourhood is a tree with `r >= min_tree_radius`, and each `y`
/// adjacent to `A`, the exact conditional law of `psi(y)` given `psi_A` is
/// compared with the tree prediction: mean `psi(parent)/(d-1)` and variance
/// `d/(d-1)`, with tolerance `10 (d-1)^{-r}` (times `max |psi_A|` for the mean).
fn green_validation_replica(cfg: &ExperimentConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let d = cfg.d;
    let t = &cfg.thresholds;
    let g = generate_configuration_model(n, d, rng)?;
    let field = sample_exact_sparse(&g, rng)?;
    let cycle_radius = (0.25 * (n as f64).ln() / ((d - 1) as f64).ln()).floor() as usize;
    let max_cycles = (0..n)
        .map(|x| ball(&g, &[x], cycle_radius).map(|b| b.tree_excess()))
        .collect::<gffperc_core::Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(0);
    if !g.is_connected() {
        return Ok(vec![max_cycles as f64, 0.0, 0.0, 0.0, 0.0, f64::NAN, f64::NAN]);
    }
    let solver = GreenSolver::new(&g)?;
    let dm1 = (d - 1) as f64;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (mut pairs, mut mean_ok, mut var_ok, mut both_ok) = (0usize, 0usize, 0usize, 0usize);
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for x in order {
        if pairs >= t.pairs_per_graph {
            break;
        }
        // grow a random connected set around x
        let size = rng.random_range(1..=t.max_target_size.max(1));
        let mut set = vec![x];
        while set.len() < size {
            let v = set[rng.random_range(0..set.len())];
            let w = g.neighbors(v).nth(rng.random_range(0..d)).expect("d neighbours");
            if !set.contains(&w) {
                set.push(w);
            }
        }
        // tree-like radius of the set, up to a cap
        let mut r = 0;
        while r < t.min_tree_radius + 6 && ball(&g, &set, r + 1)?.tree_excess() == 0 {
            r += 1;
        }
        if r < t.min_tree_radius {
            continue;
        }
        let mut target = set.clone();
        target.sort_unstable();
        let values: Vec<f64> = target.iter().map(|&a| field.values[a]).collect();
        let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 10.0 * dm1.powi(-(r as i32));
        for &a in &set {
            for y in g.neighbors(a) {
                if target.binary_search(&y).is_ok() || pairs >= t.pairs_per_graph {
                    continue;
                }
                let weights = conditioning_weights(&g, &target, y)?;
                let col = solver.column(y)?;
                let law = conditional_law_from_weights(&weights, &col, &values, y)?;
                let mean_err = (law.mean - field.values[a] / dm1).abs() / (tol * max_abs.max(f64::MIN_POSITIVE));
                let var_err = (law.variance - d as f64 / dm1).abs() / tol;
                pairs += 1;
                mean_ok += (mean_err <= 1.0) as usize;
                var_ok += (var_err <= 1.0) as usize;
                both_ok += (mean_err <= 1.0 && var_err <= 1.0) as usize;
                worst_mean = worst_mean.max(mean_err);
                worst_var = worst_var.max(var_err);
            }
        }
    }
    Ok(vec![
        max_cycles as f64,
        pairs as f64,
        mean_ok as f64,
        var_ok as f64,
        both_ok as f64,
        worst_mean,
        worst_var,
    ])
}

fn run_inner(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let columns: Vec<String> = columns_for(cfg.kind).iter().map(|s| s.to_string()).collect();
    if cfg.kind == ExperimentKind::TreeEstimates {
        return run_tree_estimates(cfg, columns);
    }
    let ctx = Context {
        tree_ball: if cfg.kind == ExperimentKind::LocalLimit {
            let run = tree_run(cfg, cfg.h, "ball");
            Some(conditioned_ball_distribution(&run, cfg.thresholds.ball_radius)?.probabilities)
        } else {
            None
        },
    };
    let mut rows = Vec::new();
    let mut census = Vec::new();
    let mut groups = Vec::new();
    for &n in &cfg.n_grid {
        let x = n as f64;
        let out: Vec<(u64, Vec<f64>, Option<BTreeMap<String, usize>>)> = (0..cfg.replicas)
            .into_par_iter()
            .map(|i| {
                let seed = replica_seed_for(cfg, x, i);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                run_replica(cfg, n, &ctx, &mut rng).map(|(v, c)| (seed, v, c))
            })
            .collect::<Result<_>>()?;
        let mut pooled: BTreeMap<String, usize> = BTreeMap::new();
        for (i, (seed, values, c)) in out.into_iter().enumerate() {
            if let Some(c) = c {
                for (k, v) in c {
                    *pooled.entry(k).or_insert(0) += v;
                }
            }
            rows.push(ReplicaRow {
                x,
                replica: i,
                seed,
                values,
            });
        }
        if let Some(law) = &ctx.tree_ball {
            census.push(CensusTable {
                n,
                total_variation: total_variation(&pooled, law),
                graph_counts: pooled,
                tree_probabilities: law.clone(),
            });
        }
        groups.push(group_summary(x, &columns, &rows));
    }
    let mut summary = Summary {
        kind: cfg.kind,
        x_name: "n".into(),
        groups,
        fits: BTreeMap::new(),
        extras: BTreeMap::new(),
    };
    add_kind_extras(cfg, &rows, &columns, &census, &mut summary)?;
    Ok(ExperimentResult {
        provenance: provenance(cfg),
        config: cfg.clone(),
        columns,
        rows,
        summary,
        census,
    })
}

/// Mean, standard error and median of each column over the rows at `x`,
/// ignoring NaN entries.
pub fn group_summary(x: f64, columns: &[String], rows: &[ReplicaRow]) -> GroupSummary {
    let at: Vec<&ReplicaRow> = rows.iter().filter(|r| r.x == x).collect();
    let stats = columns
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let xs: Vec<f64> = at.iter().map(|r| r.values[j]).filter(|v| !v.is_nan()).collect();
            (c.clone(), ObservableStats::of(&xs))
        })
        .collect();
    GroupSummary {
        x,
        replicas: at.len(),
        stats,
    }
}

fn fit_groups(summary: &Summary, column: &str, use_median: bool) -> Option<LinearFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = summary
        .groups
        .iter()
        .filter_map(|g| {
            let s = g.stats.get(column)?;
            let y = if use_median { s.median } else { s.mean };
            y.is_finite().then_some((g.x.ln(), y))
        })
        .unzip();
    linear_fit(&xs, &ys)
}

fn add_kind_extras(
    cfg: &ExperimentConfig,
    rows: &[ReplicaRow],
    columns: &[String],
    census: &[CensusTable],
    summary: &mut Summary,
) -> Result<()> {
    let col = |name: &str| columns.iter().position(|c| c == name).expect("known column");
    let per_n = |f: &dyn Fn(&GroupSummary) -> f64| -> Value {
        Value::Object(summary.groups.iter().map(|g| (format!("{}", g.x), json!(f(g)))).collect())
    };
    match cfg.kind {
        ExperimentKind::GiantFraction => {
            let e = estimate_eta(&tree_run(cfg, cfg.h, "eta"))?;
            summary.extras.insert("tree_eta".into(), json!(e.point_estimate));
            summary.extras.insert("tree_eta_std_error".into(), json!(e.std_error));
        }
        ExperimentKind::SecondComponent => {
            if let Some(f) = fit_groups(summary, "c2_size", true) {
                summary.fits.insert("c2_median_vs_log_n".into(), f);
            }
            let ratio = per_n(&|g| g.stats["c2_size"].median / g.x.ln());
            summary.extras.insert("median_c2_over_log_n".into(), ratio);
        }
        ExperimentKind::CoreKernel => {
            let e = estimate_core_kernel_probs(&tree_run(cfg, cfg.h, "core-kernel"))?;
            let (se_eta, se_k1, se_k2) = e.std_errors();
            summary.extras.insert(
                "tree".into(),
                json!({"eta": e.eta, "k1": e.k1, "k2": e.k2, "eta_std_error": se_eta,
                       "k1_std_error": se_k1, "k2_std_error": se_k2, "replicas": e.replicas}),
            );
        }
        ExperimentKind::Diameter => {
            if let Some(f) = fit_groups(summary, "diameter", false) {
                summary.fits.insert("diameter_vs_log_n".into(), f);
            }
        }
        ExperimentKind::TypicalDistance => {
            let lam = estimate_lambda(&tree_run(cfg, cfg.h, "lambda"))?;
            summary.extras.insert("tree_lambda".into(), json!(lam.lambda));
            summary.extras.insert("tree_lambda_std_error".into(), json!(lam.std_error));
            summary
                .extras
                .insert("log_lambda_n".into(), per_n(&|g| g.x.ln() / lam.lambda.ln()));
            let j = col("median_distance");
            let med = per_n(&|g| {
                let xs: Vec<f64> = rows.iter().filter(|r| r.x == g.x).map(|r| r.values[j]).collect();
                median(&xs) / (g.x.ln() / lam.lambda.ln())
            });
            summary.extras.insert("median_over_log_lambda_n".into(), med);
        }
        ExperimentKind::LocalLimit => {
            let tv: serde_json::Map<String, Value> =
                census.iter().map(|c| (c.n.to_string(), json!(c.total_variation))).collect();
            summary.extras.insert("pooled_total_variation".into(), Value::Object(tv));
        }
        ExperimentKind::GreenValidation => {
            let (p, b) = (col("pairs"), col("both_ok"));
            let frac = per_n(&|g| {
                let at = rows.iter().filter(|r| r.x == g.x);
                let (pairs, ok) = at.fold((0.0, 0.0), |(s, o), r| (s + r.values[p], o + r.values[b]));
                ok / pairs
            });
            summary.extras.insert("pass_fraction".into(), frac);
        }
        ExperimentKind::TreeEstimates => {}
    }
    Ok(())
}

fn run_tree_estimates(cfg: &ExperimentConfig, columns: Vec<String>) -> Result<ExperimentResult> {
    let levels = if cfg.thresholds.h_grid.is_empty() {
        vec![cfg.h]
    } else {
        cfg.thresholds.h_grid.clone()
    };
    let mut rows = Vec::new();
    for &h in &levels {
        let label = format!("h={h}");
        let run = tree_run(cfg, h, &label);
        let eta = estimate_eta(&run)?;
        let (lambda, lambda_se) = match estimate_lambda(&run) {
            Ok(l) => (l.lambda, l.std_error),
            Err(gffperc_core::Error::NoSurvivors) => (f64::NAN, f64::NAN),
            Err(e) => return Err(e.into()),
        };
        let ck = estimate_core_kernel_probs(&run)?;
        let (_, se1, se2) = ck.std_errors();
        rows.push(ReplicaRow {
            x: h,
            replica: 0,
            seed: run.seed,
            values: vec![eta.point_estimate, eta.std_error, lambda, lambda_se, ck.k1, se1, ck.k2, se2],
        });
    }
    let groups = levels.iter().map(|&h| group_summary(h, &columns, &rows)).collect();
    Ok(ExperimentResult {
        provenance: provenance(cfg),
        config: cfg.clone(),
        columns,
        rows,
        summary: Summary {
            kind: cfg.kind,
            x_name: "h".into(),
            groups,
            fits: BTreeMap::new(),
            extras: BTreeMap::new(),
        },
        census: Vec::new(),
    })
}
