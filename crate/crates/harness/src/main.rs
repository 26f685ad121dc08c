use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gffperc_core::exploration::{
    estimate_giant_fraction, explore_fresh, write_outcomes_jsonl, ExplorationMode, ExplorationParams,
};
use gffperc_core::gff::{sample_exact, sample_exact_sparse, sample_sequential, Field, GaussianReservoir};
use gffperc_core::green::green_zero_average;
use gffperc_core::levelset::{components, summarize};
use gffperc_core::multigraph::{generate_configuration_model, generate_simple, good_graph_report, GoodGraphParams, Multigraph};
use gffperc_core::seed::{derive_seed, replica_seed};
use gffperc_core::tree_process::{
    estimate_core_kernel_probs, estimate_eta, estimate_lambda, finite_cluster_tail, TreeRun,
};
use gffperc_harness::{run_and_write, sweep, ConfigOverrides, ExperimentConfig, ExperimentKind, HarnessError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "gffperc", version, about = "Level-set percolation of the Gaussian free field on random regular graphs")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; results go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a configuration-model multigraph.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        d: usize,
        /// Resample until the graph has no loops or multi-edges.
        #[arg(long)]
        simple: bool,
        #[arg(long, default_value_t = 1000)]
        max_attempts: usize,
    },
    /// Sample the zero-average free field on a graph.
    Sample {
        /// Graph file; a fresh graph is generated when absent.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, value_enum, default_value_t = Method::Sparse)]
        method: Method,
    },
    /// Level-set components, 2-core, kernel and diameter of a sample.
    Analyze {
        #[arg(long)]
        graph: PathBuf,
        /// Field CSV with header `vertex,value`.
        #[arg(long)]
        field: PathBuf,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        h: f64,
        /// Also measure the expander and local Green-function conditions (dense, small n).
        #[arg(long)]
        good: bool,
    },
    /// Tree-side estimates at one level.
    Tree {
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        h: f64,
        #[arg(long, default_value_t = 40)]
        generations: usize,
        #[arg(long, default_value_t = 20_000)]
        replicas: usize,
        #[arg(long, default_value_t = 2_000)]
        max_size: usize,
        /// Also report the finite-cluster tail at these sizes.
        #[arg(long, value_delimiter = ',')]
        tail: Vec<usize>,
    },
    /// Lazy explorations on fresh configuration-model graphs.
    Explore {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        h: f64,
        #[arg(long, default_value_t = 1000)]
        replicas: usize,
        #[arg(long, default_value_t = 0.0)]
        kappa: f64,
        #[arg(long, default_value_t = 1.25)]
        log_power: f64,
        /// Growth rate for the generation cap.
        #[arg(long, default_value_t = 1.385)]
        lambda: f64,
    },
    /// Run one configured experiment.
    Experiment(ExperimentArgs),
    /// Run an experiment once per value of one parameter.
    Sweep {
        #[command(flatten)]
        base: ExperimentArgs,
        /// `h`, `d`, `n`, `replicas`, `seed` or `thresholds.<field>`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<String>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    kind: Option<String>,
    /// Vertex counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    h: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    /// Sparse solve driven by one normal per edge.
    Sparse,
    /// Spectral square root of the dense Green matrix.
    Dense,
    /// Vertex-by-vertex conditional construction (dense, small n).
    Sequential,
}

fn emit(out: &Option<PathBuf>, file: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(file), text)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn read_field(path: &Path) -> Result<Field> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || HarnessError::Config(format!("{}: malformed line {}", path.display(), i + 1));
        let (v, x) = line.split_once(',').ok_or_else(bad)?;
        let v: usize = v.trim().parse().map_err(|_| bad())?;
        if v != values.len() {
            return Err(bad());
        }
        values.push(x.trim().parse().map_err(|_| bad())?);
    }
    Ok(Field::new(values, path.display().to_string()))
}

fn experiment_config(cli: &Cli, args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&ConfigOverrides {
        kind: args.kind.as_deref().map(str::parse::<ExperimentKind>).transpose()?,
        d: args.d,
        h: args.h,
        n_grid: (!args.n.is_empty()).then(|| args.n.clone()),
        replicas: args.replicas,
        seed: cli.seed,
        out: cli.out.clone(),
        threads: cli.threads,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    if let (Some(t), false) = (cli.threads, matches!(cli.command, Command::Experiment(_) | Command::Sweep { .. })) {
        if t == 0 {
            return Err(HarnessError::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
    }
    match &cli.command {
        Command::Generate {
            n,
            d,
            simple,
            max_attempts,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["graph"]));
            let g = if *simple {
                generate_simple(*n, *d, *max_attempts, &mut rng)?
            } else {
                generate_configuration_model(*n, *d, &mut rng)?
            };
            emit(&cli.out, "graph.txt", &g.to_text())
        }
        Command::Sample { graph, n, d, method } => {
            let g = match (graph, n) {
                (Some(p), _) => Multigraph::from_text(&fs::read_to_string(p)?)?,
                (None, Some(n)) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["graph"]));
                    let g = generate_configuration_model(*n, *d, &mut rng)?;
                    if let Some(dir) = &cli.out {
                        fs::create_dir_all(dir)?;
                        fs::write(dir.join("graph.txt"), g.to_text())?;
                    }
                    g
                }
                (None, None) => return Err(HarnessError::Config("sample needs --graph or --n".into())),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["field"]));
            let field = match method {
                Method::Sparse => sample_exact_sparse(&g, &mut rng)?,
                Method::Dense => {
                    let green = g.is_connected().then(|| green_zero_average(&g)).transpose()?;
                    sample_exact(&g, green.as_ref(), &mut rng)?
                }
                Method::Sequential => {
                    let green = green_zero_average(&g)?;
                    let order: Vec<usize> = (0..g.n()).collect();
                    let mut reservoir = GaussianReservoir::new(derive_seed(seed, &["field"]));
                    sample_sequential(&g, &green, &order, &mut reservoir)?
                }
            };
            let mut buf = Vec::new();
            field.write_csv(&mut buf)?;
            emit(&cli.out, "field.csv", &String::from_utf8_lossy(&buf))
        }
        Command::Analyze { graph, field, h, good } => {
            let g = Multigraph::from_text(&fs::read_to_string(graph)?)?;
            let f = read_field(field)?;
            if f.len() != g.n() {
                return Err(gffperc_core::Error::DimensionMismatch {
                    expected: g.n(),
                    found: f.len(),
                }
                .into());
            }
            let cd = components(&g, &f.level_set(*h), *h)?;
            let summary = summarize(&g, &cd)?;
            let mut report = json!({ "n": g.n(), "d": g.d(), "components": cd.components.len(), "summary": summary });
            if *good {
                let green = green_zero_average(&g)?;
                let r = good_graph_report(&g, &green, GoodGraphParams::defaults_for(g.n(), g.d()))?;
                report["good_graph"] = json!({
                    "spectral_gap": r.spectral_gap,
                    "max_cycles_in_log_ball": r.max_cycles_in_log_ball,
                    "green_diag_error": r.green_diag_error,
                    "green_offdiag_error": r.green_offdiag_error,
                    "tree_like_vertices": r.tree_like_vertices,
                });
            }
            emit(&cli.out, "analysis.json", &(serde_json::to_string_pretty(&report)? + "\n"))
        }
        Command::Tree {
            d,
            h,
            generations,
            replicas,
            max_size,
            tail,
        } => {
            let run = TreeRun {
                max_size: *max_size,
                ..TreeRun::new(*d, *h, *generations, *replicas, seed)
            };
            let eta = estimate_eta(&run)?;
            let lambda = estimate_lambda(&run).ok();
            let ck = estimate_core_kernel_probs(&run)?;
            let mut report = json!({ "run": run, "eta": eta, "lambda": lambda, "core_kernel": ck });
            if !tail.is_empty() {
                let curve = finite_cluster_tail(&run, tail)?;
                report["tail"] = json!({ "curve": curve, "log_fit": curve.log_fit() });
            }
            emit(&cli.out, "tree.json", &(serde_json::to_string_pretty(&report)? + "\n"))
        }
        Command::Explore {
            n,
            d,
            h,
            replicas,
            kappa,
            log_power,
            lambda,
        } => {
            let params = ExplorationParams {
                kappa: *kappa,
                log_power: *log_power,
                lambda: *lambda,
            };
            let estimate = estimate_giant_fraction(*n, *d, *h, &params, *replicas, seed)?;
            if let Some(dir) = &cli.out {
                fs::create_dir_all(dir)?;
                let outcomes = (0..*replicas)
                    .map(|i| explore_fresh(*n, *d, *h, &params, ExplorationMode::Upper, replica_seed(seed, "explore-upper", i)))
                    .collect::<gffperc_core::Result<Vec<_>>>()?;
                let file = fs::File::create(dir.join("outcomes.jsonl"))?;
                write_outcomes_jsonl(&outcomes, false, std::io::BufWriter::new(file))?;
            }
            emit(&cli.out, "summary.json", &(serde_json::to_string_pretty(&estimate)? + "\n"))
        }
        Command::Experiment(args) => {
            let cfg = experiment_config(&cli, args)?;
            let result = run_and_write(&cfg)?;
            if cfg.out.is_none() {
                emit(&None, "", &(serde_json::to_string_pretty(&result)? + "\n"))?;
            }
            Ok(())
        }
        Command::Sweep { base, param, values } => {
            let cfg = experiment_config(&cli, base)?;
            let results = sweep(&cfg, param, values)?;
            let table: Vec<_> = values
                .iter()
                .zip(&results)
                .map(|(v, r)| json!({ "value": v, "config_hash": r.provenance.config_hash, "summary": r.summary }))
                .collect();
            if cfg.out.is_none() {
                emit(&None, "", &(serde_json::to_string_pretty(&table)? + "\n"))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = json!({ "error": "usage", "message": e.to_string().trim() });
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = json!({ "error": e.code(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
