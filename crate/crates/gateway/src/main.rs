use std::io::Write;
use std::path::{Path, PathBuf};

use anchorsim_core::engine::replay::{replay, ReplayOptions};
use anchorsim_core::profiles::{default_priors, generate_pool, GenerationConfig, TemplateTextProvider};
use anchorsim_core::sampling::{sample, SamplingConfig};
use anchorsim_core::scenario::FIXTURES;
use anchorsim_core::socialnet::{build_network, export, identify_kols, NetworkConfig};
use anchorsim_gateway::config::{RunConfig, ScenarioSpec};
use anchorsim_gateway::persist;
use anchorsim_gateway::pipeline::{self, DiscourseDocument};
use anchorsim_gateway::service;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "anchorsim", version, about = "Memory-anchored opinion dynamics simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation to completion and persist its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the metrics history from an event log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Skip the causal-sum consistency check.
        #[arg(long)]
        no_verify: bool,
        /// Fail unless the rebuilt history equals this metrics file.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Serve the HTTP control API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Base directory for relative output paths in submitted configs.
        #[arg(long)]
        base_dir: Option<PathBuf>,
    },
    /// Compare rho = 0 against anchored runs over a seed set.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = (0..10).collect::<Vec<u64>>())]
        seeds: Vec<u64>,
    },
    /// Compute tick metrics from a snapshot or an event log.
    Metrics(MetricsArgs),
    /// Divergence report between two discourse distribution documents.
    CompareDiscourse { p: PathBuf, q: PathBuf },
    #[command(subcommand)]
    Profiles(ProfilesCommand),
    #[command(subcommand)]
    Network(NetworkCommand),
    /// Select a cohort from a pool.
    Sample {
        #[arg(long)]
        pool: PathBuf,
        /// Fixture name, scenario document path, or free text.
        #[arg(long)]
        scenario: String,
        /// Sampling config (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trust graph for snowball sampling.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct MetricsArgs {
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ProfilesCommand {
    /// Generate a candidate pool.
    Generate {
        /// Generation config (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum NetworkCommand {
    /// Build a trust graph over a pool.
    Build {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value = "default")]
        case: String,
        /// Network config (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the node/edge export for graph views.
        #[arg(long)]
        export: Option<PathBuf>,
        /// Also write the construction log.
        #[arg(long)]
        construction_log: Option<PathBuf>,
    },
}

fn emit(line: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        r => Ok(r?),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    emit(&serde_json::to_string_pretty(value)?)
}

fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn scenario_arg(s: &str) -> ScenarioSpec {
    if Path::new(s).is_file() {
        ScenarioSpec::File(s.into())
    } else if FIXTURES.contains(&s) {
        ScenarioSpec::Fixture(s.into())
    } else {
        ScenarioSpec::Text(s.into())
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let out = out.or_else(|| cfg.output_dir.clone());
            let outcome = pipeline::run_batch(&cfg, out.as_deref())?;
            let last = outcome.metrics.last().context("run produced no metrics")?;
            if let Some(dir) = &outcome.dir {
                eprintln!("wrote {}", dir.display());
            }
            print_json(last)?;
        }
        Command::Replay { log, no_verify, compare } => {
            let log = persist::load_event_log(&log)?;
            let opts = ReplayOptions {
                verify_causal: !no_verify,
                ..ReplayOptions::default()
            };
            let rebuilt = replay(&log, opts)?;
            if let Some(path) = compare {
                let recorded = persist::load_metrics(&path)?;
                if recorded != rebuilt.metrics {
                    bail!("replayed metrics differ from {}", path.display());
                }
                eprintln!("replay matches {}", path.display());
            }
            for m in &rebuilt.metrics {
                emit(&serde_json::to_string(m)?)?;
            }
        }
        Command::Serve { bind, base_dir } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(&bind, base_dir))?;
        }
        Command::Ablate { config, seeds } => {
            let cfg = RunConfig::load(&config)?;
            let report = pipeline::ablate(&cfg, &seeds)?;
            for v in [&report.base, &report.anchored] {
                eprintln!(
                    "{:<9} polarization {:.4} ± {:.4}  extremization {:.4} ± {:.4}  radicalisation {:.4} ± {:.4}",
                    v.variant,
                    v.polarization_variance.mean,
                    v.polarization_variance.sd,
                    v.extremization.mean,
                    v.extremization.sd,
                    v.mean_radicalisation.mean,
                    v.mean_radicalisation.sd,
                );
            }
            eprintln!("anchored more polarized in {}/{} seeds", report.anchored_wins, report.seeds.len());
            print_json(&report)?;
        }
        Command::Metrics(args) => {
            if let Some(path) = args.snapshot {
                let snap = persist::load_snapshot(&path)?;
                print_json(&pipeline::metrics_from_snapshot(&snap)?)?;
            } else if let Some(path) = args.log {
                let log = persist::load_event_log(&path)?;
                print_json(&replay(&log, ReplayOptions::default())?.metrics)?;
            }
        }
        Command::CompareDiscourse { p, q } => {
            let p: DiscourseDocument = read_json(&p)?;
            let q: DiscourseDocument = read_json(&q)?;
            let rows = pipeline::compare_discourse(&p, &q)?;
            eprintln!("{:<12} {:>9} {:>9} {:>9}", "dimension", "w-jaccard", "cosine", "jsd");
            for r in &rows {
                eprintln!("{:<12} {:>9.4} {:>9.4} {:>9.4}", r.dimension, r.weighted_jaccard, r.cosine_similarity, r.jsd);
            }
            print_json(&rows)?;
        }
        Command::Profiles(ProfilesCommand::Generate { config, seed, out }) => {
            let mut cfg: GenerationConfig = read_toml(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let pool = generate_pool(&cfg, &default_priors(), &TemplateTextProvider { seed: cfg.seed })?;
            if pool.below_floor {
                tracing::warn!(diversity = pool.diversity, "pool is below the diversity floor");
            }
            persist::save_pool(&out, &pool.profiles)?;
            eprintln!(
                "{} profiles, diversity {:.3} after {} rounds",
                pool.profiles.len(),
                pool.diversity,
                pool.rounds
            );
        }
        Command::Network(NetworkCommand::Build {
            pool,
            case,
            config,
            out,
            export: export_path,
            construction_log,
        }) => {
            let pool = persist::load_pool(&pool)?;
            let cfg: NetworkConfig = read_toml(config.as_deref())?;
            let built = build_network(&pool, &case, &cfg)?;
            persist::save_graph(&out, &built.graph)?;
            if let Some(p) = export_path {
                let kols = identify_kols(&pool, cfg.kol_fraction);
                std::fs::write(&p, serde_json::to_string_pretty(&export(&built.graph, &pool, &kols))? + "\n")?;
            }
            if let Some(p) = construction_log {
                std::fs::write(&p, serde_json::to_string_pretty(&built.log)? + "\n")?;
            }
            eprintln!("{} nodes, {} edges", built.graph.nodes.len(), built.graph.edges.len());
        }
        Command::Sample {
            pool,
            scenario,
            config,
            graph,
        } => {
            let pool = persist::load_pool(&pool)?;
            let scenario = pipeline::load_scenario(&scenario_arg(&scenario))?;
            let cfg: SamplingConfig = read_toml(config.as_deref())?;
            let graph = graph.map(|g| persist::load_graph(&g)).transpose()?;
            print_json(&sample(&pool, &scenario, &cfg, graph.as_ref())?)?;
        }
    }
    Ok(())
}
