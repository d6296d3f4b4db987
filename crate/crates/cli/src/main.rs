mod commands;
mod io;
mod pipeline;
mod sim;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};
use leanforge::build::{summarize, BuildReport, ReportRecord};
use leanforge::canon::state_key_lossy;
use leanforge::graph::{topo_waves, GraphRecord, ImportGraph};
use leanforge::scan::ScanRecord;
use leanforge::search::ExpansionBudget;
use leanforge::trace::{TheoremRecord, NO_GOALS};
use serde::{Deserialize, Serialize};

use crate::commands::{SearchBackend, SearchGenerator};
use crate::io::{read_jsonl, write_json, write_jsonl, write_text};
use crate::pipeline::Stage;

#[derive(Parser)]
#[command(name = "leanforge", version, about = "Build, trace and search over a corpus of Lean 4 repositories")]
struct Cli {
    /// Print human-readable tables where a command has one.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify every repository directly under ROOT.
    Scan {
        root: PathBuf,
        /// Toolchains older than this are deprecated.
        #[arg(long)]
        deprecated_cutoff: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Import graph of one source root.
    Graph {
        root: PathBuf,
        /// Directory of standalone files, named by content hash.
        #[arg(long)]
        isolated: Option<PathBuf>,
        /// Print the build waves instead of the graph.
        #[arg(long)]
        waves: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compile every module of a graph in dependency order.
    Build {
        graph: PathBuf,
        /// Command run per module; `{path}` and `{module}` are substituted.
        #[arg(long, default_value = "lake env lean {path}")]
        cmd: String,
        #[arg(long, env = "LEANFORGE_WORKERS")]
        workers: Option<usize>,
        /// Per-module timeout in seconds.
        #[arg(long, default_value_t = 600)]
        timeout: u64,
        /// Directory the graph's paths are relative to.
        #[arg(long, default_value = ".")]
        root: PathBuf,
        /// Zero the wall times so reports compare byte for byte.
        #[arg(long)]
        no_timing: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace the theorems of every module a build report marks succeeded.
    Extract {
        report: PathBuf,
        /// Backend command, started once per file.
        #[arg(long)]
        backend: String,
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long, default_value = "")]
        url: String,
        #[arg(long, default_value = "")]
        commit: String,
        /// The backend's final-state text.
        #[arg(long, default_value = NO_GOALS)]
        sentinel: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Canonical form and digest of proof states.
    Canon {
        /// JSON lines, each a state string or an object with a `state` field.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Best-first proof search.
    Search {
        /// Theorem names, one per line.
        #[arg(long)]
        theorems: PathBuf,
        /// Backend command, started once per attempt.
        #[arg(long, conflicts_with = "world")]
        backend: Option<String>,
        /// Simulated world, used in-process.
        #[arg(long)]
        world: Option<PathBuf>,
        /// `builtin` (needs --world) or a generator command; `{seed}` is substituted.
        #[arg(long, default_value = "builtin")]
        generator: String,
        /// Candidates per expansion.
        #[arg(long, default_value_t = 32)]
        s: usize,
        /// Maximum expansions.
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        attempts: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long)]
        no_dedup: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prompt files and corpus statistics from extracted records.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Cumulative pass rates over merged runs.
    Eval {
        /// Matrix files or outcome records, merged in order.
        #[arg(long, num_args = 1.., required = true)]
        outcomes: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run stages from a TOML config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
    },
    #[command(hide = true)]
    SimBackend {
        #[arg(long)]
        world: PathBuf,
    },
    #[command(hide = true)]
    SimCompile { path: PathBuf },
    #[command(hide = true)]
    SimGenerator {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        count: usize,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Proofstep prompts from valid records, split by file.
    Build {
        #[arg(long)]
        records: PathBuf,
        /// Base name; the split name goes before the extension.
        #[arg(long)]
        out_prompts: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.98,0.02")]
        split: Vec<f64>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// End the DECL and GOAL lines with a space.
        #[arg(long)]
        legacy_trailing_space: bool,
    },
    /// Corpus statistics.
    Stats {
        #[arg(long)]
        records: PathBuf,
        /// Tokenizer command; the builtin word/punctuation count otherwise.
        #[arg(long)]
        tokenizer: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StateLine {
    Text(String),
    Object { state: String },
}

#[derive(Serialize)]
struct CanonLine {
    raw: String,
    canonical_text: String,
    digest: String,
    canonical: bool,
}

fn run(cli: Cli) -> Result<ExitCode> {
    let pretty = cli.pretty;
    match cli.command {
        Command::Scan { root, deprecated_cutoff, out } => {
            let reports = commands::scan(&root, deprecated_cutoff.as_deref())?;
            let records: Vec<ScanRecord> = reports.iter().map(ScanRecord::from).collect();
            if pretty {
                let mut text = String::new();
                for r in &records {
                    let tc = r.toolchain.as_deref().unwrap_or("-");
                    text.push_str(&format!("{:<30} {:<20} {:>6}  {tc}\n", r.name, r.classification.label(), r.keyword_theorems));
                }
                write_text(out.as_deref(), &text)?;
            } else {
                write_jsonl(out.as_deref(), &records)?;
            }
        }
        Command::Graph { root, isolated, waves, out } => {
            let graph = commands::project_graph(&root, isolated.as_deref())?;
            if waves {
                write_jsonl(out.as_deref(), &topo_waves(&graph)?)?;
            } else {
                write_jsonl(out.as_deref(), &graph.to_records())?;
            }
        }
        Command::Build { graph, cmd, workers, timeout, root, no_timing, out } => {
            let records: Vec<GraphRecord> = read_jsonl(&graph)?;
            let graph = ImportGraph::from_records(records)?;
            let workers = workers.unwrap_or_else(commands::default_workers);
            let mut report = commands::build(&graph, &cmd, &root, workers, Duration::from_secs(timeout))?;
            if no_timing {
                report = report.without_timing();
            }
            write_jsonl(out.as_deref(), &report.to_records())?;
            let summary = summarize(&report)?;
            if pretty {
                eprint!("{}", summary.table);
            } else {
                eprintln!("{}", summary.totals);
            }
            if summary.totals.failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Extract { report, backend, root, url, commit, sentinel, out } => {
            let records: Vec<ReportRecord> = read_jsonl(&report)?;
            BuildReport::from_records(records.clone())?;
            let ex = commands::extract(&records, &root, &backend, &|_| url.clone(), &commit, &sentinel)?;
            write_jsonl(out.as_deref(), &ex.records)?;
            let valid = ex.records.iter().filter(|r| r.is_valid()).count();
            eprintln!("{} records, {} valid, {} flagged", ex.records.len(), valid, ex.records.len() - valid);
            for (file, e) in &ex.failures {
                eprintln!("extraction failed for {file}: {e}");
            }
        }
        Command::Canon { input, out } => {
            let lines: Vec<StateLine> = read_jsonl(&input)?;
            let rows: Vec<CanonLine> = lines
                .into_iter()
                .map(|l| {
                    let raw = match l {
                        StateLine::Text(s) | StateLine::Object { state: s } => s,
                    };
                    let (key, canonical) = state_key_lossy(&raw);
                    CanonLine { digest: key.hex(), canonical_text: key.canonical_text, raw, canonical }
                })
                .collect();
            write_jsonl(out.as_deref(), &rows)?;
        }
        Command::Search { theorems, backend, world, generator, s, k, attempts, first_seed, no_dedup, out } => {
            let names = commands::read_theorem_list(&theorems)?;
            let world = world.as_deref().map(sim::load_world).transpose()?;
            let backend = match (backend, &world) {
                (Some(cmd), _) => SearchBackend::Command(cmd),
                (None, Some(w)) => SearchBackend::World(w.clone()),
                (None, None) => return Err(anyhow!("give --backend or --world")),
            };
            let generator = if generator == "builtin" {
                SearchGenerator::Builtin(world.ok_or_else(|| anyhow!("the builtin generator needs --world"))?)
            } else {
                SearchGenerator::Command(generator)
            };
            let budget = ExpansionBudget::new(s, k).ok_or_else(|| anyhow!("--s and --k must be positive"))?;
            let seeds: Vec<u64> = (first_seed..first_seed + attempts).collect();
            let outcomes = commands::search(&names, &backend, &generator, budget, !no_dedup, &seeds)?;
            write_jsonl(out.as_deref(), &outcomes)?;
        }
        Command::Dataset(DatasetCommand::Build { records, out_prompts, split, seed, legacy_trailing_space }) => {
            let records: Vec<TheoremRecord> = read_jsonl(&records)?;
            let splits = commands::prompts(&records, &split, seed, legacy_trailing_space)?;
            for (name, prompts) in &splits.splits {
                let path = commands::split_path(&out_prompts, name);
                write_jsonl(Some(&path), prompts)?;
                eprintln!("{name}: {} prompts -> {}", prompts.len(), path.display());
            }
            eprintln!("{} invalid records skipped", splits.skipped);
        }
        Command::Dataset(DatasetCommand::Stats { records, tokenizer, out }) => {
            let records: Vec<TheoremRecord> = read_jsonl(&records)?;
            let stats = commands::stats(&records, tokenizer.as_deref())?;
            if pretty {
                write_text(out.as_deref(), &commands::stats_table(&stats))?;
            } else {
                write_json(out.as_deref(), &stats)?;
            }
        }
        Command::Eval { outcomes, k, out } => {
            let matrices = outcomes.iter().map(|p| commands::load_matrix(p)).collect::<Result<Vec<_>>>()?;
            let report = commands::eval(&matrices, &k)?;
            if pretty {
                write_text(out.as_deref(), &commands::eval_table(&report))?;
            } else {
                write_json(out.as_deref(), &report)?;
            }
        }
        Command::Pipeline { config, stages } => {
            let config = pipeline::Config::load(&config)?;
            init_logging(config.log_level.as_deref().unwrap_or("warn"));
            for (stage, summary) in pipeline::run(&config, &stages)? {
                println!("{stage}: {summary}");
            }
        }
        Command::SimBackend { world } => sim::backend(&world)?,
        Command::SimCompile { path } => return Ok(ExitCode::from(sim::compile(Path::new(&path)) as u8)),
        Command::SimGenerator { world, seed, count } => sim::generator(&world, seed, count)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn init_logging(default: &str) {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("LEANFORGE_LOG", default)).try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if !matches!(cli.command, Command::Pipeline { .. }) {
        init_logging("warn");
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
