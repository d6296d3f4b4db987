//! The `pipeline` subcommand: every stage over one corpus, driven by a
//! TOML file. Each stage reads the previous stage's artifact from the
//! workspace directory, so stages can be rerun one at a time.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::ValueEnum;
use leanforge::build::{BuildReport, ReportRecord};
use leanforge::dataset::SplitSpec;
use leanforge::graph::{topo_waves, GraphRecord, ImportGraph};
use leanforge::scan::{ScanRecord, Version};
use leanforge::search::{ExpansionBudget, OutcomeRecord};
use leanforge::trace::{TheoremRecord, NO_GOALS};
use serde::{Deserialize, Serialize};

use crate::commands::{self, SearchBackend, SearchGenerator};
use crate::io::{read_jsonl, write_json, write_jsonl};
use crate::sim::load_world;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Scan,
    Graph,
    Build,
    Extract,
    Dataset,
    Search,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Scan, Stage::Graph, Stage::Build, Stage::Extract, Stage::Dataset, Stage::Search, Stage::Eval];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Where artifacts are written.
    pub workspace: PathBuf,
    /// Directory whose subdirectories are the repositories.
    pub corpus: PathBuf,
    /// Log filter used when `LEANFORGE_LOG` is unset.
    #[serde(default)]
    pub log_level: Option<String>,
    #[serde(default = "default_true")]
    pub record_timing: bool,
    #[serde(default)]
    pub stages: Option<Vec<Stage>>,
    #[serde(default)]
    pub scan: ScanOptions,
    #[serde(default)]
    pub build: BuildOptions,
    #[serde(default)]
    pub extract: ExtractOptions,
    #[serde(default)]
    pub dataset: DatasetOptions,
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default)]
    pub eval: EvalOptions,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanOptions {
    pub deprecated_cutoff: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildOptions {
    /// `{path}` and `{module}` are filled per module; runs in the corpus root.
    pub command: String,
    pub workers: Option<usize>,
    pub timeout_secs: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { command: "lake env lean {path}".into(), workers: None, timeout_secs: 600 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractOptions {
    pub backend: Option<String>,
    /// Prepended to the repo name to form each record's URL.
    pub url_prefix: String,
    pub commit: String,
    pub sentinel: String,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions { backend: None, url_prefix: String::new(), commit: String::new(), sentinel: NO_GOALS.into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetOptions {
    pub split: Vec<f64>,
    pub seed: u64,
    pub legacy_trailing_space: bool,
    pub tokenizer: Option<String>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { split: vec![0.98, 0.02], seed: 7, legacy_trailing_space: false, tokenizer: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchOptions {
    /// Theorem list; defaults to every extracted theorem.
    pub theorems: Option<PathBuf>,
    /// Simulated world for the in-process backend and builtin generator.
    pub world: Option<PathBuf>,
    /// Backend command; defaults to the extract backend.
    pub backend: Option<String>,
    pub generator: String,
    pub s: usize,
    pub k: usize,
    pub attempts: u64,
    pub first_seed: u64,
    pub dedup: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            theorems: None,
            world: None,
            backend: None,
            generator: "builtin".into(),
            s: 32,
            k: 100,
            attempts: 1,
            first_seed: 0,
            dedup: true,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub k: Vec<usize>,
}

impl Config {
    /// Relative paths are taken from the config file's directory.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: Config = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut config.workspace);
        fix(&mut config.corpus);
        if let Some(p) = config.search.theorems.as_mut() {
            fix(p);
        }
        if let Some(p) = config.search.world.as_mut() {
            fix(p);
        }
        let corpus = config.corpus.display().to_string();
        let subst = |s: &mut String| *s = s.replace("{corpus}", &corpus);
        subst(&mut config.build.command);
        config.extract.backend.as_mut().map(subst);
        config.search.backend.as_mut().map(subst);
        subst(&mut config.search.generator);
        config.dataset.tokenizer.as_mut().map(subst);
        config.validate().with_context(|| format!("invalid config {}", path.display()))?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        SplitSpec::from_fractions(&self.dataset.split, self.dataset.seed)?;
        ExpansionBudget::new(self.search.s, self.search.k).ok_or_else(|| anyhow!("search.s and search.k must be positive"))?;
        if self.search.attempts == 0 {
            return Err(anyhow!("search.attempts must be positive"));
        }
        if self.build.workers == Some(0) {
            return Err(anyhow!("build.workers must be positive"));
        }
        if let Some(v) = &self.scan.deprecated_cutoff {
            v.parse::<Version>().map_err(|_| anyhow!("scan.deprecated_cutoff: bad version {v:?}"))?;
        }
        if self.eval.k.contains(&0) {
            return Err(anyhow!("eval.k entries must be positive"));
        }
        Ok(())
    }
}

struct Run<'a> {
    config: &'a Config,
}

impl Run<'_> {
    fn artifact(&self, name: &str) -> PathBuf {
        self.config.workspace.join(name)
    }

    /// Read an earlier stage's artifact or fail naming that stage.
    fn input<T: serde::de::DeserializeOwned>(&self, name: &str, producer: Stage) -> Result<Vec<T>> {
        let path = self.artifact(name);
        if !path.exists() {
            return Err(anyhow!("missing {name}; run the {producer} stage first"));
        }
        read_jsonl(&path)
    }

    fn scan(&self) -> Result<String> {
        let reports = commands::scan(&self.config.corpus, self.config.scan.deprecated_cutoff.as_deref())?;
        let records: Vec<ScanRecord> = reports.iter().map(ScanRecord::from).collect();
        write_jsonl(Some(&self.artifact("scan.jsonl")), &records)?;
        let counts = commands::count_by(&records, |r| r.classification.label());
        let parts: Vec<String> = counts.iter().map(|(k, v)| format!("{v} {k}")).collect();
        Ok(format!("{} repos: {}", records.len(), parts.join(", ")))
    }

    fn graph(&self) -> Result<String> {
        let scans: Vec<ScanRecord> = self.input("scan.jsonl", Stage::Scan)?;
        let graph = commands::corpus_graph(&self.config.corpus, &scans)?;
        write_jsonl(Some(&self.artifact("graph.jsonl")), &graph.to_records())?;
        let waves = topo_waves(&graph)?;
        Ok(format!("{} modules, {} edges, {} waves", graph.len(), graph.edges().len(), waves.len()))
    }

    fn build(&self) -> Result<String> {
        let records: Vec<GraphRecord> = self.input("graph.jsonl", Stage::Graph)?;
        let graph = ImportGraph::from_records(records)?;
        let opts = &self.config.build;
        let workers = std::env::var("LEANFORGE_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
            .or(opts.workers)
            .unwrap_or_else(commands::default_workers);
        let mut report =
            commands::build(&graph, &opts.command, &self.config.corpus, workers, Duration::from_secs(opts.timeout_secs))?;
        if !self.config.record_timing {
            report = report.without_timing();
        }
        write_jsonl(Some(&self.artifact("build.jsonl")), &report.to_records())?;
        Ok(report.totals().to_string())
    }

    fn extract(&self) -> Result<String> {
        let report: Vec<ReportRecord> = self.input("build.jsonl", Stage::Build)?;
        BuildReport::from_records(report.clone())?;
        let opts = &self.config.extract;
        let backend = opts.backend.as_deref().ok_or_else(|| anyhow!("extract.backend is not set"))?;
        let prefix = opts.url_prefix.clone();
        let url_of = move |file: &str| format!("{prefix}{}", file.split('/').next().unwrap_or_default());
        let ex = commands::extract(&report, &self.config.corpus, backend, &url_of, &opts.commit, &opts.sentinel)?;
        write_jsonl(Some(&self.artifact("records.jsonl")), &ex.records)?;
        let valid = ex.records.iter().filter(|r| r.is_valid()).count();
        let mut summary = format!("{} records, {} valid, {} flagged", ex.records.len(), valid, ex.records.len() - valid);
        if !ex.failures.is_empty() {
            let files: Vec<&str> = ex.failures.iter().map(|(f, _)| f.as_str()).collect();
            summary.push_str(&format!("; extraction failed for {}", files.join(", ")));
        }
        Ok(summary)
    }

    fn dataset(&self) -> Result<String> {
        let records: Vec<TheoremRecord> = self.input("records.jsonl", Stage::Extract)?;
        let opts = &self.config.dataset;
        let stats = commands::stats(&records, opts.tokenizer.as_deref())?;
        write_json(Some(&self.artifact("stats.json")), &stats)?;
        let splits = commands::prompts(&records, &opts.split, opts.seed, opts.legacy_trailing_space)?;
        let mut parts = Vec::new();
        for (name, prompts) in &splits.splits {
            write_jsonl(Some(&commands::split_path(&self.artifact("prompts.jsonl"), name)), prompts)?;
            parts.push(format!("{name} {}", prompts.len()));
        }
        Ok(format!("prompts: {}; {} records skipped", parts.join(", "), splits.skipped))
    }

    fn search(&self) -> Result<String> {
        let opts = &self.config.search;
        let theorems = match &opts.theorems {
            Some(path) => commands::read_theorem_list(path)?,
            None => {
                let records: Vec<TheoremRecord> = self.input("records.jsonl", Stage::Extract)?;
                let mut seen = BTreeSet::new();
                records.into_iter().map(|r| r.full_name).filter(|n| seen.insert(n.clone())).collect()
            }
        };
        let world = opts.world.as_deref().map(load_world).transpose()?;
        let backend = match (&opts.backend, &world, &self.config.extract.backend) {
            (Some(cmd), _, _) => SearchBackend::Command(cmd.clone()),
            (None, Some(w), _) => SearchBackend::World(w.clone()),
            (None, None, Some(cmd)) => SearchBackend::Command(cmd.clone()),
            (None, None, None) => return Err(anyhow!("no search backend: set search.backend or search.world")),
        };
        let generator = if opts.generator == "builtin" {
            SearchGenerator::Builtin(world.ok_or_else(|| anyhow!("the builtin generator needs search.world"))?)
        } else {
            SearchGenerator::Command(opts.generator.clone())
        };
        let budget = ExpansionBudget::new(opts.s, opts.k).ok_or_else(|| anyhow!("search.s and search.k must be positive"))?;
        let seeds: Vec<u64> = (opts.first_seed..opts.first_seed + opts.attempts).collect();
        let outcomes: Vec<OutcomeRecord> = commands::search(&theorems, &backend, &generator, budget, opts.dedup, &seeds)?;
        write_jsonl(Some(&self.artifact("outcomes.jsonl")), &outcomes)?;
        let proved: BTreeSet<&str> = outcomes.iter().filter(|o| o.solved()).map(|o| o.theorem.as_str()).collect();
        Ok(format!("{} of {} theorems proved in {} attempts each", proved.len(), theorems.len(), seeds.len()))
    }

    fn eval(&self) -> Result<String> {
        let path = self.artifact("outcomes.jsonl");
        if !path.exists() {
            return Err(anyhow!("missing outcomes.jsonl; run the search stage first"));
        }
        let report = commands::eval(&[commands::load_matrix(&path)?], &self.config.eval.k)?;
        write_json(Some(&self.artifact("eval.json")), &report)?;
        let rows: Vec<String> = report.rows.iter().map(|r| format!("pass@{} {}", r.k, r.percent)).collect();
        Ok(rows.join(", "))
    }
}

/// Run the selected stages in pipeline order. Returns one summary line per
/// stage; a failing stage stops the run and leaves earlier artifacts.
pub fn run(config: &Config, only: &[Stage]) -> Result<Vec<(Stage, String)>> {
    std::fs::create_dir_all(&config.workspace)
        .with_context(|| format!("cannot create workspace {}", config.workspace.display()))?;
    let selected: BTreeSet<Stage> = if !only.is_empty() {
        only.iter().copied().collect()
    } else if let Some(s) = &config.stages {
        s.iter().copied().collect()
    } else {
        Stage::ALL.into_iter().collect()
    };
    let run = Run { config };
    let mut out = Vec::new();
    for stage in selected {
        let result = match stage {
            Stage::Scan => run.scan(),
            Stage::Graph => run.graph(),
            Stage::Build => run.build(),
            Stage::Extract => run.extract(),
            Stage::Dataset => run.dataset(),
            Stage::Search => run.search(),
            Stage::Eval => run.eval(),
        };
        let summary = result.map_err(|e| anyhow!("stage {stage} failed: {e:#}"))?;
        log::info!("{stage}: {summary}");
        out.push((stage, summary));
    }
    Ok(out)
}
