//! Stage logic shared by the subcommands and the pipeline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use leanforge::backend::{extract_batch, Backend, BackendError, ExtractJob, ProcessBackend};
use leanforge::build::{execute, plan, BuildReport, BuildStatus, ProcessRunner, ReportRecord};
use leanforge::dataset::{
    corpus_stats, render_prompt, split, to_proofsteps, top_repos, CorpusStats, DefaultTokenizer, Prompt,
    ProcessTokenizer, SplitSpec, Tokenizer,
};
use leanforge::eval::{merge_runs, report, AttemptMatrix, EvalReport, MatrixFile};
use leanforge::graph::{build_graph, GraphNode, ImportGraph, ModuleName, SourceFile};
use leanforge::scan::{lean_files, scan_corpus, RepoClassification, ScanConfig, ScanRecord, ScanReport};
use leanforge::search::{run_attempts, ExpansionBudget, Generator, OutcomeRecord, ProcessGenerator};
use leanforge::sim::generator::WorldGenerator;
use leanforge::sim::{SimulatedBackend, World};
use leanforge::trace::{TheoremRecord, NO_GOALS};
use serde::{Deserialize, Serialize};

/// Replace `{self}` in a command template with this executable.
pub fn expand_self(template: &str) -> Result<String> {
    if !template.contains("{self}") {
        return Ok(template.to_string());
    }
    let exe = std::env::current_exe().context("cannot locate the leanforge executable")?;
    Ok(template.replace("{self}", &format!("\"{}\"", exe.display())))
}

pub fn scan(root: &Path, deprecated_cutoff: Option<&str>) -> Result<Vec<ScanReport>> {
    let mut config = ScanConfig::default();
    if let Some(cutoff) = deprecated_cutoff {
        config.deprecated_cutoff = cutoff.parse().map_err(|_| anyhow::anyhow!("bad version {cutoff:?}"))?;
    }
    Ok(scan_corpus(root, &config)?)
}

fn relative(path: &Path, root: &Path) -> PathBuf {
    path.strip_prefix(root).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

fn read_source(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

const LAKEFILE: &str = "lakefile.lean";

/// Graph of one source root, with an optional directory of isolated files.
/// Paths are relative to `root`; the root lakefile is not a module.
pub fn project_graph(root: &Path, isolated: Option<&Path>) -> Result<ImportGraph> {
    let mut files = Vec::new();
    for path in lean_files(root) {
        if path.parent() == Some(root) && path.file_name().is_some_and(|n| n == LAKEFILE) {
            continue;
        }
        let mut f = SourceFile::project(root, &path, read_source(&path)?)?;
        f.path = relative(&path, root);
        files.push(f);
    }
    let mut extra = Vec::new();
    if let Some(dir) = isolated {
        for path in lean_files(dir) {
            let mut f = SourceFile::isolated(&path, read_source(&path)?);
            f.path = relative(&path, root);
            extra.push(f);
        }
    }
    Ok(build_graph(&files, &extra)?)
}

fn qualify(repo: &str, m: &ModuleName) -> Result<ModuleName> {
    let mut segments = vec![format!("«{repo}»")];
    segments.extend(m.segments().iter().cloned());
    Ok(ModuleName::new(segments)?)
}

/// One graph over every buildable repo of a corpus. Modules are prefixed
/// with their repo name so equal module names in two repos stay apart;
/// paths are relative to the corpus root.
pub fn corpus_graph(corpus: &Path, scans: &[ScanRecord]) -> Result<ImportGraph> {
    let mut nodes: Vec<GraphNode> = Vec::new();
    for s in scans {
        let repo_root = corpus.join(&s.name);
        let graph = match s.classification {
            RepoClassification::CompilableProject => project_graph(&repo_root, None)?,
            RepoClassification::IsolatedFiles => {
                let mut extra = Vec::new();
                for path in lean_files(&repo_root) {
                    extra.push(SourceFile::isolated(&relative(&path, &repo_root), read_source(&path)?));
                }
                build_graph(&[], &extra)?
            }
            _ => continue,
        };
        for n in graph.nodes() {
            nodes.push(GraphNode {
                module: qualify(&s.name, &n.module)?,
                path: Path::new(&s.name).join(&n.path),
                imports: n.imports.iter().map(|m| qualify(&s.name, m)).collect::<Result<_>>()?,
                unresolved: n.unresolved.clone(),
            });
        }
    }
    Ok(ImportGraph::from_nodes(nodes)?)
}

pub fn build(graph: &ImportGraph, command: &str, root: &Path, workers: usize, timeout: Duration) -> Result<BuildReport> {
    let command = expand_self(command)?;
    let plan = plan(graph, &command)?.with_cwd(root);
    let runner = ProcessRunner { timeout };
    Ok(execute(&plan, workers.max(1), &runner)?)
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Debug, Default)]
pub struct Extraction {
    pub records: Vec<TheoremRecord>,
    pub failures: Vec<(String, BackendError)>,
}

/// Extract every succeeded module. `url_of` gives each file's repo URL
/// from its root-relative path. A final state equal to `sentinel` is
/// rewritten to the standard one.
pub fn extract(
    report: &[ReportRecord],
    root: &Path,
    backend: &str,
    url_of: &dyn Fn(&str) -> String,
    commit: &str,
    sentinel: &str,
) -> Result<Extraction> {
    let backend = expand_self(backend)?;
    let jobs: Vec<ExtractJob> = report
        .iter()
        .filter(|r| r.status == BuildStatus::Succeeded.label())
        .map(|r| {
            let file_path = r.path.display().to_string();
            ExtractJob { path: root.join(&r.path), url: url_of(&file_path), file_path, commit: commit.to_string() }
        })
        .collect();
    let batch = extract_batch(&jobs, || ProcessBackend::spawn(&backend));
    let mut records = batch.records;
    if sentinel != NO_GOALS {
        for r in &mut records {
            if let Some(last) = r.tactics.last_mut().filter(|s| s.state_after == sentinel) {
                last.state_after = NO_GOALS.to_string();
            }
        }
    }
    Ok(Extraction { records, failures: batch.failures })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepoCount {
    pub repo: String,
    pub theorems: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsOutput {
    #[serde(flatten)]
    pub stats: CorpusStats,
    pub top_repos: Vec<RepoCount>,
}

pub fn stats(records: &[TheoremRecord], tokenizer: Option<&str>) -> Result<StatsOutput> {
    let mut tok: Box<dyn Tokenizer> = match tokenizer {
        Some(cmd) => Box::new(ProcessTokenizer::spawn(&expand_self(cmd)?)?),
        None => Box::new(DefaultTokenizer),
    };
    let stats = corpus_stats(records, tok.as_mut())?;
    let top = top_repos(&stats, 30).into_iter().map(|(r, n)| RepoCount { repo: r.to_string(), theorems: n }).collect();
    Ok(StatsOutput { stats, top_repos: top })
}

pub fn stats_table(out: &StatsOutput) -> String {
    let s = &out.stats;
    let mut text = format!(
        "theorems        {}\nwith tactics    {}\ntactic steps    {}\nfiles           {} ({} with valid proofs)\ntokens          {}\n\n",
        s.theorems_total, s.theorems_with_tactics, s.tactic_steps, s.files_total, s.files_with_valid, s.tokens_total
    );
    let width = out.top_repos.iter().map(|r| r.repo.chars().count()).max().unwrap_or(4).max(4);
    text.push_str(&format!("{:<width$}  theorems\n", "repo"));
    for r in &out.top_repos {
        text.push_str(&format!("{:<width$}  {}\n", r.repo, r.theorems));
    }
    text
}

/// `prompts.jsonl` with split `test` becomes `prompts.test.jsonl`.
pub fn split_path(base: &Path, split: &str) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}.{split}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{split}"),
    };
    base.with_file_name(name)
}

pub struct PromptSplits {
    pub splits: Vec<(String, Vec<Prompt>)>,
    pub skipped: usize,
}

/// Prompts of the valid records, split by file.
pub fn prompts(records: &[TheoremRecord], fractions: &[f64], seed: u64, legacy: bool) -> Result<PromptSplits> {
    let valid: Vec<TheoremRecord> = records.iter().filter(|r| r.is_valid()).cloned().collect();
    let spec = SplitSpec::from_fractions(fractions, seed)?;
    let mut out = Vec::new();
    for (name, part) in split(&valid, &spec)? {
        let mut ps = Vec::new();
        for r in &part {
            ps.extend(to_proofsteps(r)?.iter().map(|ex| render_prompt(ex, legacy)));
        }
        out.push((name, ps));
    }
    Ok(PromptSplits { splits: out, skipped: records.len() - valid.len() })
}

pub enum SearchBackend {
    World(Arc<World>),
    Command(String),
}

pub enum SearchGenerator {
    Builtin(Arc<World>),
    Command(String),
}

fn run_all<B: Backend>(
    theorems: &[String],
    backend: &(dyn Fn() -> Result<B, BackendError> + Sync),
    generator: &SearchGenerator,
    budget: ExpansionBudget,
    dedup: bool,
    seeds: &[u64],
) -> Vec<OutcomeRecord> {
    let mut out = Vec::new();
    for theorem in theorems {
        let attempts = run_attempts(
            theorem,
            |seed| -> Result<Box<dyn Generator>, _> {
                Ok(match generator {
                    SearchGenerator::Builtin(world) => Box::new(WorldGenerator::new(world.clone(), seed)),
                    SearchGenerator::Command(cmd) => Box::new(ProcessGenerator::spawn(cmd, seed)?),
                })
            },
            backend,
            budget,
            dedup,
            seeds,
        );
        for a in &attempts {
            let rec = OutcomeRecord::from_attempt(theorem, a);
            log::info!("{theorem} seed {}: {}", a.seed, rec.outcome);
            out.push(rec);
        }
    }
    out
}

/// Outcome records ordered by theorem, then seed.
pub fn search(
    theorems: &[String],
    backend: &SearchBackend,
    generator: &SearchGenerator,
    budget: ExpansionBudget,
    dedup: bool,
    seeds: &[u64],
) -> Result<Vec<OutcomeRecord>> {
    let generator = match generator {
        SearchGenerator::Command(cmd) => SearchGenerator::Command(expand_self(cmd)?),
        SearchGenerator::Builtin(w) => SearchGenerator::Builtin(w.clone()),
    };
    Ok(match backend {
        SearchBackend::World(world) => {
            let world = world.clone();
            run_all(theorems, &move || Ok(SimulatedBackend::new(world.clone())), &generator, budget, dedup, seeds)
        }
        SearchBackend::Command(cmd) => {
            let cmd = expand_self(cmd)?;
            run_all(theorems, &move || ProcessBackend::spawn(&cmd), &generator, budget, dedup, seeds)
        }
    })
}

/// Theorem names, one per line; blank lines and `#` comments are ignored.
pub fn read_theorem_list(path: &Path) -> Result<Vec<String>> {
    Ok(read_source(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// A matrix file, or outcome records labelled with the file stem.
pub fn load_matrix(path: &Path) -> Result<AttemptMatrix> {
    let text = read_source(path)?;
    if let Ok(file) = serde_json::from_str::<MatrixFile>(&text) {
        return Ok(AttemptMatrix::from_file(file)?);
    }
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: OutcomeRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: neither a matrix file nor an outcome record", path.display(), i + 1))?;
        records.push(rec);
    }
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(AttemptMatrix::from_outcomes(&records, &label)?)
}

pub fn eval(matrices: &[AttemptMatrix], ks: &[usize]) -> Result<EvalReport> {
    let Some((first, rest)) = matrices.split_first() else { bail!("no outcome files given") };
    let mut merged = first.clone();
    for m in rest {
        merged = merge_runs(&merged, m)?;
    }
    let ks: Vec<usize> = if ks.is_empty() {
        let mut v = vec![1, merged.max_attempts()];
        v.dedup();
        v
    } else {
        ks.to_vec()
    };
    Ok(report(&merged, &ks)?)
}

pub fn eval_table(r: &EvalReport) -> String {
    let mut text = format!("{} problems, {} attempts{}\n", r.problems, r.attempts, if r.incomplete { " (incomplete)" } else { "" });
    text.push_str("k      solved  pass@k\n");
    for row in &r.rows {
        text.push_str(&format!("{:<6} {:<7} {}\n", row.k, row.solved, row.percent));
    }
    text
}

pub fn count_by<T, K: Ord>(items: &[T], key: impl Fn(&T) -> K) -> BTreeMap<K, usize> {
    let mut m = BTreeMap::new();
    for i in items {
        *m.entry(key(i)).or_default() += 1;
    }
    m
}
