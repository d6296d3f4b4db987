//! Dependency-aware parallel compilation with per-module failure isolation.
//!
//! A failing module poisons only the modules that transitively import it;
//! everything else keeps building. Tasks are dispatched from a
//! dependency-counting ready queue to a fixed pool of worker threads, and
//! the report is assembled on the calling thread once the pool drains.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::{self, Write as _};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{detect_cycles, ImportGraph, ModuleName};

/// Exit code recorded for a task killed by its timeout.
pub const TIMEOUT_EXIT_CODE: i32 = 124;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);
const STDERR_EXCERPT_CHARS: usize = 2048;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("import graph has cycles: {0:?}")]
    CyclicGraph(Vec<Vec<ModuleName>>),
    #[error("command template is empty")]
    EmptyCommand,
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("cannot run `{program}` for {module}: {reason}")]
    RunnerUnavailable { module: ModuleName, program: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandSpec {
    pub program: String,
    pub args: Vec<String>,
    pub cwd: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildTask {
    pub module: ModuleName,
    pub path: PathBuf,
    pub command: CommandSpec,
    pub deps_remaining: usize,
}

/// Tasks indexed like the graph nodes they came from.
#[derive(Debug, Clone)]
pub struct BuildPlan {
    tasks: Vec<BuildTask>,
    deps: Vec<Vec<usize>>,
    dependents: Vec<Vec<usize>>,
}

impl BuildPlan {
    pub fn tasks(&self) -> &[BuildTask] {
        &self.tasks
    }

    pub fn deps(&self, i: usize) -> &[usize] {
        &self.deps[i]
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Run every command from `dir`.
    pub fn with_cwd(mut self, dir: &Path) -> Self {
        for t in &mut self.tasks {
            t.command.cwd = Some(dir.to_path_buf());
        }
        self
    }
}

/// Split a command template on whitespace, honoring single and double
/// quotes. Placeholders are substituted per word afterwards, so a path with
/// spaces stays one argument.
pub fn split_template(template: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut in_word = false;
    let mut quote: Option<char> = None;
    for c in template.chars() {
        match (quote, c) {
            (Some(q), c) if c == q => quote = None,
            (Some(_), c) => cur.push(c),
            (None, '"' | '\'') => {
                quote = Some(c);
                in_word = true;
            }
            (None, c) if c.is_whitespace() => {
                if in_word {
                    words.push(std::mem::take(&mut cur));
                    in_word = false;
                }
            }
            (None, c) => {
                cur.push(c);
                in_word = true;
            }
        }
    }
    if in_word {
        words.push(cur);
    }
    words
}

fn instantiate(words: &[String], path: &Path, module: &ModuleName) -> CommandSpec {
    let path = path.display().to_string();
    let module = module.to_string();
    let mut args: Vec<String> =
        words.iter().map(|w| w.replace("{path}", &path).replace("{module}", &module)).collect();
    let program = args.remove(0);
    CommandSpec { program, args, cwd: None }
}

/// One task per graph node; `deps_remaining` counts resolved in-graph
/// imports only.
pub fn plan(graph: &ImportGraph, command_template: &str) -> Result<BuildPlan, BuildError> {
    let cycles = detect_cycles(graph);
    if !cycles.is_empty() {
        return Err(BuildError::CyclicGraph(cycles));
    }
    let words = split_template(command_template);
    if words.is_empty() {
        return Err(BuildError::EmptyCommand);
    }
    let tasks = graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, node)| BuildTask {
            module: node.module.clone(),
            path: node.path.clone(),
            command: instantiate(&words, &node.path, &node.module),
            deps_remaining: graph.deps(i).len(),
        })
        .collect();
    Ok(BuildPlan {
        tasks,
        deps: (0..graph.len()).map(|i| graph.deps(i).to_vec()).collect(),
        dependents: (0..graph.len()).map(|i| graph.dependents(i).to_vec()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub stderr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot spawn `{program}`: {reason}")]
pub struct RunnerError {
    pub program: String,
    pub reason: String,
}

/// Executes one task's command. Implementations must be callable from
/// several worker threads at once.
pub trait CommandRunner: Sync {
    fn run(&self, task: &BuildTask) -> Result<RunOutcome, RunnerError>;
}

/// Spawns the real command with a wall-clock timeout.
#[derive(Debug, Clone)]
pub struct ProcessRunner {
    pub timeout: Duration,
}

impl Default for ProcessRunner {
    fn default() -> Self {
        ProcessRunner { timeout: DEFAULT_TIMEOUT }
    }
}

impl CommandRunner for ProcessRunner {
    fn run(&self, task: &BuildTask) -> Result<RunOutcome, RunnerError> {
        let spec = &task.command;
        let mut cmd = Command::new(&spec.program);
        cmd.args(&spec.args).stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::piped());
        if let Some(cwd) = &spec.cwd {
            cmd.current_dir(cwd);
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| RunnerError { program: spec.program.clone(), reason: e.to_string() })?;
        let mut stderr_pipe = child.stderr.take().expect("stderr piped");
        let reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr_pipe.read_to_end(&mut buf);
            String::from_utf8_lossy(&buf).into_owned()
        });
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(RunnerError { program: spec.program.clone(), reason: e.to_string() }),
            }
        };
        let stderr = reader.join().unwrap_or_default();
        Ok(match status {
            Some(status) => RunOutcome { exit_code: status.code().unwrap_or(-1), stderr },
            None => RunOutcome {
                exit_code: TIMEOUT_EXIT_CODE,
                stderr: format!("timed out after {:?}\n{stderr}", self.timeout),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BuildStatus {
    Pending,
    Running,
    Succeeded,
    Failed { exit_code: i32, stderr_excerpt: String },
    Skipped { blamed: ModuleName },
}

impl BuildStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, BuildStatus::Pending | BuildStatus::Running)
    }

    pub fn label(&self) -> &'static str {
        match self {
            BuildStatus::Pending => "pending",
            BuildStatus::Running => "running",
            BuildStatus::Succeeded => "succeeded",
            BuildStatus::Failed { .. } => "failed",
            BuildStatus::Skipped { .. } => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportEntry {
    pub module: ModuleName,
    pub path: PathBuf,
    pub status: BuildStatus,
    pub wall_ms: u64,
}

/// Final per-module statuses, sorted by module name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BuildReport {
    pub entries: Vec<ReportEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub succeeded: usize,
    pub failed: usize,
    pub skipped: usize,
}

impl fmt::Display for Totals {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} succeeded, {} failed, {} skipped", self.succeeded, self.failed, self.skipped)
    }
}

impl BuildReport {
    pub fn totals(&self) -> Totals {
        let mut t = Totals::default();
        for e in &self.entries {
            match e.status {
                BuildStatus::Succeeded => t.succeeded += 1,
                BuildStatus::Failed { .. } => t.failed += 1,
                BuildStatus::Skipped { .. } => t.skipped += 1,
                _ => {}
            }
        }
        t
    }

    pub fn status_of(&self, module: &ModuleName) -> Option<&BuildStatus> {
        self.entries.iter().find(|e| &e.module == module).map(|e| &e.status)
    }

    /// Zero every wall time, leaving only the deterministic part.
    pub fn without_timing(mut self) -> Self {
        for e in &mut self.entries {
            e.wall_ms = 0;
        }
        self
    }

    pub fn to_records(&self) -> Vec<ReportRecord> {
        self.entries
            .iter()
            .map(|e| {
                let (exit_code, stderr, blamed) = match &e.status {
                    BuildStatus::Failed { exit_code, stderr_excerpt } => {
                        (Some(*exit_code), Some(stderr_excerpt.clone()), None)
                    }
                    BuildStatus::Skipped { blamed } => (None, None, Some(blamed.clone())),
                    _ => (None, None, None),
                };
                ReportRecord {
                    module: e.module.clone(),
                    path: e.path.clone(),
                    status: e.status.label().to_string(),
                    exit_code,
                    blamed,
                    stderr,
                    wall_ms: e.wall_ms,
                }
            })
            .collect()
    }

    pub fn from_records(records: Vec<ReportRecord>) -> Result<Self, ReportError> {
        let mut entries = records
            .into_iter()
            .map(|r| {
                let status = match r.status.as_str() {
                    "succeeded" => BuildStatus::Succeeded,
                    "failed" => BuildStatus::Failed {
                        exit_code: r.exit_code.unwrap_or(-1),
                        stderr_excerpt: r.stderr.unwrap_or_default(),
                    },
                    "skipped" => BuildStatus::Skipped {
                        blamed: r.blamed.ok_or_else(|| ReportError::MissingBlame(r.module.clone()))?,
                    },
                    "pending" => BuildStatus::Pending,
                    "running" => BuildStatus::Running,
                    other => return Err(ReportError::UnknownStatus(other.to_string())),
                };
                Ok(ReportEntry { module: r.module, path: r.path, status, wall_ms: r.wall_ms })
            })
            .collect::<Result<Vec<_>, _>>()?;
        entries.sort_by(|a, b| a.module.cmp(&b.module));
        Ok(BuildReport { entries })
    }
}

/// Line-delimited form of one report entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub module: ModuleName,
    pub path: PathBuf,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blamed: Option<ModuleName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<String>,
    pub wall_ms: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("{0} never reached a terminal state")]
    NonTerminal(ModuleName),
    #[error("{module} is skipped but blames {blamed}, which did not fail")]
    BadBlame { module: ModuleName, blamed: ModuleName },
    #[error("skipped module {0} names no failed module")]
    MissingBlame(ModuleName),
    #[error("unknown status {0:?}")]
    UnknownStatus(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub totals: Totals,
    pub table: String,
}

/// Check the report's invariants and render a status table.
pub fn summarize(report: &BuildReport) -> Result<Summary, ReportError> {
    for e in &report.entries {
        match &e.status {
            BuildStatus::Pending | BuildStatus::Running => return Err(ReportError::NonTerminal(e.module.clone())),
            BuildStatus::Skipped { blamed }
                if !matches!(report.status_of(blamed), Some(BuildStatus::Failed { .. })) =>
            {
                return Err(ReportError::BadBlame { module: e.module.clone(), blamed: blamed.clone() });
            }
            _ => {}
        }
    }
    let width = report.entries.iter().map(|e| e.module.to_string().len()).max().unwrap_or(6).max(6);
    let mut table = format!("{:<width$}  {:<9}  {:>8}  detail\n", "module", "status", "wall_ms");
    for e in &report.entries {
        let detail = match &e.status {
            BuildStatus::Failed { exit_code, .. } => format!("exit {exit_code}"),
            BuildStatus::Skipped { blamed } => format!("blocked by {blamed}"),
            _ => String::new(),
        };
        let _ = writeln!(table, "{:<width$}  {:<9}  {:>8}  {}", e.module.to_string(), e.status.label(), e.wall_ms, detail);
    }
    let totals = report.totals();
    let _ = writeln!(table, "{totals}");
    Ok(Summary { totals, table })
}

fn excerpt(stderr: &str) -> String {
    stderr.chars().take(STDERR_EXCERPT_CHARS).collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Pending,
    Running,
    Succeeded,
    Failed,
    Skipped,
}

struct Shared {
    slot: Vec<Slot>,
    remaining: Vec<usize>,
    ready: BTreeSet<usize>,
    outcome: Vec<Option<RunOutcome>>,
    wall: Vec<Duration>,
    running: usize,
    finished: usize,
    abort: Option<(usize, RunnerError)>,
}

impl Shared {
    fn poison_dependents(&mut self, plan: &BuildPlan, failed: usize) {
        let mut stack = vec![failed];
        while let Some(u) = stack.pop() {
            for &v in &plan.dependents[u] {
                if self.slot[v] == Slot::Pending {
                    self.slot[v] = Slot::Skipped;
                    self.ready.remove(&v);
                    self.finished += 1;
                    stack.push(v);
                }
            }
        }
    }
}

/// Run every task once its dependencies succeeded. The returned report is
/// independent of completion order except for wall times.
pub fn execute(plan: &BuildPlan, workers: usize, runner: &dyn CommandRunner) -> Result<BuildReport, BuildError> {
    if workers == 0 {
        return Err(BuildError::NoWorkers);
    }
    let n = plan.len();
    let shared = Mutex::new(Shared {
        slot: vec![Slot::Pending; n],
        remaining: plan.tasks.iter().map(|t| t.deps_remaining).collect(),
        ready: (0..n).filter(|&i| plan.tasks[i].deps_remaining == 0).collect(),
        outcome: vec![None; n],
        wall: vec![Duration::ZERO; n],
        running: 0,
        finished: 0,
        abort: None,
    });
    let wake = Condvar::new();

    let worker = || loop {
        let idx = {
            let mut st = shared.lock().expect("scheduler lock");
            loop {
                if st.abort.is_some() || st.finished == n {
                    return;
                }
                if let Some(i) = st.ready.pop_first() {
                    st.slot[i] = Slot::Running;
                    st.running += 1;
                    break i;
                }
                if st.running == 0 {
                    // nothing runnable and nothing in flight: only reachable
                    // with a malformed plan
                    return;
                }
                st = wake.wait(st).expect("scheduler lock");
            }
        };
        let started = Instant::now();
        let result = runner.run(&plan.tasks[idx]);
        let elapsed = started.elapsed();

        let mut st = shared.lock().expect("scheduler lock");
        st.running -= 1;
        st.wall[idx] = elapsed;
        match result {
            Ok(outcome) if outcome.exit_code == 0 => {
                st.slot[idx] = Slot::Succeeded;
                st.finished += 1;
                for &d in &plan.dependents[idx] {
                    if st.slot[d] == Slot::Pending {
                        st.remaining[d] -= 1;
                        if st.remaining[d] == 0 {
                            st.ready.insert(d);
                        }
                    }
                }
                st.outcome[idx] = Some(outcome);
            }
            Ok(outcome) => {
                st.slot[idx] = Slot::Failed;
                st.finished += 1;
                st.outcome[idx] = Some(outcome);
                st.poison_dependents(plan, idx);
            }
            Err(e) => {
                st.slot[idx] = Slot::Pending;
                st.abort.get_or_insert((idx, e));
            }
        }
        drop(st);
        wake.notify_all();
    };

    std::thread::scope(|scope| {
        for _ in 0..workers.min(n.max(1)) {
            scope.spawn(worker);
        }
    });

    let st = shared.into_inner().expect("scheduler lock");
    if let Some((idx, e)) = st.abort {
        return Err(BuildError::RunnerUnavailable {
            module: plan.tasks[idx].module.clone(),
            program: e.program,
            reason: e.reason,
        });
    }
    let entries = (0..n)
        .map(|i| {
            let status = match st.slot[i] {
                Slot::Succeeded => BuildStatus::Succeeded,
                Slot::Failed => {
                    let o = st.outcome[i].as_ref().expect("failed task has an outcome");
                    BuildStatus::Failed { exit_code: o.exit_code, stderr_excerpt: excerpt(&o.stderr) }
                }
                Slot::Skipped => BuildStatus::Skipped { blamed: plan.tasks[nearest_failed(plan, &st.slot, i)].module.clone() },
                Slot::Pending => BuildStatus::Pending,
                Slot::Running => BuildStatus::Running,
            };
            ReportEntry {
                module: plan.tasks[i].module.clone(),
                path: plan.tasks[i].path.clone(),
                status,
                wall_ms: st.wall[i].as_millis() as u64,
            }
        })
        .collect();
    Ok(BuildReport { entries })
}

/// Breadth-first over imports; the first level holding a failed module
/// wins, name-least within that level.
fn nearest_failed(plan: &BuildPlan, slot: &[Slot], start: usize) -> usize {
    let mut seen = vec![false; slot.len()];
    seen[start] = true;
    let mut frontier = vec![start];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in &plan.deps[u] {
                if !seen[v] {
                    seen[v] = true;
                    next.push(v);
                }
            }
        }
        // plan indices follow name order
        if let Some(&hit) = next.iter().filter(|&&v| slot[v] == Slot::Failed).min() {
            return hit;
        }
        frontier = next;
    }
    unreachable!("skipped module without a failed ancestor")
}

/// Transitive importers of `roots` (excluding the roots themselves).
pub fn transitive_dependents(plan: &BuildPlan, roots: &[usize]) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut queue: VecDeque<usize> = roots.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        for &v in &plan.dependents[u] {
            if out.insert(v) {
                queue.push_back(v);
            }
        }
    }
    out
}
