//! Generators shared by the property and acceptance suites.
#![allow(dead_code)]

pub mod labels;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use leanforge::backend::Session;
use leanforge::build::{BuildTask, CommandRunner, RunOutcome, RunnerError};
use leanforge::eval::{AttemptMatrix, MatrixFile};
use leanforge::graph::{GraphNode, ImportGraph, ModuleName};
use leanforge::search::{best_first_search, ExpansionBudget, SearchError, SearchOutcome};
use leanforge::sim::generator::WorldGenerator;
use leanforge::sim::{SimulatedBackend, World, WorldSpec};
use leanforge::trace::{TacticStep, TheoremRecord, NO_GOALS};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

// ---------------------------------------------------------------- states

/// A piece of a hypothesis type or target: a reference to the `n`-th
/// hypothesis name of the goal, or fixed text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Atom {
    Ref(usize),
    Proj(usize),
    Lit(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GoalSkeleton {
    pub case_tag: Option<&'static str>,
    /// Group sizes and types; a type may only reference earlier names.
    pub hyps: Vec<(usize, Vec<Atom>)>,
    pub target: Vec<Atom>,
}

impl GoalSkeleton {
    pub fn name_count(&self) -> usize {
        self.hyps.iter().map(|(n, _)| n).sum()
    }
}

/// A proof state with its hypothesis names abstracted as slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Skeleton(pub Vec<GoalSkeleton>);

const LITS: [&str; 10] = ["ℕ", "ℤ", "Prop", "0", "1", "f", "Nat.succ", "List ℕ", "(2 : ℝ)", "Finset.range 5"];
const OPS: [&str; 7] = [" + ", " * ", " = ", " → ", " ∧ ", " ≤ ", " ∣ "];
const TAGS: [&str; 5] = ["zero", "succ", "inl", "inr", "h"];
const RESERVED: [&str; 20] = [
    "fun", "let", "have", "show", "from", "by", "at", "in", "if", "then", "else", "do", "match", "with", "case",
    "Type", "Sort", "Prop", "f", "Nat",
];

fn expr<R: Rng>(rng: &mut R, visible: usize) -> Vec<Atom> {
    let len = rng.gen_range(1..=4);
    (0..len)
        .map(|_| {
            if visible > 0 && rng.gen_bool(0.6) {
                let j = rng.gen_range(0..visible);
                if rng.gen_bool(0.15) {
                    Atom::Proj(j)
                } else {
                    Atom::Ref(j)
                }
            } else {
                Atom::Lit(LITS[rng.gen_range(0..LITS.len())])
            }
        })
        .collect()
}

pub fn random_skeleton<R: Rng>(rng: &mut R) -> Skeleton {
    let goals = rng.gen_range(1..=3);
    Skeleton(
        (0..goals)
            .map(|_| {
                let mut hyps = Vec::new();
                let mut names = 0;
                for _ in 0..rng.gen_range(0..=5) {
                    let group = if rng.gen_bool(0.25) { rng.gen_range(2..=3) } else { 1 };
                    hyps.push((group, expr(rng, names)));
                    names += group;
                }
                GoalSkeleton {
                    case_tag: rng.gen_bool(0.3).then(|| TAGS[rng.gen_range(0..TAGS.len())]),
                    hyps,
                    target: expr(rng, names),
                }
            })
            .collect(),
    )
}

/// A fresh hypothesis name that is not a literal or keyword.
pub fn random_name<R: Rng>(rng: &mut R) -> String {
    const FIRST: &[char] = &['a', 'b', 'h', 'x', 'y', 'n', 'm', 'p', 'q', 'H', 'α', 'β', 'ε', '_'];
    const REST: &[char] = &['a', 'b', 'c', 'x', '0', '1', '2', '_', '\'', '₁', '₂', '!', '?'];
    loop {
        let mut s = String::new();
        s.push(FIRST[rng.gen_range(0..FIRST.len())]);
        for _ in 0..rng.gen_range(0..=4) {
            s.push(REST[rng.gen_range(0..REST.len())]);
        }
        if rng.gen_bool(0.1) {
            s.push('✝');
        }
        if s != "_" && !RESERVED.contains(&s.as_str()) && !s.starts_with("_h") {
            return s;
        }
    }
}

/// One name assignment per goal, distinct within a goal.
pub fn random_names<R: Rng>(rng: &mut R, sk: &Skeleton) -> Vec<Vec<String>> {
    sk.0.iter()
        .map(|g| {
            let mut used = HashSet::new();
            (0..g.name_count())
                .map(|_| loop {
                    let n = random_name(rng);
                    if used.insert(n.clone()) {
                        break n;
                    }
                })
                .collect()
        })
        .collect()
}

fn render_expr(atoms: &[Atom], names: &[String], ops: &mut impl Iterator<Item = &'static str>) -> String {
    let mut out = String::new();
    for (i, a) in atoms.iter().enumerate() {
        if i > 0 {
            out.push_str(ops.next().unwrap_or(" + "));
        }
        match a {
            Atom::Ref(j) => out.push_str(&names[*j]),
            Atom::Proj(j) => {
                out.push_str(&names[*j]);
                out.push_str(".1");
            }
            Atom::Lit(l) => out.push_str(l),
        }
    }
    out
}

/// Render with a name assignment. Operators are fixed per skeleton
/// position so only the names vary between renderings.
pub fn render_skeleton(sk: &Skeleton, names: &[Vec<String>]) -> String {
    let mut goals = Vec::new();
    for (g, names) in sk.0.iter().zip(names) {
        let mut ops = OPS.iter().copied().cycle();
        let mut lines = Vec::new();
        if let Some(tag) = g.case_tag {
            lines.push(format!("case {tag}"));
        }
        let mut k = 0;
        for (group, ty) in &g.hyps {
            let ns = names[k..k + group].join(" ");
            k += group;
            lines.push(format!("{ns} : {}", render_expr(ty, names, &mut ops)));
        }
        lines.push(format!("⊢ {}", render_expr(&g.target, names, &mut ops)));
        goals.push(lines.join("\n"));
    }
    goals.join("\n\n")
}

/// Canonical names by position: what the canonical text must look like.
pub fn positional_names(sk: &Skeleton) -> Vec<Vec<String>> {
    sk.0.iter().map(|g| (0..g.name_count()).map(|i| format!("_h{i}")).collect()).collect()
}

// ---------------------------------------------------------------- graphs

pub fn module(i: usize) -> ModuleName {
    format!("M{i:03}").parse().unwrap()
}

/// A random DAG on `n` nodes; node `i` may import any `j < i`.
pub fn random_dag<R: Rng>(rng: &mut R, n: usize) -> ImportGraph {
    let density = rng.gen_range(0.0..0.15);
    let nodes = (0..n)
        .map(|i| {
            let imports: Vec<ModuleName> = (0..i).filter(|_| rng.gen_bool(density)).map(module).collect();
            GraphNode { module: module(i), path: PathBuf::from(format!("M{i:03}.lean")), imports, unresolved: vec![] }
        })
        .collect();
    ImportGraph::from_nodes(nodes).unwrap()
}

/// Records start order and flags any task started before one of its
/// dependencies succeeded.
pub struct RecordingRunner {
    pub fail: BTreeSet<ModuleName>,
    pub deps: HashMap<ModuleName, Vec<ModuleName>>,
    pub done: Mutex<HashSet<ModuleName>>,
    pub started: Mutex<Vec<ModuleName>>,
    pub violations: Mutex<Vec<(ModuleName, ModuleName)>>,
}

impl RecordingRunner {
    pub fn new(graph: &ImportGraph, fail: BTreeSet<ModuleName>) -> Self {
        RecordingRunner {
            fail,
            deps: graph.nodes().iter().map(|n| (n.module.clone(), n.imports.clone())).collect(),
            done: Mutex::new(HashSet::new()),
            started: Mutex::new(Vec::new()),
            violations: Mutex::new(Vec::new()),
        }
    }
}

impl CommandRunner for RecordingRunner {
    fn run(&self, task: &BuildTask) -> Result<RunOutcome, RunnerError> {
        {
            let done = self.done.lock().unwrap();
            for d in &self.deps[&task.module] {
                if !done.contains(d) {
                    self.violations.lock().unwrap().push((task.module.clone(), d.clone()));
                }
            }
        }
        self.started.lock().unwrap().push(task.module.clone());
        std::thread::yield_now();
        if self.fail.contains(&task.module) {
            return Ok(RunOutcome { exit_code: 1, stderr: format!("{}: injected failure", task.module) });
        }
        self.done.lock().unwrap().insert(task.module.clone());
        Ok(RunOutcome { exit_code: 0, stderr: String::new() })
    }
}

/// Transitive importers of `failed`, computed by fixpoint over the node
/// list rather than the plan.
pub fn downstream_of(graph: &ImportGraph, failed: &BTreeSet<ModuleName>) -> BTreeSet<ModuleName> {
    let mut bad: BTreeSet<ModuleName> = failed.clone();
    loop {
        let before = bad.len();
        for n in graph.nodes() {
            if n.imports.iter().any(|d| bad.contains(d)) {
                bad.insert(n.module.clone());
            }
        }
        if bad.len() == before {
            break;
        }
    }
    bad.difference(failed).cloned().collect()
}

// ---------------------------------------------------------------- records

/// A record whose chain is well formed; `steps == 0` is a term proof.
pub fn chain_record(repo: &str, file: &str, name: &str, steps: usize) -> TheoremRecord {
    let tactics = (0..steps)
        .map(|j| TacticStep {
            state_before: format!("x : ℕ\n⊢ {name}_{j} x"),
            tactic: format!("apply step_{j}"),
            state_after: if j + 1 == steps { NO_GOALS.to_string() } else { format!("x : ℕ\n⊢ {name}_{} x", j + 1) },
        })
        .collect();
    TheoremRecord {
        url: repo.to_string(),
        commit: "c0ffee".into(),
        file_path: file.to_string(),
        full_name: name.to_string(),
        start: (1, 0),
        end: (1 + steps, 4),
        statement: format!("(x : ℕ) : {name} x"),
        tactics,
    }
}

pub fn random_records<R: Rng>(rng: &mut R, n: usize) -> Vec<TheoremRecord> {
    let files = rng.gen_range(1..=12);
    (0..n)
        .map(|i| {
            let f = rng.gen_range(0..files);
            let repo = format!("https://example.org/r{}", f % 3);
            let steps = if rng.gen_bool(0.2) { 0 } else { rng.gen_range(1..=5) };
            chain_record(&repo, &format!("F{f}.lean"), &format!("Ns.thm_{i}"), steps)
        })
        .collect()
}

// ---------------------------------------------------------------- matrices

pub fn random_matrix<R: Rng>(rng: &mut R, problems: usize, attempts: usize) -> AttemptMatrix {
    let p = rng.gen_range(0.0..0.5);
    let results = (0..problems).map(|_| (0..attempts).map(|_| if rng.gen_bool(p) { '1' } else { '0' }).collect()).collect();
    AttemptMatrix::from_file(MatrixFile {
        problems: (0..problems).map(|i| format!("p{i}")).collect(),
        results,
        metadata: vec![],
        incomplete: false,
    })
    .unwrap()
}

pub fn shuffled<T: Clone, R: Rng>(rng: &mut R, v: &[T]) -> Vec<T> {
    let mut v = v.to_vec();
    v.shuffle(rng);
    v
}

/// Run `graph` through the scheduler with injected failures and compare
/// against a sequential oracle. Node `i` only imports `j < i`, so index
/// order is a topological order.
pub fn check_build(graph: &ImportGraph, fail: &BTreeSet<ModuleName>, workers: usize) -> Result<(), String> {
    use leanforge::build::{execute, plan, BuildStatus};

    let mut expected: HashMap<ModuleName, &'static str> = HashMap::new();
    for n in graph.nodes() {
        let blocked = n.imports.iter().any(|d| expected[d] != "succeeded");
        let status = if blocked {
            "skipped"
        } else if fail.contains(&n.module) {
            "failed"
        } else {
            "succeeded"
        };
        expected.insert(n.module.clone(), status);
    }

    let p = plan(graph, "lean {path}").map_err(|e| e.to_string())?;
    let runner = RecordingRunner::new(graph, fail.clone());
    let report = execute(&p, workers, &runner).map_err(|e| e.to_string())?;

    let violations = runner.violations.into_inner().unwrap();
    if let Some((m, d)) = violations.first() {
        return Err(format!("{m} started before its import {d} succeeded"));
    }
    let started = runner.started.into_inner().unwrap();
    let unique: BTreeSet<_> = started.iter().cloned().collect();
    if unique.len() != started.len() {
        return Err("a module was started twice".into());
    }
    if report.entries.len() != graph.len() {
        return Err(format!("report has {} entries for {} modules", report.entries.len(), graph.len()));
    }
    let failed: BTreeSet<ModuleName> = report
        .entries
        .iter()
        .filter(|e| matches!(e.status, BuildStatus::Failed { .. }))
        .map(|e| e.module.clone())
        .collect();
    let downstream = downstream_of(graph, &failed);
    for e in &report.entries {
        let want = expected[&e.module];
        if e.status.label() != want {
            return Err(format!("{}: {} but expected {want}", e.module, e.status.label()));
        }
        let ran = unique.contains(&e.module);
        if ran == (want == "skipped") {
            return Err(format!("{}: {want} but ran = {ran}", e.module));
        }
        if let BuildStatus::Skipped { blamed } = &e.status {
            if !downstream.contains(&e.module) || !failed.contains(blamed) {
                return Err(format!("{} skipped but blames {blamed}", e.module));
            }
            let single: BTreeSet<ModuleName> = [blamed.clone()].into();
            if !downstream_of(graph, &single).contains(&e.module) {
                return Err(format!("{} does not depend on the blamed {blamed}", e.module));
            }
        }
    }
    let skipped = report.entries.iter().filter(|e| e.status.label() == "skipped").count();
    if skipped != downstream.len() {
        return Err(format!("{skipped} skipped but {} downstream of failures", downstream.len()));
    }
    Ok(())
}

/// A random DAG with a random failure set.
pub fn random_build_case<R: Rng>(rng: &mut R, max_nodes: usize) -> (ImportGraph, BTreeSet<ModuleName>) {
    let n = rng.gen_range(1..=max_nodes);
    let graph = random_dag(rng, n);
    let rate = rng.gen_range(0.0..0.2);
    let fail = (0..n).filter(|_| rng.gen_bool(rate)).map(module).collect();
    (graph, fail)
}

// ---------------------------------------------------------------- search

pub fn world(spec: WorldSpec) -> Arc<World> {
    Arc::new(World::new(spec).unwrap())
}

/// One attempt on a fresh session with the builtin generator.
pub fn search(
    world: &Arc<World>,
    theorem: &str,
    seed: u64,
    budget: ExpansionBudget,
    dedup: bool,
) -> Result<SearchOutcome, SearchError> {
    let mut generator = WorldGenerator::new(world.clone(), seed);
    let mut session = Session::new(SimulatedBackend::new(world.clone()));
    best_first_search(theorem, &mut generator, &mut session, budget, dedup)
}

/// The same world with every closing rule removed, so no theorem is
/// provable and search runs until the frontier is empty.
pub fn without_closers(mut spec: WorldSpec) -> WorldSpec {
    spec.rules.retain(|r| !r.successors.is_empty());
    spec
}
