//! Budgeted best-first proof search with transposition detection.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, Session, StateId, TacticResult};
use crate::build::split_template;
use crate::canon::{state_key_lossy, CanonicalKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionBudget {
    /// S: candidates requested per expansion.
    pub candidates_per_expansion: usize,
    /// K: maximum number of frontier pops.
    pub max_expansions: usize,
}

impl Default for ExpansionBudget {
    fn default() -> Self {
        ExpansionBudget { candidates_per_expansion: 32, max_expansions: 100 }
    }
}

impl ExpansionBudget {
    pub fn new(s: usize, k: usize) -> Option<Self> {
        (s >= 1 && k >= 1).then_some(ExpansionBudget { candidates_per_expansion: s, max_expansions: k })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TacticCandidate {
    #[serde(rename = "tactic")]
    pub text: String,
    /// Log-probability in nats, ≤ 0.
    #[serde(rename = "logprob")]
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("malformed candidate: {0}")]
    Malformed(String),
    #[error("generator failed: {0}")]
    Failed(String),
}

/// Proposes scored tactics for a state. Sampling seed and temperature are
/// fixed when the generator is built.
pub trait Generator {
    fn generate(&mut self, state: &str, count: usize) -> Result<Vec<TacticCandidate>, GeneratorError>;
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn generate(&mut self, state: &str, count: usize) -> Result<Vec<TacticCandidate>, GeneratorError> {
        (**self).generate(state, count)
    }
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    pub key: CanonicalKey,
    pub state_text: String,
    pub parent: Option<usize>,
    pub incoming_tactic: Option<String>,
    pub path_score: f64,
    pub depth: usize,
    state: Option<StateId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub expansions_used: usize,
    pub candidates_generated: usize,
    pub tactic_failures: usize,
    /// Root plus every successful non-closing tactic application that made
    /// progress.
    pub states_seen_raw: usize,
    pub states_unique: usize,
    pub duplicate_rate: f64,
}

impl SearchStats {
    fn finish(&mut self) {
        self.duplicate_rate =
            if self.states_seen_raw == 0 { 0.0 } else { 1.0 - self.states_unique as f64 / self.states_seen_raw as f64 };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum OutcomeKind {
    Proved { proof: Vec<String> },
    Exhausted,
    BudgetSpent,
}

impl OutcomeKind {
    pub fn label(&self) -> &'static str {
        match self {
            OutcomeKind::Proved { .. } => "proved",
            OutcomeKind::Exhausted => "exhausted",
            OutcomeKind::BudgetSpent => "budget_spent",
        }
    }

    pub fn proof(&self) -> Option<&[String]> {
        match self {
            OutcomeKind::Proved { proof } => Some(proof),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub kind: OutcomeKind,
    pub stats: SearchStats,
    /// Path scores in pop order.
    pub expansion_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchFailure {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("replay diverged at step {step}: {detail}")]
    ReplayMismatch { step: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{failure}")]
pub struct SearchError {
    pub failure: SearchFailure,
    pub stats: SearchStats,
}

struct Entry {
    score: f64,
    depth: usize,
    seq: usize,
    node: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // max-heap: higher score, then shallower, then earlier
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.depth.cmp(&self.depth))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn check_candidates(mut cands: Vec<TacticCandidate>, s: usize) -> Result<Vec<TacticCandidate>, GeneratorError> {
    cands.truncate(s);
    for c in &cands {
        if c.text.trim().is_empty() {
            return Err(GeneratorError::Malformed("empty tactic".into()));
        }
        if c.score.is_nan() || c.score > 0.0 {
            return Err(GeneratorError::Malformed(format!("score {} for '{}' is not ≤ 0", c.score, c.text)));
        }
    }
    Ok(cands)
}

/// Root-to-leaf tactics.
pub fn reconstruct_proof(nodes: &[SearchNode], leaf: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = Some(leaf);
    while let Some(i) = cur {
        if let Some(t) = &nodes[i].incoming_tactic {
            out.push(t.clone());
        }
        cur = nodes[i].parent;
    }
    out.reverse();
    out
}

/// Re-run `proof` from the theorem's initial state; it must end with no
/// goals.
pub fn replay<B: Backend>(session: &mut Session<B>, theorem: &str, proof: &[String]) -> Result<(), SearchFailure> {
    let mut state = session.init_theorem(theorem)?;
    for (step, tactic) in proof.iter().enumerate() {
        let last = step + 1 == proof.len();
        match session.run_tactic(state, tactic)? {
            TacticResult::Success { state: Some(next), .. } if !last => state = next,
            TacticResult::Success { state: None, .. } if last => return Ok(()),
            TacticResult::Success { goals, .. } => {
                return Err(SearchFailure::ReplayMismatch { step, detail: format!("{} goals remain", goals.len()) })
            }
            TacticResult::TacticError { message } => return Err(SearchFailure::ReplayMismatch { step, detail: message }),
        }
    }
    Err(SearchFailure::ReplayMismatch { step: 0, detail: "empty proof".into() })
}

pub fn best_first_search<B: Backend, G: Generator + ?Sized>(
    theorem: &str,
    generator: &mut G,
    session: &mut Session<B>,
    budget: ExpansionBudget,
    dedup: bool,
) -> Result<SearchOutcome, SearchError> {
    let mut stats = SearchStats::default();
    macro_rules! bail {
        ($e:expr) => {{
            stats.finish();
            return Err(SearchError { failure: $e.into(), stats });
        }};
    }

    let root_state = match session.init_theorem(theorem) {
        Ok(s) => s,
        Err(e) => bail!(e),
    };
    let root_text = session.state_text(root_state).expect("just issued").to_string();
    let root_key = state_key_lossy(&root_text).0;
    let mut seen: HashSet<u128> = HashSet::from([root_key.digest]);
    stats.states_seen_raw = 1;
    stats.states_unique = 1;
    let mut nodes = vec![SearchNode {
        key: root_key,
        state_text: root_text,
        parent: None,
        incoming_tactic: None,
        path_score: 0.0,
        depth: 0,
        state: Some(root_state),
    }];
    let mut frontier = BinaryHeap::from([Entry { score: 0.0, depth: 0, seq: 0, node: 0 }]);
    let mut seq = 1;
    let mut expansion_scores = Vec::new();

    while stats.expansions_used < budget.max_expansions {
        let Some(entry) = frontier.pop() else { break };
        stats.expansions_used += 1;
        expansion_scores.push(entry.score);
        let parent = entry.node;
        let (parent_state, parent_digest, parent_score, parent_depth) = {
            let n = &nodes[parent];
            (n.state.expect("open nodes have a state"), n.key.digest, n.path_score, n.depth)
        };
        let raw = match generator.generate(&nodes[parent].state_text, budget.candidates_per_expansion) {
            Ok(c) => c,
            Err(e) => bail!(e),
        };
        let candidates = match check_candidates(raw, budget.candidates_per_expansion) {
            Ok(c) => c,
            Err(e) => bail!(e),
        };
        stats.candidates_generated += candidates.len();
        for cand in candidates {
            let result = match session.run_tactic(parent_state, &cand.text) {
                Ok(r) => r,
                Err(e) => bail!(e),
            };
            let (goals, state) = match result {
                TacticResult::TacticError { .. } => {
                    stats.tactic_failures += 1;
                    continue;
                }
                TacticResult::Success { goals, state } => (goals, state),
            };
            let text = match state {
                Some(id) => session.state_text(id).expect("just issued").to_string(),
                None => crate::backend::join_goals(&goals),
            };
            let key = state_key_lossy(&text).0;
            let child = SearchNode {
                key,
                state_text: text,
                parent: Some(parent),
                incoming_tactic: Some(cand.text.clone()),
                path_score: parent_score + cand.score,
                depth: parent_depth + 1,
                state,
            };
            if state.is_none() {
                nodes.push(child);
                let proof = reconstruct_proof(&nodes, nodes.len() - 1);
                if let Err(e) = replay(session, theorem, &proof) {
                    bail!(e);
                }
                stats.finish();
                return Ok(SearchOutcome { kind: OutcomeKind::Proved { proof }, stats, expansion_scores });
            }
            if child.key.digest == parent_digest {
                continue;
            }
            stats.states_seen_raw += 1;
            let fresh = seen.insert(child.key.digest);
            if fresh {
                stats.states_unique += 1;
            } else if dedup {
                continue;
            }
            frontier.push(Entry { score: child.path_score, depth: child.depth, seq, node: nodes.len() });
            seq += 1;
            nodes.push(child);
        }
    }
    stats.finish();
    let kind = if frontier.is_empty() { OutcomeKind::Exhausted } else { OutcomeKind::BudgetSpent };
    Ok(SearchOutcome { kind, stats, expansion_scores })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub seed: u64,
    pub result: Result<SearchOutcome, SearchError>,
}

/// One independent search per seed, each with its own session and
/// generator; results come back in seed order.
pub fn run_attempts<B, G, BF, GF>(
    theorem: &str,
    generator_factory: GF,
    backend_factory: BF,
    budget: ExpansionBudget,
    dedup: bool,
    seeds: &[u64],
) -> Vec<Attempt>
where
    B: Backend,
    G: Generator,
    BF: Fn() -> Result<B, BackendError> + Sync,
    GF: Fn(u64) -> Result<G, GeneratorError> + Sync,
{
    let mut attempts: Vec<Attempt> = seeds
        .par_iter()
        .map(|&seed| {
            let result = (|| {
                let mut generator = generator_factory(seed)
                    .map_err(|e| SearchError { failure: e.into(), stats: SearchStats::default() })?;
                let backend = backend_factory().map_err(|e| SearchError { failure: e.into(), stats: SearchStats::default() })?;
                let mut session = Session::new(backend);
                best_first_search(theorem, &mut generator, &mut session, budget, dedup)
            })();
            Attempt { seed, result }
        })
        .collect();
    attempts.sort_by_key(|a| a.seed);
    attempts
}

/// Persisted form of one attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub theorem: String,
    /// `proved`, `exhausted`, `budget_spent` or `error`.
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proof: Option<Vec<String>>,
    pub expansions: usize,
    pub duplicate_rate: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl OutcomeRecord {
    pub fn from_attempt(theorem: &str, attempt: &Attempt) -> Self {
        match &attempt.result {
            Ok(o) => OutcomeRecord {
                theorem: theorem.to_string(),
                outcome: o.kind.label().to_string(),
                proof: o.kind.proof().map(<[String]>::to_vec),
                expansions: o.stats.expansions_used,
                duplicate_rate: o.stats.duplicate_rate,
                seed: attempt.seed,
                error: None,
            },
            Err(e) => OutcomeRecord {
                theorem: theorem.to_string(),
                outcome: "error".to_string(),
                proof: None,
                expansions: e.stats.expansions_used,
                duplicate_rate: e.stats.duplicate_rate,
                seed: attempt.seed,
                error: Some(e.failure.to_string()),
            },
        }
    }

    pub fn solved(&self) -> bool {
        self.outcome == "proved"
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    state: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    candidates: Vec<TacticCandidate>,
}

/// A generator child process: one `{"state":…}` line in, one
/// `{"candidates":[{"tactic":…,"logprob":…}]}` line out. A `{seed}`
/// placeholder in the command line is replaced by the attempt seed.
pub struct ProcessGenerator {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ProcessGenerator {
    pub fn spawn(template: &str, seed: u64) -> Result<Self, GeneratorError> {
        let words: Vec<String> = split_template(template).iter().map(|w| w.replace("{seed}", &seed.to_string())).collect();
        let (program, args) = words.split_first().ok_or_else(|| GeneratorError::Failed("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| GeneratorError::Failed(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().ok_or_else(|| GeneratorError::Failed("stdin unavailable".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| GeneratorError::Failed("stdout unavailable".into()))?;
        Ok(ProcessGenerator { child, stdin, stdout: BufReader::new(stdout) })
    }
}

impl Generator for ProcessGenerator {
    fn generate(&mut self, state: &str, _count: usize) -> Result<Vec<TacticCandidate>, GeneratorError> {
        let mut line = serde_json::to_string(&GenerateRequest { state }).expect("plain struct");
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| GeneratorError::Failed(e.to_string()))?;
        let mut reply = String::new();
        match self.stdout.read_line(&mut reply) {
            Ok(0) => Err(GeneratorError::Failed("generator exited".into())),
            Ok(_) => serde_json::from_str::<GenerateResponse>(&reply)
                .map(|r| r.candidates)
                .map_err(|e| GeneratorError::Malformed(e.to_string())),
            Err(e) => Err(GeneratorError::Failed(e.to_string())),
        }
    }
}

impl Drop for ProcessGenerator {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{RuleSpec, SimulatedBackend, TheoremSpec, World, WorldSpec};
    use std::sync::Arc;

    struct Fixed(Vec<(&'static str, f64)>);

    impl Generator for Fixed {
        fn generate(&mut self, _state: &str, _count: usize) -> Result<Vec<TacticCandidate>, GeneratorError> {
            Ok(self.0.iter().map(|(t, s)| TacticCandidate { text: t.to_string(), score: *s }).collect())
        }
    }

    fn rule(state: &str, tactic: &str, successors: &[&str]) -> RuleSpec {
        RuleSpec {
            state: state.into(),
            tactic: tactic.into(),
            successors: successors.iter().map(|s| s.to_string()).collect(),
            logprob: None,
        }
    }

    fn session(rules: Vec<RuleSpec>) -> Session<SimulatedBackend> {
        let world = World::new(WorldSpec {
            theorems: vec![TheoremSpec { name: "t".into(), initial: "⊢ A".into() }],
            rules,
            ..Default::default()
        })
        .unwrap();
        Session::new(SimulatedBackend::new(Arc::new(world)))
    }

    #[test]
    fn first_candidate_closes() {
        let mut s = session(vec![rule("⊢ A", "done", &[])]);
        let out = best_first_search("t", &mut Fixed(vec![("done", -0.1)]), &mut s, ExpansionBudget::default(), true).unwrap();
        assert_eq!(out.kind, OutcomeKind::Proved { proof: vec!["done".into()] });
        assert_eq!(out.stats.expansions_used, 1);
    }

    #[test]
    fn exhausted_and_budget() {
        let rules = vec![rule("⊢ A", "step", &["⊢ B"]), rule("⊢ B", "step", &["⊢ C"])];
        let gen = || Fixed(vec![("step", -1.0), ("bogus", -0.5)]);
        let out = best_first_search("t", &mut gen(), &mut session(rules.clone()), ExpansionBudget::default(), true).unwrap();
        assert_eq!(out.kind, OutcomeKind::Exhausted);
        assert_eq!(out.stats.expansions_used, 3);
        assert_eq!(out.stats.tactic_failures, 4);
        assert_eq!(out.stats.candidates_generated, 6);
        assert_eq!(out.expansion_scores, [0.0, -1.0, -2.0]);
        let out = best_first_search("t", &mut gen(), &mut session(rules), ExpansionBudget::new(32, 2).unwrap(), true).unwrap();
        assert_eq!(out.kind, OutcomeKind::BudgetSpent);
        assert_eq!(out.stats.expansions_used, 2);
    }

    #[test]
    fn no_progress_children_discarded() {
        let rules = vec![rule("⊢ A", "skip", &["⊢ A"])];
        let out = best_first_search("t", &mut Fixed(vec![("skip", 0.0)]), &mut session(rules), ExpansionBudget::default(), false)
            .unwrap();
        assert_eq!(out.kind, OutcomeKind::Exhausted);
        assert_eq!(out.stats.expansions_used, 1);
        assert_eq!(out.stats.states_seen_raw, 1);
    }

    #[test]
    fn transpositions_merged_only_with_dedup() {
        // two routes to ⊢ C
        let rules = vec![
            rule("⊢ A", "left", &["⊢ B1"]),
            rule("⊢ A", "right", &["⊢ B2"]),
            rule("⊢ B1", "join", &["⊢ C"]),
            rule("⊢ B2", "join", &["⊢ C"]),
        ];
        let gen = || Fixed(vec![("left", -1.0), ("right", -1.0), ("join", -1.0)]);
        let on = best_first_search("t", &mut gen(), &mut session(rules.clone()), ExpansionBudget::default(), true).unwrap();
        let off = best_first_search("t", &mut gen(), &mut session(rules), ExpansionBudget::default(), false).unwrap();
        assert_eq!((on.stats.expansions_used, off.stats.expansions_used), (4, 5));
        assert_eq!(on.stats.states_unique, off.stats.states_unique);
        assert_eq!(on.stats.states_seen_raw, 5);
        assert!((on.stats.duplicate_rate - 0.2).abs() < 1e-12);
    }

    #[test]
    fn tie_break_prefers_shallow_then_fifo() {
        let rules = vec![
            rule("⊢ A", "a", &["⊢ B"]),
            rule("⊢ A", "b", &["⊢ C"]),
            rule("⊢ B", "a", &["⊢ D"]),
            rule("⊢ C", "done", &[]),
        ];
        // zero scores everywhere: B (seq 1) then C (seq 2) before D (depth 2)
        let mut gen = Fixed(vec![("a", 0.0), ("b", 0.0), ("done", 0.0)]);
        let out = best_first_search("t", &mut gen, &mut session(rules), ExpansionBudget::default(), true).unwrap();
        assert_eq!(out.kind, OutcomeKind::Proved { proof: vec!["b".into(), "done".into()] });
        assert_eq!(out.stats.expansions_used, 3);
    }

    #[test]
    fn malformed_candidates_rejected() {
        let mut s = session(vec![]);
        let err = best_first_search("t", &mut Fixed(vec![("x", 0.5)]), &mut s, ExpansionBudget::default(), true).unwrap_err();
        assert!(matches!(err.failure, SearchFailure::Generator(GeneratorError::Malformed(_))));
        assert_eq!(err.stats.expansions_used, 1);
        let err = best_first_search("t", &mut Fixed(vec![(" ", -0.5)]), &mut s, ExpansionBudget::default(), true).unwrap_err();
        assert!(matches!(err.failure, SearchFailure::Generator(_)));
    }

    #[test]
    fn candidates_truncated_to_s() {
        let mut s = session(vec![]);
        let gen = &mut Fixed(vec![("x", -1.0), ("y", -1.0), ("z", -1.0)]);
        let out = best_first_search("t", gen, &mut s, ExpansionBudget::new(2, 5).unwrap(), true).unwrap();
        assert_eq!(out.stats.candidates_generated, 2);
    }

    #[test]
    fn unknown_theorem_is_an_error() {
        let err = best_first_search("zzz", &mut Fixed(vec![]), &mut session(vec![]), ExpansionBudget::default(), true).unwrap_err();
        assert!(matches!(err.failure, SearchFailure::Backend(BackendError::Remote(_))));
    }

    #[test]
    fn replay_detects_divergence() {
        let mut s = session(vec![rule("⊢ A", "step", &["⊢ B"])]);
        assert!(matches!(replay(&mut s, "t", &["step".into()]), Err(SearchFailure::ReplayMismatch { step: 0, .. })));
        assert!(matches!(replay(&mut s, "t", &["nope".into()]), Err(SearchFailure::ReplayMismatch { .. })));
    }

    #[test]
    fn attempts_in_seed_order() {
        let world = Arc::new(
            World::new(WorldSpec {
                theorems: vec![TheoremSpec { name: "t".into(), initial: "⊢ A".into() }],
                rules: vec![rule("⊢ A", "done", &[])],
                ..Default::default()
            })
            .unwrap(),
        );
        let attempts = run_attempts(
            "t",
            |_| Ok::<_, GeneratorError>(Fixed(vec![("done", -0.1)])),
            || Ok(SimulatedBackend::new(world.clone())),
            ExpansionBudget::default(),
            true,
            &[3, 1, 2],
        );
        assert_eq!(attempts.iter().map(|a| a.seed).collect::<Vec<_>>(), [1, 2, 3]);
        let first = attempts[0].result.clone().unwrap();
        assert!(attempts.iter().all(|a| a.result.as_ref().unwrap() == &first));
        let rec = OutcomeRecord::from_attempt("t", &attempts[0]);
        assert_eq!(
            serde_json::to_string(&rec).unwrap(),
            r#"{"theorem":"t","outcome":"proved","proof":["done"],"expansions":1,"duplicate_rate":0.0,"seed":1}"#
        );
    }
}
