//! A simulated checker backend.
//!
//! A [`World`] is a finite table of theorems and tactic rules. Rules are
//! keyed by the canonical form of the state and of the tactic, so a rule
//! written against one naming of the hypotheses applies to every
//! α-variant of that state. Successor goals are translated back into the
//! caller's hypothesis names; hypotheses a rule introduces keep the names
//! written in the rule unless the world randomizes fresh names.

pub mod generator;
pub mod source;
pub mod worlds;

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{join_goals, Backend, BackendError, Envelope, Request, Response};
use crate::canon::{goal_renaming, parse_state, rename_identifiers, render, state_key, Goal, ProofState};
use crate::trace::{TacticStep, TheoremRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremSpec {
    pub name: String,
    pub initial: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub state: String,
    pub tactic: String,
    /// One goal text per successor goal; empty closes the goal.
    pub successors: Vec<String>,
    /// Score the builtin generator gives this tactic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldSpec {
    #[serde(default)]
    pub theorems: Vec<TheoremSpec>,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    /// Tactics the builtin generator proposes everywhere; they fail unless
    /// a rule says otherwise.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distractors: Vec<String>,
    /// Extracting a path ending in one of these kills the session.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crash_paths: Vec<String>,
    /// When set, every hypothesis a rule introduces gets a fresh random
    /// name drawn from this seed, the state and the tactic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomize_names: Option<u64>,
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("cannot read world {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed world: {0}")]
    Format(String),
    #[error("rule {index}: {reason}")]
    BadRule { index: usize, reason: String },
    #[error("theorem {name}: {reason}")]
    BadTheorem { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct RuleKey {
    state: u128,
    tactic: String,
}

#[derive(Debug, Clone)]
pub struct World {
    spec: WorldSpec,
    theorems: HashMap<String, String>,
    rules: HashMap<RuleKey, usize>,
    by_state: HashMap<u128, Vec<usize>>,
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Tactic text with the state's goal-0 hypotheses in canonical names.
fn canonical_tactic(state: &ProofState, tactic: &str) -> String {
    collapse(&rename_identifiers(tactic, &goal_renaming(&state.goals()[0])))
}

fn single_goal(goal: &Goal) -> ProofState {
    ProofState::new(vec![goal.clone()]).expect("goal came from a parsed state")
}

/// Split a state into one rendered text per goal.
pub fn goal_texts(state: &ProofState) -> Vec<String> {
    state.goals().iter().map(|g| render(&single_goal(g))).collect()
}

impl World {
    pub fn new(spec: WorldSpec) -> Result<Self, WorldError> {
        let mut theorems = HashMap::new();
        for t in &spec.theorems {
            parse_state(&t.initial)
                .map_err(|e| WorldError::BadTheorem { name: t.name.clone(), reason: e.to_string() })?;
            if theorems.insert(t.name.clone(), t.initial.clone()).is_some() {
                return Err(WorldError::BadTheorem { name: t.name.clone(), reason: "declared twice".into() });
            }
        }
        let mut rules = HashMap::new();
        let mut by_state: HashMap<u128, Vec<usize>> = HashMap::new();
        for (index, rule) in spec.rules.iter().enumerate() {
            let bad = |reason: String| WorldError::BadRule { index, reason };
            let state = parse_state(&rule.state).map_err(|e| bad(e.to_string()))?;
            for s in &rule.successors {
                let parsed = parse_state(s).map_err(|e| bad(format!("successor: {e}")))?;
                if parsed.goals().len() != 1 {
                    return Err(bad("each successor must be a single goal".into()));
                }
            }
            if rule.logprob.is_some_and(|p| p.is_nan() || p > 0.0) {
                return Err(bad("logprob must be ≤ 0".into()));
            }
            let digest = state_key(&rule.state).map_err(|e| bad(e.to_string()))?.digest;
            let key = RuleKey { state: digest, tactic: canonical_tactic(&state, &rule.tactic) };
            if rules.insert(key, index).is_some() {
                return Err(bad("duplicates an earlier rule".into()));
            }
            by_state.entry(digest).or_default().push(index);
        }
        Ok(World { spec, theorems, rules, by_state })
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let spec: WorldSpec = serde_json::from_str(text).map_err(|e| WorldError::Format(e.to_string()))?;
        World::new(spec)
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| WorldError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        World::from_json(&text)
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn initial_state(&self, theorem: &str) -> Option<&str> {
        self.theorems.get(theorem).map(String::as_str)
    }

    /// Tactics with a rule at `state`, written in `state`'s own names, in
    /// rule declaration order.
    pub fn applicable(&self, state: &str) -> Vec<(&RuleSpec, String)> {
        let Ok(parsed) = parse_state(state) else { return Vec::new() };
        let Ok(key) = state_key(state) else { return Vec::new() };
        let inverse: HashMap<String, String> =
            goal_renaming(&parsed.goals()[0]).into_iter().map(|(actual, canon)| (canon, actual)).collect();
        self.by_state
            .get(&key.digest)
            .into_iter()
            .flatten()
            .map(|&i| {
                let rule = &self.spec.rules[i];
                let rule_state = parse_state(&rule.state).expect("validated at load");
                let to_caller: HashMap<String, String> = goal_renaming(&rule_state.goals()[0])
                    .into_iter()
                    .filter_map(|(r, canon)| inverse.get(&canon).map(|a| (r, a.clone())))
                    .collect();
                (rule, rename_identifiers(&rule.tactic, &to_caller))
            })
            .collect()
    }

    /// Apply `tactic` at `state`; `Ok` holds the successor goals.
    pub fn apply(&self, state: &str, tactic: &str) -> Result<Vec<String>, String> {
        let parsed = parse_state(state).map_err(|e| format!("cannot parse state: {e}"))?;
        let digest = state_key(state).map_err(|e| e.to_string())?.digest;
        let key = RuleKey { state: digest, tactic: canonical_tactic(&parsed, tactic) };
        let Some(&index) = self.rules.get(&key) else {
            return Err(format!("tactic '{}' failed", collapse(tactic)));
        };
        let rule = &self.spec.rules[index];
        let rule_state = parse_state(&rule.state).expect("validated at load");

        // rule names → caller names, goal 0 first
        let mut map: HashMap<String, String> = HashMap::new();
        for (rg, ag) in rule_state.goals().iter().zip(parsed.goals()) {
            for (r, a) in rg.hypothesis_names().zip(ag.hypothesis_names()) {
                map.entry(r.to_string()).or_insert_with(|| a.to_string());
            }
        }
        let parent_names: HashSet<&str> = parsed.goals().iter().flat_map(|g| g.hypothesis_names()).collect();

        let mut out = Vec::with_capacity(rule.successors.len());
        for (gi, succ) in rule.successors.iter().enumerate() {
            let renamed = rename_identifiers(succ, &map);
            let goal = parse_state(&renamed).map_err(|e| format!("rule successor does not parse after renaming: {e}"))?;
            let text = match self.spec.randomize_names {
                Some(seed) => {
                    let fresh = fresh_names(seed, state, tactic, gi, &goal.goals()[0], &parent_names);
                    render(&parse_state(&rename_identifiers(&render(&goal), &fresh)).map_err(|e| e.to_string())?)
                }
                None => render(&goal),
            };
            out.push(text);
        }
        Ok(out)
    }
}

fn rng_for(seed: u64, state: &str, tactic: &str, goal: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(state.as_bytes());
    h.update([0]);
    h.update(tactic.as_bytes());
    h.update((goal as u64).to_be_bytes());
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(bytes)
}

fn fresh_names(
    seed: u64,
    state: &str,
    tactic: &str,
    goal_index: usize,
    goal: &Goal,
    parent_names: &HashSet<&str>,
) -> HashMap<String, String> {
    let mut rng = rng_for(seed, state, tactic, goal_index);
    let mut taken: HashSet<String> = goal.hypothesis_names().map(String::from).collect();
    let mut map = HashMap::new();
    for name in goal.hypothesis_names() {
        if parent_names.contains(name) {
            continue;
        }
        let fresh = loop {
            let suffix: String = (0..5).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
            let candidate = format!("h_{suffix}");
            if taken.insert(candidate.clone()) {
                break candidate;
            }
        };
        map.insert(name.to_string(), fresh);
    }
    map
}

/// Simulated extraction of one source file: every `theorem`/`lemma` is
/// replayed through the world's rules. A failing tactic ends the trace
/// with an `error:` state.
pub fn extract_source(world: &World, text: &str) -> Vec<TheoremRecord> {
    source::scan_declarations(text)
        .into_iter()
        .map(|decl| {
            let mut tactics = Vec::new();
            let initial = world
                .initial_state(&decl.full_name)
                .map(String::from)
                .or_else(|| source::initial_state_from_statement(&decl.statement));
            if let Some(mut state) = initial.filter(|_| !decl.tactics.is_empty()) {
                if let Ok(parsed) = parse_state(&state) {
                    state = join_goals(&goal_texts(&parsed));
                }
                for tactic in &decl.tactics {
                    let (after, ok) = match world.apply(&state, tactic) {
                        Ok(goals) => (join_goals(&goals), true),
                        Err(message) => (format!("error: {message}"), false),
                    };
                    tactics.push(TacticStep { state_before: state, tactic: tactic.clone(), state_after: after.clone() });
                    if !ok {
                        break;
                    }
                    state = after;
                }
            }
            TheoremRecord {
                url: String::new(),
                commit: String::new(),
                file_path: String::new(),
                full_name: decl.full_name,
                start: decl.start,
                end: decl.end,
                statement: decl.statement,
                tactics,
            }
        })
        .collect()
}

/// In-process backend over a [`World`]. Only states this session issued
/// are accepted by `run_tactic`.
pub struct SimulatedBackend {
    world: Arc<World>,
    issued: HashSet<String>,
    dead: bool,
}

impl SimulatedBackend {
    pub fn new(world: Arc<World>) -> Self {
        SimulatedBackend { world, issued: HashSet::new(), dead: false }
    }

    fn handle(&mut self, request: Request) -> Result<Response, BackendError> {
        Ok(match request {
            Request::InitTheorem { theorem } => match self.world.initial_state(&theorem) {
                Some(text) => {
                    let goals = goal_texts(&parse_state(text).expect("validated at load"));
                    self.issued.insert(join_goals(&goals));
                    Response::states(goals)
                }
                None => Response::error(format!("unknown theorem {theorem}")),
            },
            Request::RunTactic { state, tactic } => {
                if !self.issued.contains(&state) {
                    return Ok(Response::error("state was not issued by this session"));
                }
                match self.world.apply(&state, &tactic) {
                    Ok(goals) => {
                        if !goals.is_empty() {
                            self.issued.insert(join_goals(&goals));
                        }
                        Response::states(goals)
                    }
                    Err(message) => Response::error(message),
                }
            }
            Request::ExtractFile { path } => {
                if self.world.spec.crash_paths.iter().any(|c| path.ends_with(c.as_str())) {
                    self.dead = true;
                    return Err(BackendError::SessionDead);
                }
                match std::fs::read_to_string(&path) {
                    Ok(text) => Response::records(extract_source(&self.world, &text)),
                    Err(e) => Response::error(format!("cannot read {path}: {e}")),
                }
            }
        })
    }
}

impl Backend for SimulatedBackend {
    fn call(&mut self, request: Envelope<Request>) -> Result<Envelope<Response>, BackendError> {
        if self.dead {
            return Err(BackendError::SessionDead);
        }
        let body = self.handle(request.body)?;
        Ok(Envelope { id: request.id, body })
    }
}
