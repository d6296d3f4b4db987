//! Proof-state parsing and renaming-invariant canonical keys.
//!
//! Tactics such as `intro` and `have` introduce hypotheses under arbitrary
//! names, so a tree search keeps meeting states that differ only in those
//! names. Renaming every hypothesis to `_h0, _h1, …` in declaration order
//! (per goal) collapses such states onto one canonical text, which is then
//! hashed into a [`CanonicalKey`].
//!
//! Declaration order in the pretty-printed state stands in for the kernel's
//! local-context order. Rewriting is token based: an identifier is renamed
//! only when it is a whole token that is not the tail of a dotted name, so
//! `h` never touches `h2`, `hab` or `Foo.h`. Binder shadowing inside `∀`/`λ`
//! bodies is not tracked.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ident::{is_id_first, is_id_rest, is_identifier};

/// Prefix of canonical hypothesis names.
pub const CANONICAL_PREFIX: &str = "_h";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HypDecl {
    pub names: Vec<String>,
    pub type_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Goal {
    /// `case` tag printed above the goal, if any.
    pub case_tag: Option<String>,
    pub hypotheses: Vec<HypDecl>,
    pub target: String,
}

impl Goal {
    /// Hypothesis names in declaration order, grouped binders flattened.
    pub fn hypothesis_names(&self) -> impl Iterator<Item = &str> {
        self.hypotheses.iter().flat_map(|h| h.names.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProofState {
    goals: Vec<Goal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

impl ParseError {
    fn new(line: usize, reason: impl Into<String>) -> Self {
        ParseError { line, reason: reason.into() }
    }
}

impl ProofState {
    /// Build a state from goals, checking the structural invariants.
    pub fn new(goals: Vec<Goal>) -> Result<Self, ParseError> {
        if goals.is_empty() {
            return Err(ParseError::new(0, "state has no goals"));
        }
        for goal in &goals {
            check_goal(goal, 0)?;
        }
        Ok(ProofState { goals })
    }

    pub fn goals(&self) -> &[Goal] {
        &self.goals
    }
}

fn check_goal(goal: &Goal, line: usize) -> Result<(), ParseError> {
    if goal.target.trim().is_empty() {
        return Err(ParseError::new(line, "empty target"));
    }
    let mut seen = HashSet::new();
    for hyp in &goal.hypotheses {
        if hyp.names.is_empty() {
            return Err(ParseError::new(line, "hypothesis without names"));
        }
        if hyp.type_text.trim().is_empty() {
            return Err(ParseError::new(line, format!("hypothesis {} has an empty type", hyp.names[0])));
        }
        for name in &hyp.names {
            if !seen.insert(name.as_str()) {
                return Err(ParseError::new(line, format!("duplicate hypothesis name {name}")));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Last {
    Nothing,
    Hyp,
    Target,
}

#[derive(Default)]
struct GoalBuilder {
    start_line: usize,
    case_tag: Option<String>,
    hypotheses: Vec<HypDecl>,
    target: Option<String>,
}

impl GoalBuilder {
    fn is_empty(&self) -> bool {
        self.case_tag.is_none() && self.hypotheses.is_empty() && self.target.is_none()
    }

    fn finish(self, goals: &mut Vec<Goal>) -> Result<(), ParseError> {
        if self.is_empty() {
            return Ok(());
        }
        let Some(target) = self.target else {
            return Err(ParseError::new(self.start_line, "goal has no ⊢ line"));
        };
        let goal = Goal { case_tag: self.case_tag, hypotheses: self.hypotheses, target };
        check_goal(&goal, self.start_line)?;
        goals.push(goal);
        Ok(())
    }
}

/// Parse a pretty-printed proof state.
///
/// Each goal is an optional `case tag` line, hypothesis lines
/// `n₁ … nₖ : type`, and one `⊢ target` line. Indented lines continue the
/// previous hypothesis type or target. Goals are separated by blank lines
/// or `case` headers.
pub fn parse_state(text: &str) -> Result<ProofState, ParseError> {
    let mut goals = Vec::new();
    let mut cur = GoalBuilder::default();
    let mut last = Last::Nothing;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if cur.target.is_none() && !cur.is_empty() {
                return Err(ParseError::new(lineno, "blank line before ⊢"));
            }
            std::mem::take(&mut cur).finish(&mut goals)?;
            last = Last::Nothing;
            continue;
        }
        if line.starts_with(char::is_whitespace) {
            match last {
                Last::Hyp => {
                    let hyp = cur.hypotheses.last_mut().expect("hypothesis present");
                    hyp.type_text.push('\n');
                    hyp.type_text.push_str(line);
                }
                Last::Target => {
                    let target = cur.target.as_mut().expect("target present");
                    target.push('\n');
                    target.push_str(line);
                }
                Last::Nothing => {
                    return Err(ParseError::new(lineno, "continuation line without a declaration"));
                }
            }
            continue;
        }
        if line == "case" || line.starts_with("case ") {
            if cur.target.is_none() && !cur.is_empty() {
                return Err(ParseError::new(cur.start_line, "goal has no ⊢ line"));
            }
            std::mem::take(&mut cur).finish(&mut goals)?;
            let tag = line["case".len()..].trim();
            cur.start_line = lineno;
            cur.case_tag = (!tag.is_empty()).then(|| tag.to_string());
            last = Last::Nothing;
            continue;
        }
        if let Some(rest) = line.strip_prefix('⊢') {
            if cur.target.is_some() {
                std::mem::take(&mut cur).finish(&mut goals)?;
            }
            if cur.is_empty() {
                cur.start_line = lineno;
            }
            cur.target = Some(rest.strip_prefix(' ').unwrap_or(rest).to_string());
            last = Last::Target;
            continue;
        }
        if cur.target.is_some() {
            std::mem::take(&mut cur).finish(&mut goals)?;
        }
        if cur.is_empty() {
            cur.start_line = lineno;
        }
        cur.hypotheses.push(parse_hyp_line(line, lineno)?);
        last = Last::Hyp;
    }
    if cur.target.is_none() && !cur.is_empty() {
        return Err(ParseError::new(cur.start_line, "goal has no ⊢ line"));
    }
    cur.finish(&mut goals)?;
    if goals.is_empty() {
        return Err(ParseError::new(1, "no goals found"));
    }
    Ok(ProofState { goals })
}

fn parse_hyp_line(line: &str, lineno: usize) -> Result<HypDecl, ParseError> {
    let (names, type_text) = match line.find(" : ") {
        Some(pos) => (&line[..pos], &line[pos + 3..]),
        None => match line.strip_suffix(" :") {
            Some(names) => (names, ""),
            None => return Err(ParseError::new(lineno, format!("malformed declaration line: {line}"))),
        },
    };
    let names: Vec<String> = names.split_whitespace().map(str::to_string).collect();
    if names.is_empty() {
        return Err(ParseError::new(lineno, "declaration without names"));
    }
    if let Some(bad) = names.iter().find(|n| !is_identifier(n)) {
        return Err(ParseError::new(lineno, format!("invalid hypothesis name {bad}")));
    }
    Ok(HypDecl { names, type_text: type_text.to_string() })
}

/// Deterministic rendering; `parse_state(&render(s)) == s`.
pub fn render(state: &ProofState) -> String {
    let mut out = String::new();
    for (i, goal) in state.goals.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        if let Some(tag) = &goal.case_tag {
            out.push_str("case ");
            out.push_str(tag);
            out.push('\n');
        }
        for hyp in &goal.hypotheses {
            out.push_str(&hyp.names.join(" "));
            out.push_str(" : ");
            out.push_str(&hyp.type_text);
            out.push('\n');
        }
        out.push_str("⊢ ");
        out.push_str(&goal.target);
    }
    out
}

impl fmt::Display for ProofState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self))
    }
}

/// Rewrite whole identifier tokens of `text` through `map`. A token is
/// only considered when it is not preceded by an identifier character or
/// a dot.
pub fn rename_identifiers(text: &str, map: &HashMap<String, String>) -> String {
    if map.is_empty() {
        return text.to_string();
    }
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let boundary = i == 0 || !(is_id_rest(chars[i - 1]) || chars[i - 1] == '.');
        if boundary && is_id_first(c) {
            let start = i;
            while i < chars.len() && is_id_rest(chars[i]) {
                i += 1;
            }
            let token: String = chars[start..i].iter().collect();
            match map.get(&token) {
                Some(new) => out.push_str(new),
                None => out.push_str(&token),
            }
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

/// The actual-name → canonical-name map for one goal.
pub fn goal_renaming(goal: &Goal) -> HashMap<String, String> {
    goal.hypothesis_names()
        .enumerate()
        .map(|(i, n)| (n.to_string(), format!("{CANONICAL_PREFIX}{i}")))
        .collect()
}

fn canonicalize_goal(goal: &Goal) -> Goal {
    let mut map = HashMap::new();
    let mut next = 0usize;
    let mut hypotheses = Vec::with_capacity(goal.hypotheses.len());
    for hyp in &goal.hypotheses {
        let type_text = rename_identifiers(&hyp.type_text, &map);
        let names = hyp
            .names
            .iter()
            .map(|n| {
                let canonical = format!("{CANONICAL_PREFIX}{next}");
                next += 1;
                map.insert(n.clone(), canonical.clone());
                canonical
            })
            .collect();
        hypotheses.push(HypDecl { names, type_text });
    }
    Goal {
        case_tag: goal.case_tag.clone(),
        hypotheses,
        target: rename_identifiers(&goal.target, &map),
    }
}

/// Rename hypotheses to `_h0, _h1, …` in declaration order within each goal.
pub fn canonicalize(state: &ProofState) -> ProofState {
    ProofState { goals: state.goals.iter().map(canonicalize_goal).collect() }
}

/// 128-bit digest of a canonical rendering.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CanonicalKey {
    pub digest: u128,
    pub canonical_text: String,
}

impl CanonicalKey {
    pub fn from_text(canonical_text: String) -> Self {
        CanonicalKey { digest: digest128(&canonical_text), canonical_text }
    }

    pub fn hex(&self) -> String {
        format!("{:032x}", self.digest)
    }
}

/// First 128 bits of SHA-256, big-endian.
pub fn digest128(text: &str) -> u128 {
    let hash = Sha256::digest(text.as_bytes());
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&hash[..16]);
    u128::from_be_bytes(bytes)
}

pub fn state_key(state_text: &str) -> Result<CanonicalKey, ParseError> {
    let state = parse_state(state_text)?;
    Ok(CanonicalKey::from_text(render(&canonicalize(&state))))
}

/// Like [`state_key`] but falls back to hashing the raw text. The flag is
/// false for the fallback.
pub fn state_key_lossy(state_text: &str) -> (CanonicalKey, bool) {
    match state_key(state_text) {
        Ok(key) => (key, true),
        Err(_) => (CanonicalKey::from_text(state_text.to_string()), false),
    }
}
