//! Extracted theorem traces and their validation.

use serde::{Deserialize, Serialize};

use crate::canon::state_key_lossy;

/// Final `state_after` of a finished proof.
pub const NO_GOALS: &str = "no goals";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TacticStep {
    pub state_before: String,
    pub tactic: String,
    pub state_after: String,
}

/// One theorem or lemma with its tactic trace. Positions are
/// `(line, column)`, lines 1-based and columns 0-based in characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TheoremRecord {
    pub url: String,
    pub commit: String,
    pub file_path: String,
    pub full_name: String,
    pub start: (usize, usize),
    pub end: (usize, usize),
    pub statement: String,
    pub tactics: Vec<TacticStep>,
}

impl TheoremRecord {
    /// Term-mode proofs carry no tactic steps.
    pub fn is_tactic_proof(&self) -> bool {
        !self.tactics.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        validate_record(self).is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    NonTactic,
    EmptyName,
    InvalidPosition,
    EmptyStateBefore { index: usize },
    EmptyTactic { index: usize },
    /// Step `index`'s `state_before` does not match step `index - 1`'s
    /// `state_after` up to hypothesis renaming.
    ChainBreak { index: usize },
    /// The last `state_after` is not the sentinel.
    Unfinished,
}

pub fn validate_record(record: &TheoremRecord) -> Vec<Violation> {
    validate_record_with(record, NO_GOALS)
}

pub fn validate_record_with(record: &TheoremRecord, sentinel: &str) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.full_name.trim().is_empty() {
        out.push(Violation::EmptyName);
    }
    if record.start > record.end {
        out.push(Violation::InvalidPosition);
    }
    if record.tactics.is_empty() {
        out.push(Violation::NonTactic);
        return out;
    }
    for (i, step) in record.tactics.iter().enumerate() {
        if step.state_before.trim().is_empty() {
            out.push(Violation::EmptyStateBefore { index: i });
        }
        if step.tactic.trim().is_empty() {
            out.push(Violation::EmptyTactic { index: i });
        }
        if i > 0 && !same_state(&record.tactics[i - 1].state_after, &step.state_before) {
            out.push(Violation::ChainBreak { index: i });
        }
    }
    if record.tactics.last().is_some_and(|s| s.state_after != sentinel) {
        out.push(Violation::Unfinished);
    }
    out
}

fn same_state(a: &str, b: &str) -> bool {
    a == b || state_key_lossy(a).0.canonical_text == state_key_lossy(b).0.canonical_text
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(before: &str, tactic: &str, after: &str) -> TacticStep {
        TacticStep { state_before: before.into(), tactic: tactic.into(), state_after: after.into() }
    }

    fn record(tactics: Vec<TacticStep>) -> TheoremRecord {
        TheoremRecord {
            url: "u".into(),
            commit: "c".into(),
            file_path: "A.lean".into(),
            full_name: "A.t".into(),
            start: (1, 0),
            end: (3, 10),
            statement: "(p q : Prop) : p → q → p".into(),
            tactics,
        }
    }

    fn two_step() -> TheoremRecord {
        record(vec![
            step("p q : Prop\n⊢ p → q → p", "intro hp hq", "p q : Prop\nhp : p\nhq : q\n⊢ p"),
            step("p q : Prop\nhp : p\nhq : q\n⊢ p", "exact hp", NO_GOALS),
        ])
    }

    #[test]
    fn well_formed() {
        assert_eq!(validate_record(&two_step()), vec![]);
    }

    #[test]
    fn broken_chain() {
        let mut r = two_step();
        r.tactics[1].state_before = "p q : Prop\nhp : q\n⊢ p".into();
        assert_eq!(validate_record(&r), vec![Violation::ChainBreak { index: 1 }]);
    }

    #[test]
    fn renamed_chain_is_connected() {
        let mut r = two_step();
        r.tactics[1].state_before = "p q : Prop\nh1 : p\nh2 : q\n⊢ p".into();
        r.tactics[1].tactic = "exact h1".into();
        assert_eq!(validate_record(&r), vec![]);
    }

    #[test]
    fn term_mode() {
        let r = record(vec![]);
        assert!(!r.is_tactic_proof());
        assert_eq!(validate_record(&r), vec![Violation::NonTactic]);
    }

    #[test]
    fn unfinished_and_custom_sentinel() {
        let mut r = two_step();
        r.tactics[1].state_after = "Goals accomplished".into();
        assert_eq!(validate_record(&r), vec![Violation::Unfinished]);
        assert_eq!(validate_record_with(&r, "Goals accomplished"), vec![]);
    }

    #[test]
    fn positions_and_names() {
        let mut r = two_step();
        r.start = (5, 0);
        r.full_name = " ".into();
        assert_eq!(validate_record(&r), vec![Violation::EmptyName, Violation::InvalidPosition]);
    }

    #[test]
    fn serialized_field_set() {
        let v = serde_json::to_value(two_step()).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["commit", "end", "file_path", "full_name", "start", "statement", "tactics", "url"]);
        assert_eq!(v["start"], serde_json::json!([1, 0]));
    }
}
