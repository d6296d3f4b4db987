//! Generated simulated worlds used by tests, fixtures and the CLI.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RuleSpec, TheoremSpec, WorldSpec};

const DISTRACTORS: [&str; 6] = ["decide", "tauto", "exact?", "nlinarith", "positivity", "simp_all"];

const REWRITES: [&str; 8] =
    ["simp", "ring_nf", "norm_num", "omega", "push_neg", "rw [Nat.add_comm]", "simp only [Nat.mul_comm]", "unfold f"];

const CLOSERS: [&str; 6] = ["simp", "omega", "rfl", "trivial", "aesop", "linarith"];

#[derive(Clone)]
struct Shape {
    hyps: Vec<(String, String)>,
    targets: Vec<String>,
}

impl Shape {
    fn goal(&self, target: &str) -> String {
        let mut lines: Vec<String> = self.hyps.iter().map(|(n, t)| format!("{n} : {t}")).collect();
        lines.push(format!("⊢ {target}"));
        lines.join("\n")
    }

    fn goals(&self) -> Vec<String> {
        self.targets.iter().map(|t| self.goal(t)).collect()
    }

    fn text(&self) -> String {
        self.goals().join("\n\n")
    }
}

fn rule(state: &Shape, tactic: &str, successors: Vec<String>) -> RuleSpec {
    RuleSpec { state: state.text(), tactic: tactic.to_string(), successors, logprob: None }
}

/// Theorems with exactly one proof of depth 1 to 5 and a few dead-end
/// branches off the main line.
pub fn puzzle_world(theorems: usize, seed: u64) -> WorldSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = WorldSpec { distractors: DISTRACTORS.iter().map(|s| s.to_string()).collect(), ..Default::default() };
    for k in 0..theorems {
        let depth = rng.gen_range(1..=5);
        let mut cur = Shape { hyps: vec![("a b".into(), "ℕ".into())], targets: vec![format!("Q{k}_0 a b")] };
        spec.theorems.push(TheoremSpec { name: format!("Puzzle.t{k}"), initial: cur.text() });
        let mut intros = 0;
        for i in 0..depth {
            let last = i + 1 == depth;
            let (tactic, next): (String, Option<Shape>) = if last {
                let t = if intros > 0 && rng.gen_bool(0.3) {
                    format!("exact h{}", intros - 1)
                } else {
                    CLOSERS.choose(&mut rng).unwrap().to_string()
                };
                (t, None)
            } else if cur.targets.len() == 2 {
                let mut n = cur.clone();
                n.targets.remove(0);
                ("· norm_num".into(), Some(n))
            } else {
                let mut n = cur.clone();
                match rng.gen_range(0..3) {
                    0 => {
                        n.hyps.push((format!("h{intros}"), format!("P{k}_{intros} a b")));
                        n.targets = vec![format!("Q{k}_{} a b", i + 1)];
                        let t = format!("intro h{intros}");
                        intros += 1;
                        (t, Some(n))
                    }
                    1 if depth - i >= 3 => {
                        n.targets = vec![format!("L{k}_{i} a b"), format!("Q{k}_{} a b", i + 1)];
                        ("constructor".into(), Some(n))
                    }
                    _ => {
                        n.targets = vec![format!("Q{k}_{} a b", i + 1)];
                        (REWRITES.choose(&mut rng).unwrap().to_string(), Some(n))
                    }
                }
            };
            // dead ends: one or two wrong moves, each possibly one step deep
            let mut wrong: Vec<&str> = REWRITES.iter().chain(CLOSERS.iter()).copied().filter(|t| *t != tactic).collect();
            wrong.sort_unstable();
            wrong.dedup();
            wrong.shuffle(&mut rng);
            for (j, w) in wrong.iter().take(rng.gen_range(1..=2)).enumerate() {
                let dead = Shape { hyps: cur.hyps.clone(), targets: vec![format!("D{k}_{i}_{j} a b")] };
                spec.rules.push(rule(&cur, w, dead.goals()));
                if rng.gen_bool(0.5) {
                    let deeper = Shape { hyps: cur.hyps.clone(), targets: vec![format!("E{k}_{i}_{j} a b")] };
                    spec.rules.push(rule(&dead, "simp", deeper.goals()));
                }
            }
            spec.rules.push(rule(&cur, &tactic, next.as_ref().map(Shape::goals).unwrap_or_default()));
            if let Some(n) = next {
                cur = n;
            }
        }
    }
    spec
}

const INTRO_NAMES: [&str; 4] = ["h", "h'", "hx", "this"];

/// Name-randomizing world: every main-line step has several synonymous
/// `intro` tactics whose results differ only in the fresh hypothesis name,
/// and every state has a dead end reachable two ways.
pub fn alpha_world(theorems: usize, seed: u64) -> WorldSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = WorldSpec {
        distractors: DISTRACTORS.iter().map(|s| s.to_string()).collect(),
        randomize_names: Some(seed),
        ..Default::default()
    };
    for k in 0..theorems {
        let premises = rng.gen_range(3..=4);
        let goal = format!("G{k} a b");
        let mut chain: Vec<String> = (0..premises - 1).map(|j| format!("P{k}_{j} a b")).collect();
        chain.push(goal.clone());
        let target_from = |i: usize| format!("{} → {goal}", chain[i..].join(" → "));
        let mut cur = Shape { hyps: vec![("a b".into(), "ℕ".into())], targets: vec![target_from(0)] };
        spec.theorems.push(TheoremSpec { name: format!("Alpha.t{k}"), initial: cur.text() });
        for (i, premise) in chain.iter().enumerate() {
            for (j, dead_tactic) in ["cases a", "rcases a with _ | n"].iter().enumerate() {
                let mut dead = cur.clone();
                dead.hyps.push((["n", "m"][j].into(), "ℕ".into()));
                dead.targets = vec![format!("D{k}_{i} a b")];
                spec.rules.push(rule(&cur, dead_tactic, dead.goals()));
            }
            for name in INTRO_NAMES {
                let name = format!("{name}{i}");
                let mut next = cur.clone();
                next.hyps.push((name.clone(), premise.clone()));
                next.targets = vec![if i + 1 < premises { target_from(i + 1) } else { goal.clone() }];
                spec.rules.push(rule(&cur, &format!("intro {name}"), next.goals()));
            }
            let mut next = cur.clone();
            next.hyps.push((format!("h{i}"), premise.clone()));
            next.targets = vec![if i + 1 < premises { target_from(i + 1) } else { goal.clone() }];
            cur = next;
        }
        for closer in [format!("exact h{}", premises - 1), "assumption".to_string()] {
            spec.rules.push(rule(&cur, &closer, vec![]));
        }
    }
    spec
}
