//! The builtin tactic generator: proposes the world's applicable rules plus
//! its distractors, scored with seeded noise.

use std::sync::Arc;

use crate::canon::{digest128, state_key_lossy};
use crate::search::{Generator, GeneratorError, TacticCandidate};

use super::World;

pub struct WorldGenerator {
    world: Arc<World>,
    seed: u64,
}

impl WorldGenerator {
    pub fn new(world: Arc<World>, seed: u64) -> Self {
        WorldGenerator { world, seed }
    }

    /// A score in (-3, 0] that depends on the seed, the canonical state
    /// and the tactic, so α-variant states get identical proposals.
    fn noise(&self, canonical_state: &str, tactic: &str) -> f64 {
        let d = digest128(&format!("{}\u{0}{canonical_state}\u{0}{tactic}", self.seed));
        let unit = (d >> 75) as f64 / (1u64 << 53) as f64;
        -3.0 * unit
    }
}

impl Generator for WorldGenerator {
    fn generate(&mut self, state: &str, count: usize) -> Result<Vec<TacticCandidate>, GeneratorError> {
        let canonical = state_key_lossy(state).0.canonical_text;
        let mut out: Vec<TacticCandidate> = self
            .world
            .applicable(state)
            .into_iter()
            .map(|(rule, text)| {
                let score = rule.logprob.unwrap_or_else(|| self.noise(&canonical, &rule.tactic));
                TacticCandidate { text, score }
            })
            .collect();
        for d in &self.world.spec().distractors {
            if out.iter().all(|c| &c.text != d) {
                out.push(TacticCandidate { text: d.clone(), score: self.noise(&canonical, d) });
            }
        }
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.text.cmp(&b.text)));
        out.truncate(count);
        Ok(out)
    }
}
