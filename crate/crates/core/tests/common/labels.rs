//! Hand labels for the fixture corpus.

use std::sync::Arc;

use leanforge::backend::ExtractJob;
use leanforge::sim::World;

use super::fixtures;

pub const FILES: [&str; 7] = [
    "algebra-project/Algebra/Basic.lean",
    "algebra-project/Algebra/Groups.lean",
    "algebra-project/Algebra/Rings.lean",
    "logic-project/Logic/Prop.lean",
    "logic-project/Logic/Nat.lean",
    "scratch-files/Scratch1.lean",
    "scratch-files/exercises/Ex2.lean",
];

pub fn jobs(files: &[&str]) -> Vec<ExtractJob> {
    files
        .iter()
        .map(|f| ExtractJob {
            path: fixtures().join("corpus").join(f),
            file_path: f.to_string(),
            url: "https://example.org/corpus".into(),
            commit: "0000000".into(),
        })
        .collect()
}

/// Hand-listed: every tactic proof whose trace reaches `no goals`.
pub const VALID: [&str; 28] = [
    "MyNat.mul_pow", "MyNat.add_zero'", "MyNat.zero_add'", "MyNat.two_mul'",
    "MyGroup.mul_left_cancel'", "MyGroup.inv_inv'", "MyGroup.mul_one'", "MyGroup.one_mul'",
    "MyRing.sq_add", "MyRing.sub_self'", "MyRing.mul_comm_assoc", "MyRing.neg_neg'",
    "Logic.and_swap", "Logic.imp_self'", "Logic.or_comm'", "Logic.not_not_intro'",
    "Logic.succ_ne_zero'", "Logic.le_refl'", "Logic.add_comm'", "Logic.lt_succ",
    "scratch_one", "scratch_add", "scratch_and", "scratch_exists",
    "ex_mul_comm", "ex_imp", "ex_le", "ex_card",
];

pub const TERM_MODE: [&str; 8] = [
    "MyNat.one_add_one", "MyGroup.inv_one'", "MyRing.zero_mul'", "Logic.id'",
    "Logic.zero_le'", "scratch_term", "ex_term", "ex_term2",
];

pub const UNFINISHED: [&str; 6] =
    ["MyNat.sq_nonneg'", "MyGroup.comm_of_sq", "MyRing.cube", "Logic.dne", "Logic.even_or_odd", "scratch_hard"];

/// The world that drives extraction of the fixture corpus.
pub fn world() -> Arc<World> {
    Arc::new(World::load(&fixtures().join("world.json")).unwrap())
}
