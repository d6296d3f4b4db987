//! Hidden subcommands standing in for the external tools in tests: a
//! backend over a simulated world, a generator and a compiler.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use leanforge::backend::serve;
use leanforge::search::{Generator, TacticCandidate};
use leanforge::sim::generator::WorldGenerator;
use leanforge::sim::{SimulatedBackend, World};
use serde::{Deserialize, Serialize};

/// A source line that makes `sim-compile` fail.
pub const COMPILE_ERROR_MARKER: &str = "-- SIMULATE: compile-error";

pub fn load_world(path: &Path) -> Result<Arc<World>> {
    Ok(Arc::new(World::load(path).with_context(|| format!("cannot load world {}", path.display()))?))
}

pub fn backend(world: &Path) -> Result<()> {
    let mut backend = SimulatedBackend::new(load_world(world)?);
    serve(&mut backend, io::stdin().lock(), io::stdout().lock())?;
    Ok(())
}

/// Exit status of a simulated compile.
pub fn compile(path: &Path) -> i32 {
    match fs::read_to_string(path) {
        Ok(text) if text.lines().any(|l| l.trim() == COMPILE_ERROR_MARKER) => {
            eprintln!("{}:1:0: error: simulated compile failure", path.display());
            1
        }
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            1
        }
    }
}

#[derive(Deserialize)]
struct Request {
    state: String,
}

#[derive(Serialize)]
struct Reply {
    candidates: Vec<TacticCandidate>,
}

pub fn generator(world: &Path, seed: u64, count: usize) -> Result<()> {
    let mut generator = WorldGenerator::new(load_world(world)?, seed);
    let mut out = io::stdout().lock();
    for line in io::stdin().lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(&line).context("malformed generator request")?;
        let candidates = generator.generate(&req.state, count)?;
        serde_json::to_writer(&mut out, &Reply { candidates })?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}
