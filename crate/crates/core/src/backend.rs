//! Checker backend protocol and sessions.
//!
//! A backend speaks UTF-8 JSON lines over its standard streams. Every
//! request carries an increasing `id` and is answered by exactly one
//! response with the same id:
//!
//! ```text
//! {"id":1,"kind":"init_theorem","theorem":"Foo.bar"}
//! {"id":1,"kind":"result","states":["x : ℕ\n⊢ x = x"]}
//! {"id":2,"kind":"run_tactic","state":"x : ℕ\n⊢ x = x","tactic":"rfl"}
//! {"id":2,"kind":"result","states":[]}
//! {"id":3,"kind":"extract_file","path":"Foo.lean"}
//! {"id":3,"kind":"result","records":[…]}
//! {"id":4,"kind":"error","message":"unknown tactic"}
//! ```
//!
//! `states` lists the goals of the resulting proof state; an empty list
//! means the proof is complete.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::build::split_template;
use crate::trace::{TheoremRecord, NO_GOALS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub id: u64,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Request {
    InitTheorem { theorem: String },
    RunTactic { state: String, tactic: String },
    ExtractFile { path: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Response {
    Result {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        states: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        records: Option<Vec<TheoremRecord>>,
    },
    Error { message: String },
}

impl Response {
    pub fn states(states: Vec<String>) -> Self {
        Response::Result { states: Some(states), records: None }
    }

    pub fn records(records: Vec<TheoremRecord>) -> Self {
        Response::Result { states: None, records: Some(records) }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Response::Error { message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend session is dead")]
    SessionDead,
    #[error("state {0:?} was not issued by this session")]
    StateUnknown(StateId),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("backend error: {0}")]
    Remote(String),
    #[error("cannot start backend: {0}")]
    Spawn(String),
}

/// Anything that answers protocol requests: a child process or an
/// in-process double.
pub trait Backend: Send {
    fn call(&mut self, request: Envelope<Request>) -> Result<Envelope<Response>, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn call(&mut self, request: Envelope<Request>) -> Result<Envelope<Response>, BackendError> {
        (**self).call(request)
    }
}

/// A backend child process driven over stdin/stdout.
pub struct ProcessBackend {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    dead: bool,
}

impl ProcessBackend {
    /// Spawn from a whitespace-separated command line (quotes honored).
    pub fn spawn(command_line: &str) -> Result<Self, BackendError> {
        let words = split_template(command_line);
        let (program, args) = words.split_first().ok_or_else(|| BackendError::Spawn("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Spawn(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().ok_or_else(|| BackendError::Spawn("stdin unavailable".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| BackendError::Spawn("stdout unavailable".into()))?;
        Ok(ProcessBackend { child, stdin, stdout: BufReader::new(stdout), dead: false })
    }
}

impl Backend for ProcessBackend {
    fn call(&mut self, request: Envelope<Request>) -> Result<Envelope<Response>, BackendError> {
        if self.dead {
            return Err(BackendError::SessionDead);
        }
        let mut line = serde_json::to_string(&request).map_err(|e| BackendError::Protocol(e.to_string()))?;
        line.push('\n');
        if self.stdin.write_all(line.as_bytes()).and_then(|_| self.stdin.flush()).is_err() {
            self.dead = true;
            return Err(BackendError::SessionDead);
        }
        let mut reply = String::new();
        match self.stdout.read_line(&mut reply) {
            Ok(0) | Err(_) => {
                self.dead = true;
                Err(BackendError::SessionDead)
            }
            Ok(_) => serde_json::from_str(reply.trim_end()).map_err(|e| BackendError::Protocol(format!("{e}: {reply}"))),
        }
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Serve a backend over line streams until EOF. Used to run an in-process
/// backend as a subprocess.
pub fn serve<B: Backend, R: BufRead, W: Write>(backend: &mut B, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Envelope<Request>>(&line) {
            Ok(req) => match backend.call(req) {
                Ok(resp) => resp,
                Err(BackendError::SessionDead) => return Ok(()),
                Err(e) => return Err(std::io::Error::other(e.to_string())),
            },
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                    .unwrap_or(0);
                Envelope { id, body: Response::error(format!("malformed request: {e}")) }
            }
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

/// Handle to a state issued within one session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TacticResult {
    /// `state` is `None` exactly when `goals` is empty.
    Success { goals: Vec<String>, state: Option<StateId> },
    TacticError { message: String },
}

/// Join goal texts into one state text; no goals gives the sentinel.
pub fn join_goals(goals: &[String]) -> String {
    if goals.is_empty() {
        NO_GOALS.to_string()
    } else {
        goals.join("\n\n")
    }
}

/// Client side of one backend conversation. Requests are strictly
/// serialized and every response id is checked.
pub struct Session<B: Backend> {
    backend: B,
    next_id: u64,
    states: Vec<String>,
    by_text: HashMap<String, StateId>,
    dead: bool,
}

impl<B: Backend> Session<B> {
    pub fn new(backend: B) -> Self {
        Session { backend, next_id: 1, states: Vec::new(), by_text: HashMap::new(), dead: false }
    }

    fn request(&mut self, body: Request) -> Result<Response, BackendError> {
        if self.dead {
            return Err(BackendError::SessionDead);
        }
        let id = self.next_id;
        self.next_id += 1;
        match self.backend.call(Envelope { id, body }) {
            Ok(resp) if resp.id == id => Ok(resp.body),
            Ok(resp) => Err(BackendError::Protocol(format!("expected response {id}, got {}", resp.id))),
            Err(e) => {
                if e == BackendError::SessionDead {
                    self.dead = true;
                }
                Err(e)
            }
        }
    }

    fn issue(&mut self, text: String) -> StateId {
        if let Some(&id) = self.by_text.get(&text) {
            return id;
        }
        let id = StateId(self.states.len());
        self.by_text.insert(text.clone(), id);
        self.states.push(text);
        id
    }

    pub fn state_text(&self, id: StateId) -> Result<&str, BackendError> {
        self.states.get(id.0).map(String::as_str).ok_or(BackendError::StateUnknown(id))
    }

    pub fn init_theorem(&mut self, theorem: &str) -> Result<StateId, BackendError> {
        match self.request(Request::InitTheorem { theorem: theorem.to_string() })? {
            Response::Result { states: Some(goals), .. } if !goals.is_empty() => Ok(self.issue(join_goals(&goals))),
            Response::Result { .. } => Err(BackendError::Protocol("init_theorem returned no goals".into())),
            Response::Error { message } => Err(BackendError::Remote(message)),
        }
    }

    /// A failed tactic leaves the session unchanged.
    pub fn run_tactic(&mut self, state: StateId, tactic: &str) -> Result<TacticResult, BackendError> {
        let text = self.state_text(state)?.to_string();
        match self.request(Request::RunTactic { state: text, tactic: tactic.to_string() })? {
            Response::Result { states: Some(goals), .. } => {
                let state = (!goals.is_empty()).then(|| self.issue(join_goals(&goals)));
                Ok(TacticResult::Success { goals, state })
            }
            Response::Result { .. } => Err(BackendError::Protocol("run_tactic result without states".into())),
            Response::Error { message } => Ok(TacticResult::TacticError { message }),
        }
    }

    pub fn extract_file(&mut self, path: &str) -> Result<Vec<TheoremRecord>, BackendError> {
        match self.request(Request::ExtractFile { path: path.to_string() })? {
            Response::Result { records: Some(records), .. } => Ok(records),
            Response::Result { .. } => Err(BackendError::Protocol("extract_file result without records".into())),
            Response::Error { message } => Err(BackendError::Remote(message)),
        }
    }

    pub fn into_backend(self) -> B {
        self.backend
    }
}

/// One file to extract. `path` is what the backend reads; the other fields
/// are stamped onto every record it returns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractJob {
    pub path: PathBuf,
    pub file_path: String,
    pub url: String,
    pub commit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExtractionBatch {
    /// Records in job order, then source order.
    pub records: Vec<TheoremRecord>,
    pub failures: Vec<(String, BackendError)>,
}

pub fn extract_file<B: Backend>(job: &ExtractJob, backend: B) -> Result<Vec<TheoremRecord>, BackendError> {
    let mut session = Session::new(backend);
    let mut records = session.extract_file(&job.path.display().to_string())?;
    for r in &mut records {
        r.file_path = job.file_path.clone();
        r.url = job.url.clone();
        r.commit = job.commit.clone();
    }
    Ok(records)
}

/// Extract every job in its own session. A crashing file is reported in
/// `failures` and never affects the other files.
pub fn extract_batch<B, F>(jobs: &[ExtractJob], factory: F) -> ExtractionBatch
where
    B: Backend,
    F: Fn() -> Result<B, BackendError> + Sync,
{
    let results: Vec<Result<Vec<TheoremRecord>, BackendError>> =
        jobs.par_iter().map(|job| factory().and_then(|b| extract_file(job, b))).collect();
    let mut batch = ExtractionBatch::default();
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(records) => batch.records.extend(records),
            Err(e) => {
                log::warn!("extraction failed for {}: {e}", job.file_path);
                batch.failures.push((job.file_path.clone(), e));
            }
        }
    }
    batch
}
