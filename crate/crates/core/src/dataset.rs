//! Proofstep examples, corpus statistics and by-file splits.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::build::split_template;
use crate::trace::{validate_record, TheoremRecord, Violation};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("record {name} is not a valid tactic proof: {violations:?}")]
    InvalidRecord { name: String, violations: Vec<Violation> },
    #[error("invalid split: {0}")]
    BadSplit(String),
    #[error("malformed prompt: {0}")]
    MalformedPrompt(String),
    #[error("tokenizer: {0}")]
    Tokenizer(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofstepExample {
    pub decl: String,
    pub goal: String,
    pub proofstep: String,
}

pub fn to_proofsteps(record: &TheoremRecord) -> Result<Vec<ProofstepExample>, DatasetError> {
    let violations = validate_record(record);
    if !violations.is_empty() {
        return Err(DatasetError::InvalidRecord { name: record.full_name.clone(), violations });
    }
    Ok(record
        .tactics
        .iter()
        .map(|s| ProofstepExample {
            decl: record.full_name.clone(),
            goal: s.state_before.clone(),
            proofstep: s.tactic.clone(),
        })
        .collect())
}

/// One line of a prompt file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub input: String,
    pub output: String,
}

/// Render `(input, output)`. By default no line ends in a space;
/// `legacy_trailing_space` puts a space before the two newlines of the
/// input, as in the original template.
pub fn render_prompt(example: &ProofstepExample, legacy_trailing_space: bool) -> Prompt {
    let nl = if legacy_trailing_space { " \n" } else { "\n" };
    Prompt {
        input: format!("DECL {}{nl}GOAL {}{nl}PROOFSTEP ", example.decl, example.goal),
        output: format!("{}\n", example.proofstep),
    }
}

/// Inverse of [`render_prompt`].
pub fn parse_prompt(prompt: &Prompt, legacy_trailing_space: bool) -> Result<ProofstepExample, DatasetError> {
    let nl = if legacy_trailing_space { " \n" } else { "\n" };
    let bad = |why: &str| DatasetError::MalformedPrompt(why.to_string());
    let rest = prompt.input.strip_prefix("DECL ").ok_or_else(|| bad("missing DECL"))?;
    let rest = rest.strip_suffix(&format!("{nl}PROOFSTEP ")).ok_or_else(|| bad("missing PROOFSTEP"))?;
    let (decl, goal) = rest.split_once(&format!("{nl}GOAL ")).ok_or_else(|| bad("missing GOAL"))?;
    if decl.contains('\n') {
        return Err(bad("declaration spans lines"));
    }
    let proofstep = prompt.output.strip_suffix('\n').ok_or_else(|| bad("output lacks newline"))?;
    Ok(ProofstepExample { decl: decl.to_string(), goal: goal.to_string(), proofstep: proofstep.to_string() })
}

pub trait Tokenizer {
    fn count(&mut self, text: &str) -> Result<usize, DatasetError>;
}

/// Runs of letters, digits and `_` are one token; every other
/// non-whitespace character is a token of its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultTokenizer;

impl Tokenizer for DefaultTokenizer {
    fn count(&mut self, text: &str) -> Result<usize, DatasetError> {
        let mut n = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_alphanumeric() || c == '_' {
                if !in_word {
                    n += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    n += 1;
                }
            }
        }
        Ok(n)
    }
}

/// A tokenizer child process: `{"text":…}` in, `{"tokens":N}` out.
pub struct ProcessTokenizer {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

#[derive(Deserialize)]
struct TokenCount {
    tokens: usize,
}

impl ProcessTokenizer {
    pub fn spawn(command_line: &str) -> Result<Self, DatasetError> {
        let words = split_template(command_line);
        let (program, args) = words.split_first().ok_or_else(|| DatasetError::Tokenizer("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| DatasetError::Tokenizer(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().ok_or_else(|| DatasetError::Tokenizer("stdin unavailable".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| DatasetError::Tokenizer("stdout unavailable".into()))?;
        Ok(ProcessTokenizer { child, stdin, stdout: BufReader::new(stdout) })
    }
}

impl Tokenizer for ProcessTokenizer {
    fn count(&mut self, text: &str) -> Result<usize, DatasetError> {
        let err = |e: std::io::Error| DatasetError::Tokenizer(e.to_string());
        let mut line = serde_json::json!({ "text": text }).to_string();
        line.push('\n');
        self.stdin.write_all(line.as_bytes()).and_then(|_| self.stdin.flush()).map_err(err)?;
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply).map_err(err)? == 0 {
            return Err(DatasetError::Tokenizer("tokenizer exited".into()));
        }
        serde_json::from_str::<TokenCount>(&reply).map(|t| t.tokens).map_err(|e| DatasetError::Tokenizer(e.to_string()))
    }
}

impl Drop for ProcessTokenizer {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Split a declaration name into lowercase words at dots, underscores and
/// lower-to-upper case changes: `MyNat.mul_pow` gives my, nat, mul, pow.
pub fn name_tokens(full_name: &str) -> Vec<String> {
    let mut out = Vec::new();
    for part in full_name.split(['.', '_']) {
        let mut cur = String::new();
        let mut prev: Option<char> = None;
        for c in part.chars() {
            if c.is_uppercase() && prev.is_some_and(|p| p.is_lowercase() || p.is_ascii_digit()) && !cur.is_empty() {
                out.push(std::mem::take(&mut cur).to_lowercase());
            }
            cur.push(c);
            prev = Some(c);
        }
        if !cur.is_empty() {
            out.push(cur.to_lowercase());
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub theorems_total: usize,
    /// Records passing validation.
    pub theorems_with_tactics: usize,
    /// Steps of valid records only.
    pub tactic_steps: usize,
    pub files_total: usize,
    pub files_with_valid: usize,
    /// Statement, states and tactics of every record.
    pub tokens_total: usize,
    pub per_repo: BTreeMap<String, usize>,
    pub name_token_frequency: BTreeMap<String, usize>,
}

pub fn corpus_stats(records: &[TheoremRecord], tokenizer: &mut dyn Tokenizer) -> Result<CorpusStats, DatasetError> {
    let mut stats = CorpusStats { theorems_total: records.len(), ..Default::default() };
    let mut files = BTreeSet::new();
    let mut valid_files = BTreeSet::new();
    for r in records {
        files.insert(r.file_path.as_str());
        if r.is_valid() {
            stats.theorems_with_tactics += 1;
            stats.tactic_steps += r.tactics.len();
            valid_files.insert(r.file_path.as_str());
        }
        *stats.per_repo.entry(r.url.clone()).or_default() += 1;
        for t in name_tokens(&r.full_name) {
            *stats.name_token_frequency.entry(t).or_default() += 1;
        }
        stats.tokens_total += tokenizer.count(&r.statement)?;
        for s in &r.tactics {
            stats.tokens_total += tokenizer.count(&s.state_before)?;
            stats.tokens_total += tokenizer.count(&s.tactic)?;
            stats.tokens_total += tokenizer.count(&s.state_after)?;
        }
    }
    stats.files_total = files.len();
    stats.files_with_valid = valid_files.len();
    Ok(stats)
}

/// Repositories by theorem count, largest first, ties by name.
pub fn top_repos(stats: &CorpusStats, n: usize) -> Vec<(&str, usize)> {
    let mut v: Vec<(&str, usize)> = stats.per_repo.iter().map(|(k, &c)| (k.as_str(), c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v.truncate(n);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub splits: Vec<(String, f64)>,
    pub seed: u64,
}

impl SplitSpec {
    /// Names follow the number of fractions: train; train, test;
    /// train, valid, test.
    pub fn from_fractions(fractions: &[f64], seed: u64) -> Result<Self, DatasetError> {
        let names: &[&str] = match fractions.len() {
            1 => &["train"],
            2 => &["train", "test"],
            3 => &["train", "valid", "test"],
            n => return Err(DatasetError::BadSplit(format!("{n} fractions given, expected 1 to 3"))),
        };
        let spec = SplitSpec { splits: names.iter().map(|n| n.to_string()).zip(fractions.iter().copied()).collect(), seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.splits.is_empty() {
            return Err(DatasetError::BadSplit("no splits".into()));
        }
        if let Some((n, f)) = self.splits.iter().find(|(_, f)| !(*f > 0.0 && *f <= 1.0)) {
            return Err(DatasetError::BadSplit(format!("fraction {f} for {n} is outside (0, 1]")));
        }
        let sum: f64 = self.splits.iter().map(|(_, f)| f).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::BadSplit(format!("fractions sum to {sum}")));
        }
        Ok(())
    }
}

/// Assign whole files to splits. Files are visited in a seeded shuffle and
/// each goes to the split furthest below its target record count, so every
/// split ends within one file's size of its target. Records keep their
/// input order inside a split.
pub fn split(records: &[TheoremRecord], spec: &SplitSpec) -> Result<Vec<(String, Vec<TheoremRecord>)>, DatasetError> {
    spec.validate()?;
    let mut by_file: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *by_file.entry(r.file_path.as_str()).or_default() += 1;
    }
    let mut files: Vec<(&str, usize)> = by_file.into_iter().collect();
    files.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let total = records.len() as f64;
    let mut assigned = vec![0usize; spec.splits.len()];
    let mut file_split: BTreeMap<&str, usize> = BTreeMap::new();
    for (file, size) in files {
        let deficit = |i: usize| spec.splits[i].1 * total - assigned[i] as f64;
        let best = (0..spec.splits.len()).fold(0, |best, i| if deficit(i) > deficit(best) { i } else { best });
        assigned[best] += size;
        file_split.insert(file, best);
    }
    let mut out: Vec<(String, Vec<TheoremRecord>)> = spec.splits.iter().map(|(n, _)| (n.clone(), Vec::new())).collect();
    for r in records {
        out[file_split[r.file_path.as_str()]].1.push(r.clone());
    }
    Ok(out)
}
