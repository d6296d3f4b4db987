//! Pass@k accounting over attempt matrices.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::OutcomeRecord;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("k={k} but at most {available} attempts were recorded")]
    InsufficientAttempts { k: usize, available: usize },
    #[error("runs cover different problem sets")]
    ProblemSetMismatch,
    #[error("malformed matrix: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttemptMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub label: String,
}

/// Per-problem attempt outcomes. Rows shorter than the longest one are
/// only allowed when `incomplete` is set; missing attempts count as
/// failures.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttemptMatrix {
    pub problems: Vec<String>,
    pub results: Vec<Vec<bool>>,
    pub metadata: Vec<AttemptMeta>,
    pub incomplete: bool,
}

/// On-disk form: one `0`/`1` string per problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub problems: Vec<String>,
    pub results: Vec<String>,
    #[serde(default)]
    pub metadata: Vec<AttemptMeta>,
    #[serde(default)]
    pub incomplete: bool,
}

impl AttemptMatrix {
    pub fn new(
        problems: Vec<String>,
        results: Vec<Vec<bool>>,
        metadata: Vec<AttemptMeta>,
        incomplete: bool,
    ) -> Result<Self, EvalError> {
        if problems.len() != results.len() {
            return Err(EvalError::Malformed(format!("{} problems but {} rows", problems.len(), results.len())));
        }
        if results.iter().any(Vec::is_empty) {
            return Err(EvalError::Malformed("every problem needs at least one attempt".into()));
        }
        let m = AttemptMatrix { problems, results, metadata, incomplete };
        let max = m.max_attempts();
        if !incomplete && m.results.iter().any(|r| r.len() != max) {
            return Err(EvalError::Malformed("ragged rows in a matrix not marked incomplete".into()));
        }
        if m.incomplete && m.results.iter().any(|r| r.len() != max) {
            log::warn!("incomplete attempt matrix: missing attempts count as failures");
        }
        Ok(m)
    }

    pub fn max_attempts(&self) -> usize {
        self.results.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    /// 1-based index of the first success, if any.
    pub fn first_success(&self, problem: usize) -> Option<usize> {
        self.results[problem].iter().position(|&b| b).map(|i| i + 1)
    }

    pub fn from_file(file: MatrixFile) -> Result<Self, EvalError> {
        let rows = file
            .results
            .iter()
            .map(|row| {
                row.chars()
                    .map(|c| match c {
                        '1' => Ok(true),
                        '0' => Ok(false),
                        other => Err(EvalError::Malformed(format!("unexpected '{other}' in result row"))),
                    })
                    .collect::<Result<Vec<bool>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        AttemptMatrix::new(file.problems, rows, file.metadata, file.incomplete)
    }

    pub fn to_file(&self) -> MatrixFile {
        MatrixFile {
            problems: self.problems.clone(),
            results: self.results.iter().map(|r| r.iter().map(|&b| if b { '1' } else { '0' }).collect()).collect(),
            metadata: self.metadata.clone(),
            incomplete: self.incomplete,
        }
    }

    /// One column per seed seen in `records`, problems sorted by name.
    /// Problems lacking an attempt at some seed make the matrix
    /// incomplete.
    pub fn from_outcomes(records: &[OutcomeRecord], label: &str) -> Result<Self, EvalError> {
        let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let column: BTreeMap<u64, usize> = seeds.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let mut rows: BTreeMap<&str, Vec<Option<bool>>> = BTreeMap::new();
        for r in records {
            let row = rows.entry(r.theorem.as_str()).or_insert_with(|| vec![None; seeds.len()]);
            let slot = &mut row[column[&r.seed]];
            *slot = Some(slot.unwrap_or(false) || r.solved());
        }
        let incomplete = rows.values().any(|row| row.iter().any(Option::is_none));
        let metadata = seeds.iter().map(|&s| AttemptMeta { seed: Some(s), label: label.to_string() }).collect();
        let (problems, results) =
            rows.into_iter().map(|(p, row)| (p.to_string(), row.into_iter().map(|b| b.unwrap_or(false)).collect())).unzip();
        AttemptMatrix::new(problems, results, metadata, incomplete)
    }
}

/// An exact pass rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassRate {
    pub solved: usize,
    pub total: usize,
}

impl PassRate {
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.solved as f64 / self.total as f64
        }
    }

    /// Percentage in tenths, rounded half to even from the exact fraction.
    pub fn tenths_of_percent(&self) -> u64 {
        if self.total == 0 {
            return 0;
        }
        let num = self.solved as u128 * 1000;
        let den = self.total as u128;
        let (q, r) = (num / den, num % den);
        let up = match (2 * r).cmp(&den) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Equal => q % 2 == 1,
            std::cmp::Ordering::Less => false,
        };
        (q + up as u128) as u64
    }
}

impl fmt::Display for PassRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.tenths_of_percent();
        write!(f, "{}.{}%", t / 10, t % 10)
    }
}

pub fn cumulative_pass(matrix: &AttemptMatrix, k: usize) -> Result<PassRate, EvalError> {
    let available = matrix.max_attempts();
    if k == 0 || k > available {
        return Err(EvalError::InsufficientAttempts { k, available });
    }
    let solved = matrix.results.iter().filter(|row| row.iter().take(k).any(|&b| b)).count();
    Ok(PassRate { solved, total: matrix.problems.len() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCurve {
    pub points: Vec<(usize, PassRate)>,
}

/// pass(k) for k = 1..=max attempts.
pub fn pass_curve(matrix: &AttemptMatrix) -> PassCurve {
    let total = matrix.problems.len();
    let mut newly = vec![0usize; matrix.max_attempts() + 1];
    for p in 0..total {
        if let Some(i) = matrix.first_success(p) {
            newly[i] += 1;
        }
    }
    let mut solved = 0;
    let points = (1..newly.len())
        .map(|k| {
            solved += newly[k];
            (k, PassRate { solved, total })
        })
        .collect();
    PassCurve { points }
}

/// Concatenate attempts problem by problem, `a` first. An empty matrix is
/// the identity.
pub fn merge_runs(a: &AttemptMatrix, b: &AttemptMatrix) -> Result<AttemptMatrix, EvalError> {
    if a.is_empty() {
        return Ok(b.clone());
    }
    if b.is_empty() {
        return Ok(a.clone());
    }
    if a.problems != b.problems {
        return Err(EvalError::ProblemSetMismatch);
    }
    // pad a's short rows so b's attempt indices stay aligned
    let width = a.max_attempts();
    let results = a
        .results
        .iter()
        .zip(&b.results)
        .map(|(x, y)| {
            let mut row = x.clone();
            row.resize(width, false);
            row.extend_from_slice(y);
            row
        })
        .collect();
    let metadata = a.metadata.iter().chain(&b.metadata).cloned().collect();
    AttemptMatrix::new(a.problems.clone(), results, metadata, a.incomplete || b.incomplete)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub solved: usize,
    pub total: usize,
    pub percent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub problems: usize,
    pub attempts: usize,
    pub incomplete: bool,
    pub rows: Vec<KRow>,
    pub curve: Vec<KRow>,
}

fn row(k: usize, r: PassRate) -> KRow {
    KRow { k, solved: r.solved, total: r.total, percent: r.to_string() }
}

pub fn report(matrix: &AttemptMatrix, ks: &[usize]) -> Result<EvalReport, EvalError> {
    let rows = ks.iter().map(|&k| cumulative_pass(matrix, k).map(|r| row(k, r))).collect::<Result<_, _>>()?;
    Ok(EvalReport {
        problems: matrix.problems.len(),
        attempts: matrix.max_attempts(),
        incomplete: matrix.incomplete,
        rows,
        curve: pass_curve(matrix).points.into_iter().map(|(k, r)| row(k, r)).collect(),
    })
}
