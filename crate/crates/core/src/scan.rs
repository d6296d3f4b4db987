//! Repository census and classification.
//!
//! Each immediate subdirectory of a corpus root is one candidate repository.
//! A scan counts `theorem`/`lemma` keywords, resolves the declared toolchain
//! against the bundled table of official releases and sorts the repository
//! into exactly one [`RepoClassification`].

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::lexer;

pub const TOOLCHAIN_FILE: &str = "lean-toolchain";
pub const LEAN_EXTENSION: &str = "lean";
const MANIFESTS: [&str; 2] = ["lakefile.lean", "lakefile.toml"];
const BUNDLED_RELEASES: &str = include_str!("../data/lean4_releases.txt");
const OFFICIAL_PREFIX: &str = "leanprover/lean4:";

/// Directories never descended into when collecting sources.
pub const SKIPPED_DIRS: [&str; 4] = [".lake", "lake-packages", ".git", "build"];

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("no version can be extracted from toolchain {0:?}")]
    UnparsableToolchain(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed release table line {0:?}")]
    ReleaseTable(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScanError + '_ {
    move |source| ScanError::Io { path: path.to_path_buf(), source }
}

/// Count whole-word `theorem` and `lemma` tokens outside comments and
/// string literals.
pub fn count_theorem_keywords(source_text: &str) -> usize {
    let masked = lexer::mask(source_text, true);
    let chars: Vec<char> = masked.chars().collect();
    lexer::words(&masked)
        .filter(|(start, word)| {
            (word == "theorem" || word == "lemma") && (*start == 0 || chars[start - 1] != '.')
        })
        .count()
}

/// A dotted version with an optional pre-release suffix. Pre-releases sort
/// below the release they precede.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Version {
    pub major: u32,
    pub minor: u32,
    pub patch: u32,
    pub pre: Option<String>,
}

impl Version {
    pub const fn new(major: u32, minor: u32, patch: u32) -> Self {
        Version { major, minor, patch, pre: None }
    }

    fn triple(&self) -> (u32, u32, u32) {
        (self.major, self.minor, self.patch)
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        self.triple().cmp(&other.triple()).then_with(|| match (&self.pre, &other.pre) {
            (None, None) => Ordering::Equal,
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (Some(a), Some(b)) => a.cmp(b),
        })
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)?;
        if let Some(pre) = &self.pre {
            write!(f, "-{pre}")?;
        }
        Ok(())
    }
}

impl FromStr for Version {
    type Err = ScanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        extract_version(s).ok_or_else(|| ScanError::UnparsableToolchain(s.to_string()))
    }
}

/// Pull the first `X.Y[.Z][-pre]` version out of a toolchain string.
pub fn extract_version(raw: &str) -> Option<Version> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(\d+)\.(\d+)(?:\.(\d+))?(?:-([0-9A-Za-z][0-9A-Za-z.-]*))?").expect("version regex")
    });
    let caps = re.captures(raw)?;
    let num = |i: usize| caps.get(i).map_or(Some(0), |m| m.as_str().parse().ok());
    Some(Version {
        major: num(1)?,
        minor: num(2)?,
        patch: num(3)?,
        pre: caps.get(4).map(|m| m.as_str().to_string()),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolchainSpec {
    pub channel: String,
    pub major: u32,
    pub minor: u32,
    pub patch: u32,
    pub is_official: bool,
}

impl ToolchainSpec {
    pub fn version(&self) -> Version {
        Version::new(self.major, self.minor, self.patch)
    }

    fn official(v: &Version) -> Self {
        ToolchainSpec {
            channel: format!("{OFFICIAL_PREFIX}v{}.{}.{}", v.major, v.minor, v.patch),
            major: v.major,
            minor: v.minor,
            patch: v.patch,
            is_official: true,
        }
    }
}

/// Is `raw` spelled like an official stable release tag?
pub fn is_official_name(raw: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^leanprover/lean4:v\d+\.\d+\.\d+$").expect("official regex"))
        .is_match(raw)
}

/// Official releases a non-official toolchain may be mapped onto.
#[derive(Debug, Clone)]
pub struct ReleaseTable {
    releases: Vec<Version>,
}

impl ReleaseTable {
    pub fn bundled() -> &'static ReleaseTable {
        static TABLE: OnceLock<ReleaseTable> = OnceLock::new();
        TABLE.get_or_init(|| ReleaseTable::parse(BUNDLED_RELEASES).expect("bundled release table"))
    }

    pub fn parse(text: &str) -> Result<Self, ScanError> {
        let mut releases = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v = extract_version(line).ok_or_else(|| ScanError::ReleaseTable(line.to_string()))?;
            releases.push(v);
        }
        if releases.is_empty() {
            return Err(ScanError::ReleaseTable(String::new()));
        }
        releases.sort();
        Ok(ReleaseTable { releases })
    }

    pub fn releases(&self) -> &[Version] {
        &self.releases
    }

    /// Release minimizing `(|Δmajor|, |Δminor|, |Δpatch|)`; ties go to the
    /// newer release.
    pub fn closest(&self, v: &Version) -> &Version {
        let dist = |r: &Version| (r.major.abs_diff(v.major), r.minor.abs_diff(v.minor), r.patch.abs_diff(v.patch));
        self.releases
            .iter()
            .min_by(|a, b| dist(a).cmp(&dist(b)).then_with(|| b.cmp(a)))
            .expect("release table is nonempty")
    }
}

pub fn resolve_toolchain(raw: &str) -> Result<ToolchainSpec, ScanError> {
    resolve_toolchain_with(raw, ReleaseTable::bundled())
}

pub fn resolve_toolchain_with(raw: &str, table: &ReleaseTable) -> Result<ToolchainSpec, ScanError> {
    let raw = raw.trim();
    let version = extract_version(raw).ok_or_else(|| ScanError::UnparsableToolchain(raw.to_string()))?;
    if is_official_name(raw) {
        return Ok(ToolchainSpec {
            channel: raw.to_string(),
            major: version.major,
            minor: version.minor,
            patch: version.patch,
            is_official: true,
        });
    }
    Ok(ToolchainSpec::official(table.closest(&version)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoDescriptor {
    pub root_path: PathBuf,
    pub name: String,
    pub toolchain_raw: Option<String>,
    pub file_count: usize,
}

/// Lean sources under `root`, sorted, skipping build and vendored package
/// directories.
pub fn lean_files(root: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = WalkDir::new(root)
        .into_iter()
        .filter_entry(|e| {
            e.depth() == 0 || !(e.file_type().is_dir() && SKIPPED_DIRS.contains(&e.file_name().to_string_lossy().as_ref()))
        })
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == LEAN_EXTENSION))
        .map(|e| e.into_path())
        .collect();
    files.sort();
    files
}

impl RepoDescriptor {
    pub fn scan(root: &Path) -> Result<Self, ScanError> {
        let meta = fs::metadata(root).map_err(io_err(root))?;
        if !meta.is_dir() {
            return Err(ScanError::Io {
                path: root.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a directory"),
            });
        }
        fs::read_dir(root).map_err(io_err(root))?;
        let toolchain_path = root.join(TOOLCHAIN_FILE);
        let toolchain_raw = match fs::read_to_string(&toolchain_path) {
            Ok(s) => Some(s.trim().to_string()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(ScanError::Io { path: toolchain_path, source: e }),
        };
        let name = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| root.display().to_string());
        Ok(RepoDescriptor { root_path: root.to_path_buf(), name, toolchain_raw, file_count: lean_files(root).len() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum RepoClassification {
    CompilableProject,
    IsolatedFiles,
    DeprecatedVersion { version: String },
    MissingDependencies { missing: Vec<String> },
    NotLean4,
}

impl RepoClassification {
    pub fn label(&self) -> &'static str {
        match self {
            RepoClassification::CompilableProject => "CompilableProject",
            RepoClassification::IsolatedFiles => "IsolatedFiles",
            RepoClassification::DeprecatedVersion { .. } => "DeprecatedVersion",
            RepoClassification::MissingDependencies { .. } => "MissingDependencies",
            RepoClassification::NotLean4 => "NotLean4",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanReport {
    pub repo: RepoDescriptor,
    pub keyword_theorems: usize,
    pub classification: RepoClassification,
    pub resolved_toolchain: Option<ToolchainSpec>,
}

/// The line-delimited form of a [`ScanReport`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub name: String,
    pub classification: RepoClassification,
    pub keyword_theorems: usize,
    pub toolchain: Option<String>,
}

impl From<&ScanReport> for ScanRecord {
    fn from(r: &ScanReport) -> Self {
        ScanRecord {
            name: r.repo.name.clone(),
            classification: r.classification.clone(),
            keyword_theorems: r.keyword_theorems,
            toolchain: r.resolved_toolchain.as_ref().map(|t| t.channel.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub deprecated_cutoff: Version,
    /// Dependencies treated as fetchable without being vendored.
    pub available_packages: BTreeSet<String>,
    pub releases: ReleaseTable,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            deprecated_cutoff: Version::new(4, 0, 0),
            available_packages: [
                "mathlib", "batteries", "std", "aesop", "qq", "proofwidgets", "importgraph", "plausible",
                "leansearchclient", "cli",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            releases: ReleaseTable::bundled().clone(),
        }
    }
}

/// Dependency names declared by a lakefile.
pub fn manifest_requirements(manifest_name: &str, text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    if manifest_name.ends_with(".toml") {
        let Ok(value) = text.parse::<toml::Table>() else {
            return Vec::new();
        };
        return value
            .get("require")
            .and_then(|r| r.as_array())
            .map(|reqs| {
                reqs.iter()
                    .filter_map(|r| r.get("name").and_then(|n| n.as_str()).map(String::from))
                    .collect()
            })
            .unwrap_or_default();
    }
    let re = RE.get_or_init(|| {
        Regex::new(r#"(?m)^\s*require\s+(?:"[^"]*"\s*/\s*)?(«[^»]+»|[A-Za-z_][A-Za-z0-9_'-]*)"#).expect("require regex")
    });
    let masked = lexer::mask(text, false);
    re.captures_iter(&masked)
        .map(|c| c[1].trim_start_matches('«').trim_end_matches('»').to_string())
        .collect()
}

#[derive(Default)]
struct SyntaxEvidence {
    lean4: usize,
    lean3: usize,
}

fn syntax_evidence(text: &str, ev: &mut SyntaxEvidence) {
    static L4: OnceLock<Regex> = OnceLock::new();
    static L3: OnceLock<Regex> = OnceLock::new();
    let l4 = L4.get_or_init(|| Regex::new(r"(?m)(:=\s*by\s*$|\bfun\b[^\n]*=>)").expect("lean4 regex"));
    let l3 = L3.get_or_init(|| Regex::new(r"(?m)(^\s*begin\s*$|λ[^\n,]*,|\bassume\b)").expect("lean3 regex"));
    let masked = lexer::mask(text, true);
    for module in crate::graph::parse_imports(text).modules {
        let first = module.segments()[0].chars().next().unwrap_or('a');
        if first.is_uppercase() {
            ev.lean4 += 1;
        } else {
            ev.lean3 += 1;
        }
    }
    ev.lean4 += l4.find_iter(&masked).count();
    ev.lean3 += l3.find_iter(&masked).count();
}

/// Classify a scanned repository. Order of checks: no sources → NotLean4;
/// toolchain major < 4 or unparsable → NotLean4; version below the cutoff →
/// DeprecatedVersion; no toolchain and no unambiguous Lean 4 syntax →
/// NotLean4; manifest with unavailable requirements → MissingDependencies;
/// manifest → CompilableProject; otherwise IsolatedFiles.
pub fn classify_repo(descriptor: &RepoDescriptor, config: &ScanConfig) -> Result<ScanReport, ScanError> {
    let root = &descriptor.root_path;
    fs::read_dir(root).map_err(io_err(root))?;
    let files = lean_files(root);
    let mut keyword_theorems = 0;
    let mut evidence = SyntaxEvidence::default();
    for file in &files {
        let bytes = fs::read(file).map_err(io_err(file))?;
        let text = String::from_utf8_lossy(&bytes);
        keyword_theorems += count_theorem_keywords(&text);
        syntax_evidence(&text, &mut evidence);
    }
    if root.join("leanpkg.toml").exists() {
        evidence.lean3 += 1;
    }

    let version = descriptor.toolchain_raw.as_deref().map(extract_version);
    let resolved_toolchain = descriptor
        .toolchain_raw
        .as_deref()
        .and_then(|raw| resolve_toolchain_with(raw, &config.releases).ok());

    let report = |classification| ScanReport {
        repo: descriptor.clone(),
        keyword_theorems,
        classification,
        resolved_toolchain: resolved_toolchain.clone(),
    };

    if files.is_empty() {
        return Ok(report(RepoClassification::NotLean4));
    }
    match version {
        Some(None) => return Ok(report(RepoClassification::NotLean4)),
        Some(Some(v)) if v.major < 4 => return Ok(report(RepoClassification::NotLean4)),
        Some(Some(v)) if v < config.deprecated_cutoff => {
            let raw = descriptor.toolchain_raw.clone().unwrap_or_default();
            return Ok(report(RepoClassification::DeprecatedVersion { version: raw }));
        }
        Some(Some(_)) => {}
        None => {
            if evidence.lean4 == 0 || evidence.lean3 > 0 {
                return Ok(report(RepoClassification::NotLean4));
            }
        }
    }

    let Some(manifest) = MANIFESTS.iter().find(|m| root.join(m).is_file()) else {
        return Ok(report(RepoClassification::IsolatedFiles));
    };
    let manifest_path = root.join(manifest);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let missing: Vec<String> = manifest_requirements(manifest, &text)
        .into_iter()
        .filter(|dep| {
            let vendored = [".lake/packages", "lake-packages"].iter().any(|d| root.join(d).join(dep).is_dir());
            !vendored && !config.available_packages.contains(&dep.to_lowercase())
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if missing.is_empty() {
        Ok(report(RepoClassification::CompilableProject))
    } else {
        Ok(report(RepoClassification::MissingDependencies { missing }))
    }
}

/// Scan every immediate subdirectory of `root` in parallel; reports come
/// back sorted by repository name.
pub fn scan_corpus(root: &Path, config: &ScanConfig) -> Result<Vec<ScanReport>, ScanError> {
    let mut repos: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_ok_and(|t| t.is_dir()))
        .map(|e| e.path())
        .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    repos.sort();
    let mut reports = repos
        .par_iter()
        .map(|path| RepoDescriptor::scan(path).and_then(|d| classify_repo(&d, config)))
        .collect::<Result<Vec<_>, _>>()?;
    reports.sort_by(|a, b| a.repo.name.cmp(&b.repo.name));
    Ok(reports)
}
