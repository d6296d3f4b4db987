//! File-level import graph over project modules and isolated files.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ident::{is_id_first, is_id_rest, is_identifier};
use crate::lexer;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("modules {path_a} and {path_b} both map to {module}")]
    DuplicateModuleName { module: ModuleName, path_a: String, path_b: String },
    #[error("invalid module name {0:?}")]
    InvalidModuleName(String),
    #[error("{path} is not under source root {root}")]
    OutsideRoot { path: String, root: String },
    #[error("edge {from} -> {to} references a module not in the graph")]
    DanglingEdge { from: ModuleName, to: ModuleName },
    #[error("import graph has cycles: {0:?}")]
    CyclicGraph(Vec<Vec<ModuleName>>),
}

/// Dotted module name such as `Mathlib.Data.Nat.Basic`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModuleName(Vec<String>);

fn valid_segment(s: &str) -> bool {
    is_identifier(s) || (s.starts_with('«') && s.ends_with('»') && s.chars().count() > 2)
}

impl ModuleName {
    pub fn new(segments: Vec<String>) -> Result<Self, GraphError> {
        if segments.is_empty() || !segments.iter().all(|s| valid_segment(s)) {
            return Err(GraphError::InvalidModuleName(segments.join(".")));
        }
        Ok(ModuleName(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }
}

impl FromStr for ModuleName {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // «» segments may contain dots
        let mut segments = Vec::new();
        let mut cur = String::new();
        let mut quoted = false;
        for c in s.chars() {
            match c {
                '«' => {
                    quoted = true;
                    cur.push(c);
                }
                '»' => {
                    quoted = false;
                    cur.push(c);
                }
                '.' if !quoted => segments.push(std::mem::take(&mut cur)),
                _ => cur.push(c),
            }
        }
        segments.push(cur);
        ModuleName::new(segments).map_err(|_| GraphError::InvalidModuleName(s.to_string()))
    }
}

impl fmt::Display for ModuleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("."))
    }
}

impl Serialize for ModuleName {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModuleName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportScan {
    pub modules: Vec<ModuleName>,
    pub warnings: Vec<String>,
}

/// Imports from the header of a Lean file. The header ends at the first
/// line that is not blank, a comment, `prelude`, or an `import`.
pub fn parse_imports(source_text: &str) -> ImportScan {
    let masked = lexer::mask(source_text, true);
    let mut scan = ImportScan::default();
    let mut seen = BTreeSet::new();
    for (idx, line) in masked.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            None => continue,
            Some("prelude") if tokens.clone().next().is_none() => continue,
            Some("import") => {
                let rest: Vec<&str> = tokens.collect();
                let parsed = match rest.as_slice() {
                    [name] => name.parse::<ModuleName>().ok(),
                    _ => None,
                };
                match parsed {
                    Some(m) => {
                        if seen.insert(m.clone()) {
                            scan.modules.push(m);
                        }
                    }
                    None => scan.warnings.push(format!("line {}: malformed import `{}`", idx + 1, line.trim())),
                }
            }
            Some(_) => break,
        }
    }
    scan
}

/// One source file with the module name it will be known by.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: PathBuf,
    pub module: ModuleName,
    pub text: String,
}

fn quote_segment(s: &str) -> String {
    if is_identifier(s) {
        s.to_string()
    } else {
        format!("«{s}»")
    }
}

impl SourceFile {
    /// A file inside a source root: the module name is the root-relative
    /// path without its extension.
    pub fn project(root: &Path, path: &Path, text: String) -> Result<Self, GraphError> {
        let rel = path.strip_prefix(root).map_err(|_| GraphError::OutsideRoot {
            path: path.display().to_string(),
            root: root.display().to_string(),
        })?;
        let mut segments: Vec<String> =
            rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        if let Some(last) = segments.last_mut() {
            if let Some(stem) = Path::new(last.as_str()).file_stem() {
                *last = stem.to_string_lossy().into_owned();
            }
        }
        let segments = segments.iter().map(|s| quote_segment(s)).collect();
        Ok(SourceFile { path: path.to_path_buf(), module: ModuleName::new(segments)?, text })
    }

    /// A file outside any source root: `<stem>_<8 hex of content digest>`.
    pub fn isolated(path: &Path, text: String) -> Self {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut name: String = stem.chars().map(|c| if is_id_rest(c) { c } else { '_' }).collect();
        if !name.chars().next().is_some_and(is_id_first) {
            name.insert(0, '_');
        }
        let digest = Sha256::digest(text.as_bytes());
        let hex: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
        let name = format!("{name}_{hex}");
        SourceFile { path: path.to_path_buf(), module: ModuleName(vec![name]), text }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub module: ModuleName,
    pub path: PathBuf,
    /// Imports that resolved to nodes, in header order.
    pub imports: Vec<ModuleName>,
    pub unresolved: Vec<ModuleName>,
}

/// Nodes sorted by module name; dependency lists are node indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ImportGraph {
    nodes: Vec<GraphNode>,
    index: HashMap<ModuleName, usize>,
    deps: Vec<Vec<usize>>,
    dependents: Vec<Vec<usize>>,
}

impl ImportGraph {
    /// Assemble a graph from nodes whose `imports` must all name nodes.
    pub fn from_nodes(mut nodes: Vec<GraphNode>) -> Result<Self, GraphError> {
        nodes.sort_by(|a, b| a.module.cmp(&b.module));
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if let Some(prev) = index.insert(node.module.clone(), i) {
                return Err(GraphError::DuplicateModuleName {
                    module: node.module.clone(),
                    path_a: nodes[prev].path.display().to_string(),
                    path_b: node.path.display().to_string(),
                });
            }
        }
        let mut deps = vec![Vec::new(); nodes.len()];
        let mut dependents = vec![Vec::new(); nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            for imp in &node.imports {
                let j = *index
                    .get(imp)
                    .ok_or_else(|| GraphError::DanglingEdge { from: node.module.clone(), to: imp.clone() })?;
                deps[i].push(j);
                dependents[j].push(i);
            }
        }
        Ok(ImportGraph { nodes, index, deps, dependents })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &GraphNode {
        &self.nodes[i]
    }

    pub fn index_of(&self, module: &ModuleName) -> Option<usize> {
        self.index.get(module).copied()
    }

    /// Indices of the modules node `i` imports.
    pub fn deps(&self, i: usize) -> &[usize] {
        &self.deps[i]
    }

    /// Indices of the modules importing node `i`.
    pub fn dependents(&self, i: usize) -> &[usize] {
        &self.dependents[i]
    }

    /// `(importer, imported)` pairs.
    pub fn edges(&self) -> BTreeSet<(ModuleName, ModuleName)> {
        self.nodes
            .iter()
            .flat_map(|n| n.imports.iter().map(move |m| (n.module.clone(), m.clone())))
            .collect()
    }

    pub fn unresolved(&self) -> BTreeSet<(ModuleName, ModuleName)> {
        self.nodes
            .iter()
            .flat_map(|n| n.unresolved.iter().map(move |m| (n.module.clone(), m.clone())))
            .collect()
    }

    pub fn to_records(&self) -> Vec<GraphRecord> {
        self.nodes
            .iter()
            .map(|n| GraphRecord {
                module: n.module.clone(),
                path: n.path.clone(),
                imports: n.imports.clone(),
                unresolved: n.unresolved.clone(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<GraphRecord>) -> Result<Self, GraphError> {
        ImportGraph::from_nodes(
            records
                .into_iter()
                .map(|r| GraphNode { module: r.module, path: r.path, imports: r.imports, unresolved: r.unresolved })
                .collect(),
        )
    }
}

/// Line-delimited form of one graph node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub module: ModuleName,
    pub path: PathBuf,
    pub imports: Vec<ModuleName>,
    pub unresolved: Vec<ModuleName>,
}

/// One node per file. Imports naming a known module become edges; the rest
/// are recorded as unresolved and treated as prebuilt.
pub fn build_graph(files: &[SourceFile], extra_isolated: &[SourceFile]) -> Result<ImportGraph, GraphError> {
    let mut known: BTreeMap<&ModuleName, &Path> = BTreeMap::new();
    for f in files.iter().chain(extra_isolated) {
        if let Some(prev) = known.insert(&f.module, &f.path) {
            return Err(GraphError::DuplicateModuleName {
                module: f.module.clone(),
                path_a: prev.display().to_string(),
                path_b: f.path.display().to_string(),
            });
        }
    }
    let nodes = files
        .iter()
        .chain(extra_isolated)
        .map(|f| {
            let (imports, unresolved) = parse_imports(&f.text)
                .modules
                .into_iter()
                .partition(|m| known.contains_key(m));
            GraphNode { module: f.module.clone(), path: f.path.clone(), imports, unresolved }
        })
        .collect();
    ImportGraph::from_nodes(nodes)
}

/// One shortest cycle per strongly connected component that has one,
/// starting at the component's name-least module. Empty iff acyclic.
pub fn detect_cycles(graph: &ImportGraph) -> Vec<Vec<ModuleName>> {
    let mut g = DiGraph::<usize, ()>::new();
    let ids: Vec<_> = (0..graph.len()).map(|i| g.add_node(i)).collect();
    for i in 0..graph.len() {
        for &j in graph.deps(i) {
            g.add_edge(ids[i], ids[j], ());
        }
    }
    let mut cycles = Vec::new();
    for scc in tarjan_scc(&g) {
        let members: BTreeSet<usize> = scc.iter().map(|&n| g[n]).collect();
        let start = *members.first().expect("nonempty scc");
        let self_loop = graph.deps(start).contains(&start);
        if members.len() == 1 && !self_loop {
            continue;
        }
        if self_loop {
            cycles.push(vec![graph.node(start).module.clone()]);
            continue;
        }
        // BFS inside the component for the shortest walk back to `start`
        let mut parent: HashMap<usize, usize> = HashMap::new();
        let mut queue = VecDeque::from([start]);
        let mut closing = None;
        'bfs: while let Some(u) = queue.pop_front() {
            let mut next: Vec<usize> = graph.deps(u).iter().copied().filter(|v| members.contains(v)).collect();
            next.sort_unstable();
            for v in next {
                if v == start {
                    closing = Some(u);
                    break 'bfs;
                }
                if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(v) {
                    e.insert(u);
                    queue.push_back(v);
                }
            }
        }
        let mut walk = vec![closing.expect("scc member reaches start")];
        while *walk.last().expect("walk") != start {
            let last = *walk.last().expect("walk");
            walk.push(parent[&last]);
        }
        walk.reverse();
        cycles.push(walk.into_iter().map(|i| graph.node(i).module.clone()).collect());
    }
    cycles.sort();
    cycles
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleWave {
    pub wave: usize,
    pub modules: Vec<ModuleName>,
}

/// Longest-dependency-chain rank of every node.
pub fn ranks(graph: &ImportGraph) -> Result<Vec<usize>, GraphError> {
    let cycles = detect_cycles(graph);
    if !cycles.is_empty() {
        return Err(GraphError::CyclicGraph(cycles));
    }
    let mut remaining: Vec<usize> = (0..graph.len()).map(|i| graph.deps(i).len()).collect();
    let mut rank = vec![0usize; graph.len()];
    let mut queue: VecDeque<usize> = (0..graph.len()).filter(|&i| remaining[i] == 0).collect();
    while let Some(u) = queue.pop_front() {
        for &v in graph.dependents(u) {
            rank[v] = rank[v].max(rank[u] + 1);
            remaining[v] -= 1;
            if remaining[v] == 0 {
                queue.push_back(v);
            }
        }
    }
    Ok(rank)
}

/// Partition nodes into waves by longest dependency chain.
pub fn topo_waves(graph: &ImportGraph) -> Result<Vec<ScheduleWave>, GraphError> {
    let rank = ranks(graph)?;
    let depth = rank.iter().copied().max().map_or(0, |m| m + 1);
    let mut waves: Vec<ScheduleWave> = (0..depth).map(|wave| ScheduleWave { wave, modules: Vec::new() }).collect();
    // nodes are already name-sorted
    for (i, &r) in rank.iter().enumerate() {
        waves[r].modules.push(graph.node(i).module.clone());
    }
    Ok(waves)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(s: &str) -> ModuleName {
        s.parse().unwrap()
    }

    fn file(module: &str, text: &str) -> SourceFile {
        SourceFile { path: PathBuf::from(format!("{}.lean", module.replace('.', "/"))), module: m(module), text: text.into() }
    }

    #[test]
    fn import_examples() {
        assert_eq!(parse_imports("").modules, vec![]);
        assert_eq!(
            parse_imports("import Mathlib.Data.Nat.Basic\nimport Aesop\n\ntheorem t : True := trivial").modules,
            vec![m("Mathlib.Data.Nat.Basic"), m("Aesop")]
        );
        assert_eq!(parse_imports("-- import Ghost\nimport A.B\nimport A.B").modules, vec![m("A.B")]);
    }

    #[test]
    fn header_ends_at_first_declaration() {
        let scan = parse_imports("/- doc\nimport Hidden -/\nprelude\nimport A\ndef x := 1\nimport B");
        assert_eq!(scan.modules, vec![m("A")]);
        let scan = parse_imports("import A -- trailing\nimport 9bad\nimport C");
        assert_eq!(scan.modules, vec![m("A"), m("C")]);
        assert_eq!(scan.warnings.len(), 1);
        assert!(scan.warnings[0].starts_with("line 2"));
    }

    #[test]
    fn module_names() {
        assert!("".parse::<ModuleName>().is_err());
        assert!("A..B".parse::<ModuleName>().is_err());
        assert_eq!(m("«my-file».X").segments(), ["«my-file»", "X"]);
        let f = SourceFile::project(Path::new("/r"), Path::new("/r/Foo/Bar.lean"), String::new()).unwrap();
        assert_eq!(f.module, m("Foo.Bar"));
        let f = SourceFile::project(Path::new("/r"), Path::new("/r/my-file.lean"), String::new()).unwrap();
        assert_eq!(f.module.to_string(), "«my-file»");
        assert!(SourceFile::project(Path::new("/r"), Path::new("/x/a.lean"), String::new()).is_err());
    }

    #[test]
    fn isolated_names_are_digest_suffixed() {
        let a = SourceFile::isolated(Path::new("/tmp/scratch-1.lean"), "theorem a : True := trivial".into());
        let b = SourceFile::isolated(Path::new("/tmp/scratch-1.lean"), "theorem b : True := trivial".into());
        let name = a.module.to_string();
        assert!(name.starts_with("scratch_1_"), "{name}");
        assert_eq!(name.len(), "scratch_1_".len() + 8);
        assert_ne!(a.module, b.module);
        let c = SourceFile::isolated(Path::new("1.lean"), String::new());
        assert!(is_identifier(&c.module.to_string()));
    }

    #[test]
    fn build_examples() {
        let g = build_graph(&[file("A", "")], &[]).unwrap();
        assert_eq!((g.len(), g.edges().len()), (1, 0));

        let g = build_graph(&[file("A", "import B"), file("B", "import C"), file("C", "")], &[]).unwrap();
        assert_eq!(g.edges(), [(m("A"), m("B")), (m("B"), m("C"))].into());

        let g = build_graph(&[file("A", "import Mathlib.X")], &[]).unwrap();
        assert_eq!(g.unresolved(), [(m("A"), m("Mathlib.X"))].into());
        assert!(g.edges().is_empty());
    }

    #[test]
    fn duplicate_module_rejected() {
        let mut b = file("A", "");
        b.path = PathBuf::from("other/A.lean");
        assert!(matches!(build_graph(&[file("A", "")], &[b]), Err(GraphError::DuplicateModuleName { .. })));
    }

    #[test]
    fn cycle_examples() {
        let chain = build_graph(&[file("A", "import B"), file("B", "import C"), file("C", "")], &[]).unwrap();
        assert!(detect_cycles(&chain).is_empty());
        let two = build_graph(&[file("A", "import B"), file("B", "import A")], &[]).unwrap();
        assert_eq!(detect_cycles(&two), vec![vec![m("A"), m("B")]]);
        let selfloop = build_graph(&[file("A", "import A")], &[]).unwrap();
        assert_eq!(detect_cycles(&selfloop), vec![vec![m("A")]]);
        // shortest cycle through A is A→C→A, not A→B→C→A
        let tri = build_graph(&[file("A", "import B\nimport C"), file("B", "import C"), file("C", "import A")], &[]).unwrap();
        assert_eq!(detect_cycles(&tri), vec![vec![m("A"), m("C")]]);
        assert!(matches!(topo_waves(&two), Err(GraphError::CyclicGraph(_))));
    }

    #[test]
    fn wave_examples() {
        let ind = build_graph(&[file("A", ""), file("B", ""), file("C", "")], &[]).unwrap();
        let waves = topo_waves(&ind).unwrap();
        assert_eq!(waves, vec![ScheduleWave { wave: 0, modules: vec![m("A"), m("B"), m("C")] }]);

        let chain = build_graph(&[file("A", "import B"), file("B", "import C"), file("C", "")], &[]).unwrap();
        let mods: Vec<_> = topo_waves(&chain).unwrap().into_iter().map(|w| w.modules).collect();
        assert_eq!(mods, vec![vec![m("C")], vec![m("B")], vec![m("A")]]);

        let diamond = build_graph(
            &[file("A", "import B\nimport C"), file("B", "import D"), file("C", "import D"), file("D", "")],
            &[],
        )
        .unwrap();
        let mods: Vec<_> = topo_waves(&diamond).unwrap().into_iter().map(|w| w.modules).collect();
        assert_eq!(mods, vec![vec![m("D")], vec![m("B"), m("C")], vec![m("A")]]);
    }

    #[test]
    fn records_round_trip() {
        let g = build_graph(&[file("A", "import B\nimport Z"), file("B", "")], &[]).unwrap();
        let back = ImportGraph::from_records(g.to_records()).unwrap();
        assert_eq!(back, g);
        let mut recs = g.to_records();
        recs[1].imports.push(m("Nope"));
        assert!(matches!(ImportGraph::from_records(recs), Err(GraphError::DanglingEdge { .. })));
    }
}
