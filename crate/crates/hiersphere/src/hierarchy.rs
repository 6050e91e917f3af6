//! Class hierarchies as rooted trees.
//!
//! A hierarchy assigns every class a path from a synthetic or named root.
//! Two ordered views drive all downstream matrix code: `p_order`, the
//! non-root nodes in file order, and `l_order`, the leaves that carry
//! dataset labels (dataset label `j` is the leaf at `l_order[j]`).
//!
//! The on-disk format is a pair file: the first line holds the number of
//! `child parent` lines that follow, one edge per line, integer tokens,
//! LF-terminated. Files that omit a root get a synthetic one: every node
//! that never appears in the child column becomes a child of the synthetic
//! root. Files that name a unique such node use it as the root directly.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense node id. Parser-produced trees use `0..|P|` for the `p_order`
/// nodes, in order, and `|P|` for the root.
pub type NodeId = usize;

/// Path from the root encoded as 1-based sibling positions.
///
/// The root is the empty path; `depth` equals the number of positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePath(Vec<usize>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    /// Extends the path by one child position (1-based).
    pub fn child(&self, position: usize) -> Self {
        let mut indices = self.0.clone();
        indices.push(position);
        NodePath(indices)
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn positions(&self) -> &[usize] {
        &self.0
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}")
    }
}

/// One node of a hierarchy. `label` keeps the original file token.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub label: Option<String>,
}

/// A rooted class hierarchy.
///
/// `p_order` lists the non-root nodes (rows of the ancestry matrix) and
/// `l_order` the labeled leaves (its columns). Both orders are fixed at
/// construction so that matrix layouts are reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyTree {
    records: Vec<NodeRecord>,
    p_order: Vec<NodeId>,
    l_order: Vec<NodeId>,
}

impl HierarchyTree {
    /// Builds a tree from raw parts without validation. Used by tests and
    /// by `validate`, which must be able to inspect broken structures.
    pub fn from_records(
        records: Vec<NodeRecord>,
        p_order: Vec<NodeId>,
        l_order: Vec<NodeId>,
    ) -> Self {
        HierarchyTree {
            records,
            p_order,
            l_order,
        }
    }

    /// Non-root nodes in matrix row order.
    pub fn p_order(&self) -> &[NodeId] {
        &self.p_order
    }

    /// Labeled leaves in matrix column order; dataset label `j` maps to
    /// `l_order()[j]`.
    pub fn l_order(&self) -> &[NodeId] {
        &self.l_order
    }

    /// Number of classes |P| (all non-root nodes carry a class).
    pub fn num_classes(&self) -> usize {
        self.p_order.len()
    }

    /// Number of labeled leaf classes |L|.
    pub fn num_leaves(&self) -> usize {
        self.l_order.len()
    }

    pub fn records(&self) -> &[NodeRecord] {
        &self.records
    }

    pub fn record(&self, id: NodeId) -> Result<&NodeRecord> {
        // Canonical trees index records by id; fall back to a scan.
        if let Some(r) = self.records.get(id) {
            if r.id == id {
                return Ok(r);
            }
        }
        self.records
            .iter()
            .find(|r| r.id == id)
            .ok_or(Error::UnknownNode { id })
    }

    pub fn label(&self, id: NodeId) -> Result<Option<&str>> {
        Ok(self.record(id)?.label.as_deref())
    }

    pub fn parent_of(&self, id: NodeId) -> Result<Option<NodeId>> {
        Ok(self.record(id)?.parent)
    }

    /// The unique parentless node.
    pub fn root(&self) -> Result<NodeId> {
        let mut roots = self.records.iter().filter(|r| r.parent.is_none());
        let first = roots.next().ok_or(Error::NoRoot)?;
        if roots.next().is_some() {
            return Err(Error::InvalidTree("multiple roots".into()));
        }
        Ok(first.id)
    }

    /// Number of edges between `id` and the root; the root has depth 0.
    pub fn depth(&self, id: NodeId) -> Result<usize> {
        let mut depth = 0;
        let mut cur = id;
        while let Some(parent) = self.record(cur)?.parent {
            depth += 1;
            if depth > self.records.len() {
                return Err(Error::CycleDetected);
            }
            cur = parent;
        }
        Ok(depth)
    }

    /// Children of `id` in `p_order` order.
    pub fn children_of(&self, id: NodeId) -> Vec<NodeId> {
        self.p_order
            .iter()
            .copied()
            .filter(|&c| {
                self.record(c)
                    .map(|r| r.parent == Some(id))
                    .unwrap_or(false)
            })
            .collect()
    }

    /// Node ids on the walk from `id` up to (excluding) the root,
    /// starting at `id` itself.
    pub fn ancestors_or_self(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let mut chain = Vec::new();
        let mut cur = id;
        loop {
            let rec = self.record(cur)?;
            match rec.parent {
                Some(parent) => {
                    chain.push(cur);
                    if chain.len() > self.records.len() {
                        return Err(Error::CycleDetected);
                    }
                    cur = parent;
                }
                None => break,
            }
        }
        Ok(chain)
    }

    /// Position of each `p_order` node, for matrix row lookups.
    pub fn p_positions(&self) -> HashMap<NodeId, usize> {
        self.p_order
            .iter()
            .copied()
            .enumerate()
            .map(|(i, id)| (id, i))
            .collect()
    }

    /// Non-root nodes at exactly `level` edges below the root, in
    /// `p_order` order.
    pub fn nodes_at_depth(&self, level: usize) -> Result<Vec<NodeId>> {
        let mut out = Vec::new();
        for &id in &self.p_order {
            if self.depth(id)? == level {
                out.push(id);
            }
        }
        Ok(out)
    }

    /// The ancestor-or-self of `id` sitting at exactly `level`.
    pub fn ancestor_at_depth(&self, id: NodeId, level: usize) -> Result<NodeId> {
        let mut cur = id;
        let mut depth = self.depth(id)?;
        if depth < level {
            return Err(Error::EmptyLevel { level });
        }
        while depth > level {
            cur = self
                .record(cur)?
                .parent
                .ok_or(Error::EmptyLevel { level })?;
            depth -= 1;
        }
        Ok(cur)
    }

    /// Path of 1-based sibling positions from the root to `id`.
    pub fn path_of(&self, id: NodeId) -> Result<NodePath> {
        let chain = self.ancestors_or_self(id)?;
        let mut positions = Vec::with_capacity(chain.len());
        for &node in chain.iter().rev() {
            let parent = self.record(node)?.parent.expect("non-root in chain");
            let siblings = self.children_of(parent);
            let pos = siblings
                .iter()
                .position(|&s| s == node)
                .ok_or(Error::UnknownNode { id: node })?;
            positions.push(pos + 1);
        }
        Ok(NodePath(positions))
    }

    /// Inverse of `path_of`.
    pub fn node_at_path(&self, path: &NodePath) -> Result<NodeId> {
        let mut cur = self.root()?;
        for &pos in path.positions() {
            let siblings = self.children_of(cur);
            if pos == 0 || pos > siblings.len() {
                return Err(Error::UnknownNode { id: cur });
            }
            cur = siblings[pos - 1];
        }
        Ok(cur)
    }

    /// Serializes to the pair-file format. Trees with a synthetic
    /// (unlabeled) root omit the edges into it, exactly reproducing the
    /// rootless files such trees are parsed from.
    pub fn to_pairs(&self) -> Result<String> {
        let root = self.root()?;
        let root_rec = self.record(root)?;
        let synthetic_root = root_rec.label.is_none();
        let token = |id: NodeId| -> Result<String> {
            let rec = self.record(id)?;
            Ok(rec.label.clone().unwrap_or_else(|| rec.id.to_string()))
        };
        let mut lines = Vec::new();
        for &id in &self.p_order {
            let parent = self.record(id)?.parent.ok_or(Error::InvalidTree(
                "p_order contains a parentless node".into(),
            ))?;
            if synthetic_root && parent == root {
                continue;
            }
            lines.push(format!("{} {}", token(id)?, token(parent)?));
        }
        let mut out = format!("{}\n", lines.len());
        for line in lines {
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Shared tree assembly for the parser and the DAG resolver.
///
/// `pairs` are (child token, parent token) in file order. Node order:
/// children in pair order, then never-child tokens (future root children)
/// in token first-appearance order. Ids are dense in that order with the
/// root last.
fn build_from_pairs(
    pairs: &[(String, String)],
    allow_synthetic_root: bool,
) -> Result<HierarchyTree> {
    let mut parent_of: HashMap<&str, &str> = HashMap::new();
    let mut child_order: Vec<&str> = Vec::new();
    for (child, parent) in pairs {
        if parent_of.insert(child.as_str(), parent.as_str()).is_some() {
            return Err(Error::DuplicateChild {
                token: child.clone(),
            });
        }
        child_order.push(child.as_str());
    }

    let mut token_order: Vec<&str> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for (child, parent) in pairs {
        for token in [child.as_str(), parent.as_str()] {
            if seen.insert(token) {
                token_order.push(token);
            }
        }
    }

    let never_child: Vec<&str> = token_order
        .iter()
        .copied()
        .filter(|t| !parent_of.contains_key(t))
        .collect();

    // A unique never-child token is the root; several mean the file was
    // rootless and we attach them to a synthetic root.
    let (root_label, root_children): (Option<&str>, Vec<&str>) = match never_child.len() {
        0 => return Err(Error::CycleDetected),
        1 => (Some(never_child[0]), Vec::new()),
        _ if allow_synthetic_root => (None, never_child.clone()),
        _ => {
            return Err(Error::Disconnected {
                token: never_child[1].to_string(),
            })
        }
    };

    let mut p_tokens: Vec<&str> = child_order.clone();
    p_tokens.extend(root_children.iter().copied());

    let mut id_of: HashMap<&str, NodeId> = HashMap::new();
    for (i, t) in p_tokens.iter().enumerate() {
        id_of.insert(t, i);
    }
    let root_id = p_tokens.len();
    if let Some(label) = root_label {
        id_of.insert(label, root_id);
    }

    let mut records: Vec<NodeRecord> = Vec::with_capacity(p_tokens.len() + 1);
    for (i, t) in p_tokens.iter().enumerate() {
        let parent = match parent_of.get(t) {
            Some(p) => id_of[p],
            None => root_id,
        };
        records.push(NodeRecord {
            id: i,
            parent: Some(parent),
            label: Some(t.to_string()),
        });
    }
    records.push(NodeRecord {
        id: root_id,
        parent: None,
        label: root_label.map(str::to_string),
    });

    let parents: HashSet<&str> = pairs.iter().map(|(_, p)| p.as_str()).collect();
    let l_order: Vec<NodeId> = child_order
        .iter()
        .filter(|t| !parents.contains(*t))
        .map(|t| id_of[t])
        .collect();
    let p_order: Vec<NodeId> = (0..p_tokens.len()).collect();

    let tree = HierarchyTree::from_records(records, p_order, l_order);
    for &id in tree.p_order() {
        tree.depth(id)?; // surfaces CycleDetected for loops below the root
    }
    Ok(tree)
}

/// Parses pair-file text. Tokens must be non-negative integers; the
/// original tokens survive as node labels.
pub fn parse_pairs(text: &str) -> Result<HierarchyTree> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::NoClasses)?;
    let declared: usize = header.trim().parse().map_err(|_| Error::MalformedLine {
        line: 1,
        content: header.to_string(),
    })?;
    if declared == 0 {
        return Err(Error::NoClasses);
    }

    let mut pairs: Vec<(String, String)> = Vec::with_capacity(declared);
    for (idx, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let mut tokens = raw.split_whitespace();
        let (child, parent) = match (tokens.next(), tokens.next(), tokens.next()) {
            (Some(c), Some(p), None) => (c, p),
            _ => {
                return Err(Error::MalformedLine {
                    line: idx + 1,
                    content: raw.to_string(),
                })
            }
        };
        for t in [child, parent] {
            if t.parse::<u64>().is_err() {
                return Err(Error::MalformedLine {
                    line: idx + 1,
                    content: raw.to_string(),
                });
            }
        }
        pairs.push((child.to_string(), parent.to_string()));
    }
    if pairs.len() != declared {
        return Err(Error::PairCountMismatch {
            expected: declared,
            found: pairs.len(),
        });
    }
    build_from_pairs(&pairs, true)
}

/// Reads and parses a pair file from disk.
pub fn parse_pairs_file(path: &Path) -> Result<HierarchyTree> {
    let text = std::fs::read_to_string(path)?;
    parse_pairs(&text)
}

/// One validation finding; `Display` gives a short human-readable reason.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    MultipleParents { id: NodeId },
    DuplicateNode { id: NodeId },
    NoRoot,
    MultipleRoots { count: usize },
    DanglingParent { id: NodeId, parent: NodeId },
    Cycle { id: NodeId },
    RootInPOrder { id: NodeId },
    MissingFromPOrder { id: NodeId },
    DuplicateInPOrder { id: NodeId },
    UnknownInOrder { id: NodeId },
    LeafOrderNotLeaf { id: NodeId },
    LeafMissingFromLOrder { id: NodeId },
    DuplicateInLOrder { id: NodeId },
    LOrderOutsidePOrder { id: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MultipleParents { id } => write!(f, "node {id} has multiple parents"),
            Violation::DuplicateNode { id } => write!(f, "node {id} recorded more than once"),
            Violation::NoRoot => write!(f, "no root node"),
            Violation::MultipleRoots { count } => write!(f, "{count} root nodes"),
            Violation::DanglingParent { id, parent } => {
                write!(f, "node {id} references unknown parent {parent}")
            }
            Violation::Cycle { id } => write!(f, "node {id} sits on a cycle"),
            Violation::RootInPOrder { id } => write!(f, "root {id} listed in p_order"),
            Violation::MissingFromPOrder { id } => write!(f, "node {id} missing from p_order"),
            Violation::DuplicateInPOrder { id } => write!(f, "node {id} duplicated in p_order"),
            Violation::UnknownInOrder { id } => write!(f, "order references unknown node {id}"),
            Violation::LeafOrderNotLeaf { id } => write!(f, "l_order node {id} is not a leaf"),
            Violation::LeafMissingFromLOrder { id } => {
                write!(f, "leaf {id} missing from l_order")
            }
            Violation::DuplicateInLOrder { id } => write!(f, "node {id} duplicated in l_order"),
            Violation::LOrderOutsidePOrder { id } => {
                write!(f, "l_order node {id} not in p_order")
            }
        }
    }
}

/// Result of `validate`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks the structural invariants: single root, single parent per node,
/// no cycles, and consistency of the two order vectors.
pub fn validate(tree: &HierarchyTree) -> ValidationReport {
    let mut violations = Vec::new();
    let records = tree.records();

    let mut first_parent: HashMap<NodeId, Option<NodeId>> = HashMap::new();
    for r in records {
        match first_parent.get(&r.id) {
            None => {
                first_parent.insert(r.id, r.parent);
            }
            Some(prev) if *prev != r.parent => {
                violations.push(Violation::MultipleParents { id: r.id })
            }
            Some(_) => violations.push(Violation::DuplicateNode { id: r.id }),
        }
    }

    let known: HashSet<NodeId> = records.iter().map(|r| r.id).collect();
    for r in records {
        if let Some(p) = r.parent {
            if !known.contains(&p) {
                violations.push(Violation::DanglingParent {
                    id: r.id,
                    parent: p,
                });
            }
        }
    }

    let roots: Vec<NodeId> = records
        .iter()
        .filter(|r| r.parent.is_none())
        .map(|r| r.id)
        .collect();
    match roots.len() {
        0 => violations.push(Violation::NoRoot),
        1 => {}
        n => violations.push(Violation::MultipleRoots { count: n }),
    }

    // Parent walks bounded by the record count expose cycles.
    for r in records {
        let mut cur = r.id;
        let mut steps = 0;
        loop {
            match first_parent.get(&cur).copied().flatten() {
                Some(next) if known.contains(&next) => {
                    steps += 1;
                    if steps > records.len() {
                        violations.push(Violation::Cycle { id: r.id });
                        break;
                    }
                    cur = next;
                }
                _ => break,
            }
        }
    }

    let mut seen_p: HashSet<NodeId> = HashSet::new();
    for &id in tree.p_order() {
        if !known.contains(&id) {
            violations.push(Violation::UnknownInOrder { id });
            continue;
        }
        if !seen_p.insert(id) {
            violations.push(Violation::DuplicateInPOrder { id });
        }
        if roots.contains(&id) {
            violations.push(Violation::RootInPOrder { id });
        }
    }
    for r in records {
        if r.parent.is_some() && !seen_p.contains(&r.id) {
            violations.push(Violation::MissingFromPOrder { id: r.id });
        }
    }

    let parents_used: HashSet<NodeId> = records.iter().filter_map(|r| r.parent).collect();
    let mut seen_l: HashSet<NodeId> = HashSet::new();
    for &id in tree.l_order() {
        if !known.contains(&id) {
            violations.push(Violation::UnknownInOrder { id });
            continue;
        }
        if !seen_l.insert(id) {
            violations.push(Violation::DuplicateInLOrder { id });
        }
        if !seen_p.contains(&id) {
            violations.push(Violation::LOrderOutsidePOrder { id });
        }
        if parents_used.contains(&id) {
            violations.push(Violation::LeafOrderNotLeaf { id });
        }
    }
    for r in records {
        if r.parent.is_some() && !parents_used.contains(&r.id) && !seen_l.contains(&r.id) {
            violations.push(Violation::LeafMissingFromLOrder { id: r.id });
        }
    }

    ValidationReport { violations }
}

/// Collapses single-child chains: any non-root internal node with exactly
/// one child is removed and its child reattached to its parent, repeated
/// to a fixpoint. Leaves and their labels are untouched; the root is never
/// merged away. Ids are re-densified in surviving `p_order` order.
pub fn merge_single_child_chains(tree: &HierarchyTree) -> Result<HierarchyTree> {
    let report = validate(tree);
    if !report.is_valid() {
        return Err(Error::InvalidTree(report.to_string()));
    }
    let root = tree.root()?;

    let mut parent: HashMap<NodeId, Option<NodeId>> =
        tree.records().iter().map(|r| (r.id, r.parent)).collect();
    let mut alive: HashSet<NodeId> = parent.keys().copied().collect();

    loop {
        let mut child_count: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for &id in &alive {
            if let Some(Some(p)) = parent.get(&id) {
                child_count.entry(*p).or_default().push(id);
            }
        }
        let candidate = alive
            .iter()
            .copied()
            .find(|&id| id != root && child_count.get(&id).map(|c| c.len()) == Some(1));
        match candidate {
            Some(node) => {
                let only_child = child_count[&node][0];
                let grand = parent[&node];
                parent.insert(only_child, grand);
                alive.remove(&node);
            }
            None => break,
        }
    }

    let surviving: Vec<NodeId> = tree
        .p_order()
        .iter()
        .copied()
        .filter(|id| alive.contains(id))
        .collect();
    let mut new_id: HashMap<NodeId, NodeId> = HashMap::new();
    for (i, &id) in surviving.iter().enumerate() {
        new_id.insert(id, i);
    }
    let new_root = surviving.len();
    new_id.insert(root, new_root);

    let mut records: Vec<NodeRecord> = Vec::with_capacity(surviving.len() + 1);
    for &id in &surviving {
        records.push(NodeRecord {
            id: new_id[&id],
            parent: parent[&id].map(|p| new_id[&p]),
            label: tree.record(id)?.label.clone(),
        });
    }
    records.push(NodeRecord {
        id: new_root,
        parent: None,
        label: tree.record(root)?.label.clone(),
    });

    let p_order: Vec<NodeId> = (0..surviving.len()).collect();
    let l_order: Vec<NodeId> = tree.l_order().iter().map(|id| new_id[id]).collect();
    Ok(HierarchyTree::from_records(records, p_order, l_order))
}

/// Resolves a child→parents multimap into a tree by keeping, for every
/// node, the smallest parent id. Entry order fixes `p_order`. The input
/// must already have a unique root reaching every node; nothing is
/// synthesized here.
pub fn dag_to_tree(entries: &[(u64, Vec<u64>)]) -> Result<HierarchyTree> {
    if entries.is_empty() {
        return Err(Error::NoRoot);
    }
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (child, parents) in entries {
        if let Some(min_parent) = parents.iter().min() {
            pairs.push((child.to_string(), min_parent.to_string()));
        }
        // An empty parent list just declares the node; it must surface
        // through some other entry's parent column to get an id.
    }
    if pairs.is_empty() {
        return Err(Error::NoRoot);
    }
    build_from_pairs(&pairs, false)
}

/// Samples a two-level hierarchy: `num_supers` children of the root, each
/// leaf assigned to a super uniformly; assignments are redrawn until every
/// super owns at least one leaf. Same seed, same tree.
pub fn random_hierarchy(num_leaves: usize, num_supers: usize, seed: u64) -> Result<HierarchyTree> {
    if num_supers == 0 || num_leaves < num_supers {
        return Err(Error::InfeasibleCounts {
            leaves: num_leaves,
            supers: num_supers,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = loop {
        let draw: Vec<usize> = (0..num_leaves)
            .map(|_| rng.random_range(0..num_supers))
            .collect();
        let mut hit = vec![false; num_supers];
        for &s in &draw {
            hit[s] = true;
        }
        if hit.iter().all(|&h| h) {
            break draw;
        }
    };
    Ok(two_level_tree(&assignment, num_supers))
}

/// Canonical two-level tree: super ids `0..S`, leaf ids `S..S+L`, root
/// `S+L`, every label the node's own id. `assignment[k]` is leaf k's super.
pub(crate) fn two_level_tree(assignment: &[usize], num_supers: usize) -> HierarchyTree {
    let num_leaves = assignment.len();
    let root = num_supers + num_leaves;
    let mut records: Vec<NodeRecord> = Vec::with_capacity(root + 1);
    for s in 0..num_supers {
        records.push(NodeRecord {
            id: s,
            parent: Some(root),
            label: Some(s.to_string()),
        });
    }
    for (k, &s) in assignment.iter().enumerate() {
        records.push(NodeRecord {
            id: num_supers + k,
            parent: Some(s),
            label: Some((num_supers + k).to_string()),
        });
    }
    records.push(NodeRecord {
        id: root,
        parent: None,
        label: Some(root.to_string()),
    });
    HierarchyTree::from_records(records, (0..root).collect(), (num_supers..root).collect())
}

/// Shared test fixtures.
#[cfg(test)]
pub(crate) mod fixtures {
    /// Two super-classes with two leaves each, parents listed first so
    /// that p_order is (fruit, animal, apple, orange, cat, dog) with
    /// tokens 1..6 and the root named 0.
    pub const FRUIT_ANIMAL: &str = "6\n1 0\n2 0\n3 1\n4 1\n5 2\n6 2\n";
    /// Same tree, children listed first.
    pub const FRUIT_ANIMAL_CHILD_FIRST: &str = "6\n3 1\n4 1\n5 2\n6 2\n1 0\n2 0\n";
    /// Same tree with the root edges omitted entirely.
    pub const FRUIT_ANIMAL_ROOTLESS: &str = "4\n3 1\n4 1\n5 2\n6 2\n";
    /// Three-level chain plus a two-leaf super:
    /// root(0) -> {a(1) -> {b(3), c(4)}, d(2) -> e(5) -> f(6)}.
    pub const MIXED_DEPTH: &str = "6\n1 0\n2 0\n3 1\n4 1\n5 2\n6 5\n";
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn parses_counts_and_orders() {
        let tree = parse_pairs(FRUIT_ANIMAL).unwrap();
        assert_eq!(tree.num_classes(), 6);
        assert_eq!(tree.num_leaves(), 4);
        let labels: Vec<_> = tree
            .p_order()
            .iter()
            .map(|&id| tree.label(id).unwrap().unwrap().to_string())
            .collect();
        assert_eq!(labels, ["1", "2", "3", "4", "5", "6"]);
        let leaf_labels: Vec<_> = tree
            .l_order()
            .iter()
            .map(|&id| tree.label(id).unwrap().unwrap().to_string())
            .collect();
        assert_eq!(leaf_labels, ["3", "4", "5", "6"]);
        assert_eq!(tree.label(tree.root().unwrap()).unwrap(), Some("0"));
    }

    #[test]
    fn child_first_listing_keeps_counts() {
        let tree = parse_pairs(FRUIT_ANIMAL_CHILD_FIRST).unwrap();
        assert_eq!(tree.num_classes(), 6);
        assert_eq!(tree.num_leaves(), 4);
        let labels: Vec<_> = tree
            .p_order()
            .iter()
            .map(|&id| tree.label(id).unwrap().unwrap().to_string())
            .collect();
        assert_eq!(labels, ["3", "4", "5", "6", "1", "2"]);
    }

    #[test]
    fn rootless_file_gets_synthetic_root() {
        let tree = parse_pairs(FRUIT_ANIMAL_ROOTLESS).unwrap();
        assert_eq!(tree.num_classes(), 6);
        assert_eq!(tree.num_leaves(), 4);
        let root = tree.root().unwrap();
        assert_eq!(tree.label(root).unwrap(), None);
        // Never-child tokens 1 and 2 are appended after the leaves.
        let labels: Vec<_> = tree
            .p_order()
            .iter()
            .map(|&id| tree.label(id).unwrap().unwrap().to_string())
            .collect();
        assert_eq!(labels, ["3", "4", "5", "6", "1", "2"]);
    }

    #[test]
    fn single_pair_file() {
        let tree = parse_pairs("1\n1 0\n").unwrap();
        assert_eq!(tree.num_classes(), 1);
        assert_eq!(tree.num_leaves(), 1);
        assert_eq!(tree.depth(tree.l_order()[0]).unwrap(), 1);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(parse_pairs("0\n"), Err(Error::NoClasses)));
        assert!(matches!(
            parse_pairs("2\n1 0\n"),
            Err(Error::PairCountMismatch {
                expected: 2,
                found: 1
            })
        ));
        assert!(matches!(
            parse_pairs("1\n1 0\n2 0\n"),
            Err(Error::PairCountMismatch { .. })
        ));
        assert!(matches!(
            parse_pairs("1\n1\n"),
            Err(Error::MalformedLine { line: 2, .. })
        ));
        assert!(matches!(
            parse_pairs("1\nx 0\n"),
            Err(Error::MalformedLine { .. })
        ));
        assert!(matches!(
            parse_pairs("2\n1 0\n1 2\n"),
            Err(Error::DuplicateChild { .. })
        ));
        assert!(matches!(
            parse_pairs("2\n1 2\n2 1\n"),
            Err(Error::CycleDetected)
        ));
        // Cycle hanging below a legitimate root.
        assert!(matches!(
            parse_pairs("3\n1 2\n2 1\n3 4\n"),
            Err(Error::CycleDetected)
        ));
    }

    #[test]
    fn depth_walks_to_root() {
        let tree = parse_pairs(FRUIT_ANIMAL).unwrap();
        assert_eq!(tree.depth(tree.root().unwrap()).unwrap(), 0);
        assert_eq!(tree.depth(0).unwrap(), 1); // fruit
        assert_eq!(tree.depth(2).unwrap(), 2); // apple
        assert!(matches!(tree.depth(99), Err(Error::UnknownNode { id: 99 })));
    }

    #[test]
    fn paths_round_trip() {
        let tree = parse_pairs(FRUIT_ANIMAL).unwrap();
        let dog = tree.l_order()[3];
        let path = tree.path_of(dog).unwrap();
        assert_eq!(path.positions(), &[2, 2]);
        assert_eq!(path.depth(), tree.depth(dog).unwrap());
        assert_eq!(tree.node_at_path(&path).unwrap(), dog);
        assert!(tree.path_of(tree.root().unwrap()).unwrap().is_root());
        assert_eq!(NodePath::root().child(1).child(3).to_string(), "{1,3}");
    }

    #[test]
    fn serialization_round_trips() {
        for text in [
            FRUIT_ANIMAL,
            FRUIT_ANIMAL_CHILD_FIRST,
            FRUIT_ANIMAL_ROOTLESS,
        ] {
            let tree = parse_pairs(text).unwrap();
            let emitted = tree.to_pairs().unwrap();
            assert_eq!(parse_pairs(&emitted).unwrap(), tree);
        }
        // Rootless files serialize back without root edges.
        let tree = parse_pairs(FRUIT_ANIMAL_ROOTLESS).unwrap();
        assert_eq!(tree.to_pairs().unwrap(), FRUIT_ANIMAL_ROOTLESS);
    }

    #[test]
    fn validates_parsed_trees() {
        let tree = parse_pairs(FRUIT_ANIMAL).unwrap();
        assert!(validate(&tree).is_valid());
    }

    #[test]
    fn reports_multiple_parents() {
        let records = vec![
            NodeRecord {
                id: 0,
                parent: Some(2),
                label: None,
            },
            NodeRecord {
                id: 1,
                parent: Some(2),
                label: None,
            },
            NodeRecord {
                id: 0,
                parent: Some(1),
                label: None,
            },
            NodeRecord {
                id: 2,
                parent: None,
                label: None,
            },
        ];
        let tree = HierarchyTree::from_records(records, vec![0, 1], vec![0]);
        let report = validate(&tree);
        assert!(!report.is_valid());
        assert!(report.to_string().contains("multiple parents"));
    }

    #[test]
    fn reports_missing_root_and_cycles() {
        let records = vec![
            NodeRecord {
                id: 0,
                parent: Some(1),
                label: None,
            },
            NodeRecord {
                id: 1,
                parent: Some(0),
                label: None,
            },
        ];
        let tree = HierarchyTree::from_records(records, vec![0, 1], vec![]);
        let report = validate(&tree);
        let text = report.to_string();
        assert!(text.contains("no root"));
        assert!(text.contains("cycle"));
    }

    #[test]
    fn reports_order_inconsistencies() {
        let tree = parse_pairs(FRUIT_ANIMAL).unwrap();
        let broken = HierarchyTree::from_records(
            tree.records().to_vec(),
            vec![0, 0, 1, 2, 3, 4, 5],
            vec![2, 3, 4, 0],
        );
        let report = validate(&broken);
        let text = report.to_string();
        assert!(text.contains("duplicated in p_order"));
        assert!(text.contains("not a leaf"));
        assert!(text.contains("missing from l_order"));
    }

    #[test]
    fn merges_chain_to_single_leaf() {
        // root -> a -> b with b the only leaf collapses to root -> b.
        let tree = parse_pairs("2\n2 1\n1 0\n").unwrap();
        let merged = merge_single_child_chains(&tree).unwrap();
        assert_eq!(merged.num_classes(), 1);
        assert_eq!(merged.num_leaves(), 1);
        assert_eq!(merged.label(merged.l_order()[0]).unwrap(), Some("2"));
        assert_eq!(merged.depth(merged.l_order()[0]).unwrap(), 1);
    }

    #[test]
    fn merge_skips_root_and_branching_nodes() {
        // root -> a -> {b, c -> d}: only c merges away.
        let tree = parse_pairs("4\n1 0\n2 1\n3 1\n4 3\n").unwrap();
        let merged = merge_single_child_chains(&tree).unwrap();
        assert_eq!(merged.num_classes(), 3);
        let labels: Vec<_> = merged
            .p_order()
            .iter()
            .map(|&id| merged.label(id).unwrap().unwrap().to_string())
            .collect();
        assert_eq!(labels, ["1", "2", "4"]);
        let a = merged.p_order()[0];
        assert_eq!(merged.children_of(a).len(), 2);
        assert_eq!(merged.depth(merged.p_order()[2]).unwrap(), 2);
    }

    #[test]
    fn merge_is_idempotent_and_preserves_balanced_trees() {
        let tree = parse_pairs(FRUIT_ANIMAL).unwrap();
        let merged = merge_single_child_chains(&tree).unwrap();
        assert_eq!(merged, tree);
        let chain = parse_pairs("3\n3 2\n2 1\n1 0\n").unwrap();
        let once = merge_single_child_chains(&chain).unwrap();
        let twice = merge_single_child_chains(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn dag_keeps_smallest_parent() {
        let entries = vec![(9, vec![0]), (3, vec![0]), (5, vec![9, 3])];
        let tree = dag_to_tree(&entries).unwrap();
        let five = tree
            .p_order()
            .iter()
            .copied()
            .find(|&id| tree.label(id).unwrap() == Some("5"))
            .unwrap();
        let parent = tree.parent_of(five).unwrap().unwrap();
        assert_eq!(tree.label(parent).unwrap(), Some("3"));
    }

    #[test]
    fn dag_resolves_diamond() {
        // a=0 -> {b=1, c=2} -> d=3; d keeps parent 1.
        let entries = vec![(1, vec![0]), (2, vec![0]), (3, vec![1, 2])];
        let tree = dag_to_tree(&entries).unwrap();
        let d = tree
            .p_order()
            .iter()
            .copied()
            .find(|&id| tree.label(id).unwrap() == Some("3"))
            .unwrap();
        let parent = tree.parent_of(d).unwrap().unwrap();
        assert_eq!(tree.label(parent).unwrap(), Some("1"));
        assert!(validate(&tree).is_valid());
    }

    #[test]
    fn dag_identity_on_trees() {
        let tree = parse_pairs(FRUIT_ANIMAL).unwrap();
        let entries: Vec<(u64, Vec<u64>)> = tree
            .p_order()
            .iter()
            .map(|&id| {
                let child = tree.label(id).unwrap().unwrap().parse().unwrap();
                let parent = tree.parent_of(id).unwrap().unwrap();
                let parent = tree.label(parent).unwrap().unwrap().parse().unwrap();
                (child, vec![parent])
            })
            .collect();
        assert_eq!(dag_to_tree(&entries).unwrap(), tree);
    }

    #[test]
    fn dag_rejects_broken_inputs() {
        assert!(matches!(dag_to_tree(&[]), Err(Error::NoRoot)));
        // Two separate components, no shared root.
        let entries = vec![(1, vec![0]), (3, vec![2])];
        assert!(matches!(
            dag_to_tree(&entries),
            Err(Error::Disconnected { .. })
        ));
        let entries = vec![(1, vec![2]), (2, vec![1])];
        assert!(matches!(dag_to_tree(&entries), Err(Error::CycleDetected)));
    }

    #[test]
    fn random_hierarchy_is_seed_deterministic() {
        let a = random_hierarchy(36, 9, 7).unwrap();
        let b = random_hierarchy(36, 9, 7).unwrap();
        assert_eq!(a, b);
        let c = random_hierarchy(36, 9, 8).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.num_classes(), 45);
        assert_eq!(a.num_leaves(), 36);
        assert!(validate(&a).is_valid());
    }

    #[test]
    fn random_hierarchy_covers_every_super() {
        for seed in 0..20 {
            let tree = random_hierarchy(4, 4, seed).unwrap();
            for &s in &tree.nodes_at_depth(1).unwrap() {
                assert_eq!(tree.children_of(s).len(), 1);
            }
        }
        for seed in 0..5 {
            let tree = random_hierarchy(12, 5, seed).unwrap();
            for &s in &tree.nodes_at_depth(1).unwrap() {
                assert!(!tree.children_of(s).is_empty());
            }
        }
    }

    #[test]
    fn random_hierarchy_rejects_infeasible_counts() {
        assert!(matches!(
            random_hierarchy(3, 4, 0),
            Err(Error::InfeasibleCounts { .. })
        ));
        assert!(matches!(
            random_hierarchy(3, 0, 0),
            Err(Error::InfeasibleCounts { .. })
        ));
    }

    #[test]
    fn level_queries() {
        let tree = parse_pairs(FRUIT_ANIMAL).unwrap();
        let supers = tree.nodes_at_depth(1).unwrap();
        assert_eq!(supers, vec![0, 1]);
        let dog = tree.l_order()[3];
        assert_eq!(tree.ancestor_at_depth(dog, 1).unwrap(), 1);
        assert_eq!(tree.ancestor_at_depth(dog, 2).unwrap(), dog);
        assert!(tree.ancestor_at_depth(0, 2).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        // Random trees via random attachment, emitted as pair text so the
        // round trip exercises the parser end to end.
        fn random_attachment_file(n: usize, seed: u64) -> String {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut lines = Vec::with_capacity(n);
            for id in 1..=n {
                let parent = rng.random_range(0..id);
                lines.push(format!("{id} {parent}"));
            }
            format!("{n}\n{}\n", lines.join("\n"))
        }

        proptest! {
            #[test]
            fn parse_serialize_identity(n in 1usize..40, seed in 0u64..1000) {
                let tree = parse_pairs(&random_attachment_file(n, seed)).unwrap();
                let reparsed = parse_pairs(&tree.to_pairs().unwrap()).unwrap();
                prop_assert_eq!(reparsed, tree);
            }

            #[test]
            fn parsed_trees_validate(n in 1usize..40, seed in 0u64..1000) {
                let tree = parse_pairs(&random_attachment_file(n, seed)).unwrap();
                prop_assert!(validate(&tree).is_valid());
            }

            #[test]
            fn merge_fixpoint(n in 1usize..40, seed in 0u64..1000) {
                let tree = parse_pairs(&random_attachment_file(n, seed)).unwrap();
                let once = merge_single_child_chains(&tree).unwrap();
                prop_assert!(validate(&once).is_valid());
                for &id in once.p_order() {
                    prop_assert!(once.children_of(id).len() != 1);
                }
                prop_assert_eq!(once.num_leaves(), tree.num_leaves());
                prop_assert_eq!(merge_single_child_chains(&once).unwrap(), once);
            }
        }
    }
}
