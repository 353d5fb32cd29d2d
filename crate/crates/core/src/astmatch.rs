//! AST matching between consecutive revisions of a file and change
//! classification (style, refactoring, semantic).
//!
//! The matcher follows the classic three-phase tree-differencing scheme:
//! identical subtrees top-down, containers bottom-up by Dice similarity,
//! then recovery of remaining children inside matched containers. All tie
//! breaks are explicit so the mapping is a pure function of the two trees.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use similar::{capture_diff_slices, Algorithm, DiffOp};

use crate::minilang::{self, line_texts, NodeId, NodeKind, ParseError, Program, SourceFile};

/// Smallest subtree height considered by top-down matching.
pub const MIN_HEIGHT: usize = 2;
/// Minimum Dice similarity for bottom-up container matching.
pub const DICE_THRESHOLD: f64 = 0.5;
/// Upper bound on search steps when looking for a function renaming.
const RENAME_SEARCH_CAP: usize = 200_000;

/// A partial bijection between the nodes of two programs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeMapping {
    fwd: BTreeMap<NodeId, NodeId>,
    back: BTreeMap<NodeId, NodeId>,
    old_len: usize,
    new_len: usize,
}

impl NodeMapping {
    fn new(old_len: usize, new_len: usize) -> Self {
        NodeMapping {
            old_len,
            new_len,
            ..Default::default()
        }
    }

    fn insert(&mut self, old: NodeId, new: NodeId) {
        debug_assert!(!self.fwd.contains_key(&old) && !self.back.contains_key(&new));
        self.fwd.insert(old, new);
        self.back.insert(new, old);
    }

    /// Partner of an old node.
    pub fn get(&self, old: NodeId) -> Option<NodeId> {
        self.fwd.get(&old).copied()
    }

    /// Partner of a new node.
    pub fn get_old(&self, new: NodeId) -> Option<NodeId> {
        self.back.get(&new).copied()
    }

    pub fn has_old(&self, old: NodeId) -> bool {
        self.fwd.contains_key(&old)
    }

    pub fn has_new(&self, new: NodeId) -> bool {
        self.back.contains_key(&new)
    }

    /// Mapped pairs in ascending old id.
    pub fn pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.fwd.iter().map(|(&a, &b)| (a, b))
    }

    pub fn len(&self) -> usize {
        self.fwd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fwd.is_empty()
    }

    pub fn unmapped_old(&self) -> BTreeSet<NodeId> {
        (0..self.old_len).filter(|i| !self.fwd.contains_key(i)).collect()
    }

    pub fn unmapped_new(&self) -> BTreeSet<NodeId> {
        (0..self.new_len).filter(|i| !self.back.contains_key(i)).collect()
    }

    /// Every node on both sides is mapped.
    pub fn is_total(&self) -> bool {
        self.fwd.len() == self.old_len && self.back.len() == self.new_len
    }
}

struct TreeInfo {
    height: Vec<usize>,
    hash: Vec<u64>,
    size: Vec<usize>,
}

impl TreeInfo {
    fn new(p: &Program) -> Self {
        let n = p.len();
        let mut height = vec![1; n];
        let mut hash = vec![0; n];
        let mut size = vec![1; n];
        for id in (0..n).rev() {
            let node = p.node(id);
            let mut h = DefaultHasher::new();
            node.kind.hash(&mut h);
            node.label.hash(&mut h);
            node.ty.hash(&mut h);
            node.children.len().hash(&mut h);
            for &c in &node.children {
                height[id] = height[id].max(height[c] + 1);
                size[id] += size[c];
                hash[c].hash(&mut h);
            }
            hash[id] = h.finish();
        }
        TreeInfo { height, hash, size }
    }
}

fn isomorphic(a: &Program, ai: &TreeInfo, x: NodeId, b: &Program, bi: &TreeInfo, y: NodeId) -> bool {
    ai.hash[x] == bi.hash[y]
        && ai.size[x] == bi.size[y]
        && (0..ai.size[x]).all(|k| {
            let (m, n) = (a.node(x + k), b.node(y + k));
            m.kind == n.kind && m.label == n.label && m.ty == n.ty && m.children.len() == n.children.len()
        })
}

struct Matcher<'a> {
    old: &'a Program,
    new: &'a Program,
    oi: TreeInfo,
    ni: TreeInfo,
    m: NodeMapping,
}

impl Matcher<'_> {
    fn map_subtree(&mut self, x: NodeId, y: NodeId) {
        for k in 0..self.oi.size[x] {
            self.m.insert(x + k, y + k);
        }
    }

    fn dice(&self, x: NodeId, y: NodeId) -> f64 {
        let (sx, sy) = (self.oi.size[x] - 1, self.ni.size[y] - 1);
        if sx + sy == 0 {
            return 0.0;
        }
        let y_range = y + 1..y + self.ni.size[y];
        let common = (x + 1..x + self.oi.size[x])
            .filter(|&d| self.m.get(d).is_some_and(|p| y_range.contains(&p)))
            .count();
        2.0 * common as f64 / (sx + sy) as f64
    }

    fn parent_dice(&self, x: NodeId, y: NodeId) -> f64 {
        match (self.old.node(x).parent, self.new.node(y).parent) {
            (Some(px), Some(py)) => self.dice(px, py),
            _ => 0.0,
        }
    }

    /// Distance between two nodes' token ranges.
    fn span_distance(&self, x: NodeId, y: NodeId) -> usize {
        let (a, b) = (self.old.node(x).toks, self.new.node(y).toks);
        a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
    }

    fn top_down(&mut self) {
        let mut l1 = vec![Program::ROOT];
        let mut l2 = vec![Program::ROOT];
        let mut ambiguous: Vec<(NodeId, NodeId)> = Vec::new();
        let peek = |l: &[NodeId], info: &TreeInfo| l.iter().map(|&i| info.height[i]).max().unwrap_or(0);
        let open = |l: &mut Vec<NodeId>, p: &Program, id: NodeId| l.extend(p.node(id).children.iter().copied());
        loop {
            let (h1, h2) = (peek(&l1, &self.oi), peek(&l2, &self.ni));
            if h1.min(h2) < MIN_HEIGHT {
                break;
            }
            if h1 != h2 {
                let h = h1.max(h2);
                if h1 > h2 {
                    let (top, rest): (Vec<_>, Vec<_>) = l1.iter().partition(|&&i| self.oi.height[i] == h);
                    l1 = rest;
                    top.into_iter().for_each(|t| open(&mut l1, self.old, t));
                } else {
                    let (top, rest): (Vec<_>, Vec<_>) = l2.iter().partition(|&&i| self.ni.height[i] == h);
                    l2 = rest;
                    top.into_iter().for_each(|t| open(&mut l2, self.new, t));
                }
                continue;
            }
            let (mut hs1, rest1): (Vec<_>, Vec<_>) = l1.iter().partition(|&&i| self.oi.height[i] == h1);
            let (mut hs2, rest2): (Vec<_>, Vec<_>) = l2.iter().partition(|&&i| self.ni.height[i] == h2);
            l1 = rest1;
            l2 = rest2;
            hs1.sort_unstable();
            hs2.sort_unstable();
            let mut by_hash: HashMap<u64, Vec<NodeId>> = HashMap::new();
            for &t2 in &hs2 {
                by_hash.entry(self.ni.hash[t2]).or_default().push(t2);
            }
            let mut iso_pairs = Vec::new();
            let mut count1: HashMap<NodeId, usize> = HashMap::new();
            let mut count2: HashMap<NodeId, usize> = HashMap::new();
            for &t1 in &hs1 {
                for &t2 in by_hash.get(&self.oi.hash[t1]).map_or(&[][..], |v| v.as_slice()) {
                    if isomorphic(self.old, &self.oi, t1, self.new, &self.ni, t2) {
                        iso_pairs.push((t1, t2));
                        *count1.entry(t1).or_default() += 1;
                        *count2.entry(t2).or_default() += 1;
                    }
                }
            }
            for &(t1, t2) in &iso_pairs {
                if count1[&t1] == 1 && count2[&t2] == 1 {
                    self.map_subtree(t1, t2);
                } else {
                    ambiguous.push((t1, t2));
                }
            }
            for t1 in hs1 {
                if !count1.contains_key(&t1) {
                    open(&mut l1, self.old, t1);
                }
            }
            for t2 in hs2 {
                if !count2.contains_key(&t2) {
                    open(&mut l2, self.new, t2);
                }
            }
        }
        let mut keyed: Vec<(f64, usize, NodeId, NodeId)> = ambiguous
            .into_iter()
            .map(|(a, b)| (self.parent_dice(a, b), self.span_distance(a, b), a, b))
            .collect();
        keyed.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)).then(x.3.cmp(&y.3)));
        for (_, _, a, b) in keyed {
            if !self.m.has_old(a) && !self.m.has_new(b) {
                self.map_subtree(a, b);
            }
        }
    }

    fn postorder(p: &Program) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(p.len());
        let mut stack = vec![(Program::ROOT, false)];
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                out.push(id);
            } else {
                stack.push((id, true));
                for &c in p.node(id).children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        out
    }

    fn bottom_up(&mut self) {
        for t1 in Self::postorder(self.old) {
            let node = self.old.node(t1);
            if self.m.has_old(t1) || node.children.is_empty() {
                continue;
            }
            let mut candidates = BTreeSet::new();
            for d in t1 + 1..t1 + self.oi.size[t1] {
                if let Some(p) = self.m.get(d) {
                    for a in self.new.ancestors(p) {
                        if !self.m.has_new(a) && self.new.node(a).kind == node.kind {
                            candidates.insert(a);
                        }
                    }
                }
            }
            let best = candidates
                .into_iter()
                .map(|c| (self.dice(t1, c), self.span_distance(t1, c), c))
                .filter(|(d, _, _)| *d >= DICE_THRESHOLD)
                .min_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            if let Some((_, _, c)) = best {
                self.m.insert(t1, c);
            }
        }
        let root = Program::ROOT;
        if !self.m.has_old(root) && !self.m.has_new(root) && self.share_child_kind(root, root) {
            self.m.insert(root, root);
        }
    }

    fn share_child_kind(&self, x: NodeId, y: NodeId) -> bool {
        let kinds: BTreeSet<NodeKind> = self.new.node(y).children.iter().map(|&c| self.new.node(c).kind).collect();
        self.old.node(x).children.iter().any(|&c| kinds.contains(&self.old.node(c).kind))
    }

    fn recover(&mut self) {
        for x in 0..self.old.len() {
            let Some(y) = self.m.get(x) else { continue };
            let mut free1: Vec<NodeId> = self.old.node(x).children.iter().copied().filter(|&c| !self.m.has_old(c)).collect();
            let mut free2: Vec<NodeId> = self.new.node(y).children.iter().copied().filter(|&c| !self.m.has_new(c)).collect();
            for exact in [true, false] {
                let mut i = 0;
                while i < free1.len() {
                    let a = self.old.node(free1[i]);
                    let hit = free2.iter().position(|&c| {
                        let b = self.new.node(c);
                        b.kind == a.kind && (!exact || (b.label == a.label && b.ty == a.ty))
                    });
                    if let Some(j) = hit {
                        self.m.insert(free1.remove(i), free2.remove(j));
                    } else {
                        i += 1;
                    }
                }
            }
        }
    }
}

/// Map nodes of `old` to nodes of `new`.
pub fn match_trees(old: &Program, new: &Program) -> NodeMapping {
    let mut m = Matcher {
        old,
        new,
        oi: TreeInfo::new(old),
        ni: TreeInfo::new(new),
        m: NodeMapping::new(old.len(), new.len()),
    };
    if isomorphic(old, &m.oi, Program::ROOT, new, &m.ni, Program::ROOT) {
        m.map_subtree(Program::ROOT, Program::ROOT);
        return m.m;
    }
    m.top_down();
    m.bottom_up();
    m.recover();
    m.m
}

/// Per-file change class between two revisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChangeClass {
    Unchanged,
    Style,
    Refactoring,
    Semantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LineFlags {
    pub touched: bool,
    pub semantic: bool,
}

/// Classification of one file between two revisions. `lines` holds flags
/// for every old line that carries code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub class: ChangeClass,
    pub mapped_pairs: usize,
    pub lines: BTreeMap<u32, LineFlags>,
}

impl FileChange {
    pub fn line(&self, line: u32) -> LineFlags {
        self.lines.get(&line).copied().unwrap_or_default()
    }
}

/// Classify the change from `old` to `new`.
pub fn classify_change(old: &SourceFile, new: &SourceFile) -> Result<FileChange, ParseError> {
    let (po, pn) = (old.parse()?, new.parse()?);
    let mapping = match_trees(&po, &pn);
    Ok(classify_with(&old.text, &po, &new.text, &pn, &mapping))
}

/// Classification given already parsed programs and their mapping.
pub fn classify_with(old_text: &str, old: &Program, new_text: &str, new: &Program, mapping: &NodeMapping) -> FileChange {
    let class = if old_text == new_text {
        ChangeClass::Unchanged
    } else if minilang::join_tokens(&old.tokens) == minilang::join_tokens(&new.tokens) {
        ChangeClass::Style
    } else if refactoring_equivalent(old, new) {
        ChangeClass::Refactoring
    } else {
        ChangeClass::Semantic
    };
    let old_lines = line_texts(old);
    let mut lines: BTreeMap<u32, LineFlags> = old_lines.keys().map(|&l| (l, LineFlags::default())).collect();
    if matches!(class, ChangeClass::Refactoring | ChangeClass::Semantic) {
        let new_lines = line_texts(new);
        let align = align_lines(old, new, mapping, &old_lines, &new_lines);
        let (oc, nc) = (canonical_labels(old), canonical_labels(new));
        for (&l, flags) in lines.iter_mut() {
            let target = align.get(&l).copied();
            flags.touched = target.and_then(|t| new_lines.get(&t)) != Some(&old_lines[&l]);
            if flags.touched && class == ChangeClass::Semantic {
                flags.semantic = match (line_owner(old, l), target) {
                    (Some(o), Some(t)) => match mapping.get(o) {
                        Some(n) => line_signature(old, &oc, o, l) != line_signature(new, &nc, n, t),
                        None => true,
                    },
                    _ => true,
                };
            }
        }
    }
    FileChange {
        class,
        mapped_pairs: mapping.len(),
        lines,
    }
}

/// Old line -> new line alignment: anchored on mapped statements and
/// function declarations, completed by an LCS over normalized line texts.
fn align_lines(
    old: &Program,
    new: &Program,
    mapping: &NodeMapping,
    old_lines: &BTreeMap<u32, String>,
    new_lines: &BTreeMap<u32, String>,
) -> BTreeMap<u32, u32> {
    let mut align = BTreeMap::new();
    for (o, n) in mapping.pairs() {
        let (a, b) = (old.node(o), new.node(n));
        if a.kind.is_statement() || a.kind == NodeKind::FnDecl {
            align.insert(a.span.start_line, b.span.start_line);
            align.entry(a.span.end_line).or_insert(b.span.end_line);
        }
    }
    let ol: Vec<(&u32, &String)> = old_lines.iter().collect();
    let nl: Vec<(&u32, &String)> = new_lines.iter().collect();
    let ot: Vec<&String> = ol.iter().map(|x| x.1).collect();
    let nt: Vec<&String> = nl.iter().map(|x| x.1).collect();
    for op in capture_diff_slices(Algorithm::Lcs, &ot, &nt) {
        if let DiffOp::Equal { old_index, new_index, len } = op {
            for k in 0..len {
                align.entry(*ol[old_index + k].0).or_insert(*nl[new_index + k].0);
            }
        }
    }
    align
}

/// The statement a line belongs to: the outermost statement starting on it,
/// else the innermost statement spanning it, else a function starting on it.
fn line_owner(p: &Program, line: u32) -> Option<NodeId> {
    let starts = p.nodes.iter().find(|n| n.kind.is_statement() && n.span.start_line == line);
    let spans = || {
        p.nodes
            .iter()
            .rfind(|n| n.kind.is_statement() && n.span.start_line <= line && line <= n.span.end_line)
    };
    let header = || p.nodes.iter().find(|n| n.kind == NodeKind::FnDecl && n.span.start_line == line);
    starts.or_else(spans).or_else(header).map(|n| n.id)
}

fn line_signature<'p>(p: &'p Program, canon: &'p [String], owner: NodeId, line: u32) -> Vec<(NodeKind, &'p str, Option<minilang::Type>)> {
    p.subtree(owner)
        .filter(|&i| p.node(i).span.start_line == line)
        .map(|i| (p.node(i).kind, canon[i].as_str(), p.node(i).ty))
        .collect()
}

/// Node labels with local variables replaced by their binding index within
/// the enclosing function (`b0`, `b1`, ... in declaration order, parameters
/// first). Names that do not resolve become `free:<name>`.
pub fn canonical_labels(p: &Program) -> Vec<String> {
    let mut labels: Vec<String> = p.nodes.iter().map(|n| n.label.clone()).collect();
    for f in p.functions() {
        let mut scopes: Vec<HashMap<&str, usize>> = vec![HashMap::new()];
        let mut next = 0;
        canon_walk(p, f.id, &mut scopes, &mut next, &mut labels);
    }
    labels
}

fn resolve(scopes: &[HashMap<&str, usize>], name: &str) -> String {
    scopes
        .iter()
        .rev()
        .find_map(|s| s.get(name))
        .map_or_else(|| format!("free:{name}"), |b| format!("b{b}"))
}

fn canon_walk<'p>(p: &'p Program, id: NodeId, scopes: &mut Vec<HashMap<&'p str, usize>>, next: &mut usize, labels: &mut [String]) {
    let node = p.node(id);
    let bind = |scopes: &mut Vec<HashMap<&'p str, usize>>, next: &mut usize| {
        scopes.last_mut().expect("scope").insert(node.label.as_str(), *next);
        *next += 1;
        format!("b{}", *next - 1)
    };
    match node.kind {
        NodeKind::Param => labels[id] = bind(scopes, next),
        NodeKind::Ident | NodeKind::Assign => labels[id] = resolve(scopes, &node.label),
        _ => {}
    }
    if node.kind == NodeKind::Block {
        scopes.push(HashMap::new());
    }
    for &c in &node.children {
        canon_walk(p, c, scopes, next, labels);
    }
    match node.kind {
        NodeKind::Block => {
            scopes.pop();
        }
        NodeKind::Let => labels[id] = bind(scopes, next),
        _ => {}
    }
}

struct FnShape<'p> {
    name: &'p str,
    key: String,
    calls: Vec<&'p str>,
}

fn fn_shapes<'p>(p: &'p Program, canon: &[String]) -> Vec<FnShape<'p>> {
    p.functions()
        .map(|f| {
            let mut key = String::new();
            let mut calls = Vec::new();
            for i in p.subtree(f.id) {
                let n = p.node(i);
                let label = match n.kind {
                    NodeKind::FnDecl | NodeKind::Call => "_",
                    _ => canon[i].as_str(),
                };
                if n.kind == NodeKind::Call {
                    calls.push(n.label.as_str());
                }
                key.push_str(&format!("({:?} {} {:?} {})", n.kind, label, n.ty, n.children.len()));
            }
            FnShape {
                name: &f.label,
                key,
                calls,
            }
        })
        .collect()
}

/// Whether `new` is `old` up to consistent renaming of variables,
/// parameters and functions and reordering of function declarations.
pub fn refactoring_equivalent(old: &Program, new: &Program) -> bool {
    let (oc, nc) = (canonical_labels(old), canonical_labels(new));
    let (a, b) = (fn_shapes(old, &oc), fn_shapes(new, &nc));
    if a.len() != b.len() {
        return false;
    }
    let mut ka: Vec<&str> = a.iter().map(|f| f.key.as_str()).collect();
    let mut kb: Vec<&str> = b.iter().map(|f| f.key.as_str()).collect();
    ka.sort_unstable();
    kb.sort_unstable();
    if ka != kb {
        return false;
    }
    let mut search = RenameSearch {
        a: &a,
        b: &b,
        ai: a.iter().enumerate().map(|(i, f)| (f.name, i)).collect(),
        bi: b.iter().enumerate().map(|(i, f)| (f.name, i)).collect(),
        fwd: vec![None; a.len()],
        back: vec![None; b.len()],
        steps: 0,
    };
    search.run(0)
}

struct RenameSearch<'s, 'p> {
    a: &'s [FnShape<'p>],
    b: &'s [FnShape<'p>],
    ai: HashMap<&'p str, usize>,
    bi: HashMap<&'p str, usize>,
    fwd: Vec<Option<usize>>,
    back: Vec<Option<usize>>,
    steps: usize,
}

impl RenameSearch<'_, '_> {
    /// Bind `i -> j` and everything the call sites imply; on conflict undo
    /// the bindings made here and return false.
    fn bind(&mut self, i: usize, j: usize, log: &mut Vec<usize>) -> bool {
        let mut work = vec![(i, j)];
        while let Some((x, y)) = work.pop() {
            match (self.fwd[x], self.back[y]) {
                (Some(yy), _) if yy == y => continue,
                (None, None) if self.a[x].key == self.b[y].key => {
                    self.fwd[x] = Some(y);
                    self.back[y] = Some(x);
                    log.push(x);
                    for (ca, cb) in self.a[x].calls.iter().zip(&self.b[y].calls) {
                        work.push((self.ai[ca], self.bi[cb]));
                    }
                }
                _ => return false,
            }
        }
        true
    }

    fn undo(&mut self, log: &[usize]) {
        for &x in log {
            if let Some(y) = self.fwd[x].take() {
                self.back[y] = None;
            }
        }
    }

    fn run(&mut self, i: usize) -> bool {
        if i == self.a.len() {
            return true;
        }
        if self.fwd[i].is_some() {
            return self.run(i + 1);
        }
        for j in 0..self.b.len() {
            self.steps += 1;
            if self.steps > RENAME_SEARCH_CAP {
                return false;
            }
            if self.back[j].is_some() || self.a[i].key != self.b[j].key {
                continue;
            }
            let mut log = Vec::new();
            if self.bind(i, j, &mut log) && self.run(i + 1) {
                return true;
            }
            self.undo(&log);
        }
        false
    }
}
