//! The event-type hierarchy: vocabulary edges, manual supplements, lab
//! category nodes and imputation-provenance subtypes, kept as a forest.
//!
//! Node ids are `<class>/<code>` for edge-file nodes, `UNMAPPED/<class>` for
//! the synthetic roots that collect unmapped codes, and
//! `LOINC/<loinc>:<CATEGORY>/<PROVENANCE>` for provenance subtypes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::impute::CategorizedLabEvent;
use crate::model::{Category, CodeClass, EventRecord, EventType, LabCode, Provenance};

/// One row of an edge file. A row with empty parent fields declares a root
/// and its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub parent: Option<(String, String)>,
    pub child_class: String,
    pub child_code: String,
    pub child_label: String,
}

impl Edge {
    fn child_id(&self) -> String {
        node_id(&self.child_class, &self.child_code)
    }

    fn parent_id(&self) -> Option<String> {
        self.parent.as_ref().map(|(c, k)| node_id(c, k))
    }
}

pub fn node_id(class: &str, code: &str) -> String {
    format!("{class}/{code}")
}

pub fn unmapped_root_id(class: CodeClass) -> String {
    format!("UNMAPPED/{class}")
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

/// Parses an edge file: `parent_class, parent_code, child_class, child_code,
/// child_label`, tab-separated.
pub fn parse_edges(path: &Path, text: &str) -> Result<Vec<Edge>> {
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::parse(path, i + 1, format!("expected 5 fields, found {}", f.len())));
        }
        let parent = match (f[0], f[1]) {
            ("", "") => None,
            (c, k) if valid_token(c) && valid_token(k) => Some((c.to_string(), k.to_string())),
            _ => return Err(Error::parse(path, i + 1, "invalid parent class/code")),
        };
        if !valid_token(f[2]) || !valid_token(f[3]) {
            return Err(Error::parse(path, i + 1, "invalid child class/code"));
        }
        edges.push(Edge {
            parent,
            child_class: f[2].to_string(),
            child_code: f[3].to_string(),
            child_label: f[4].trim().to_string(),
        });
    }
    Ok(edges)
}

pub fn read_edges(path: &Path) -> Result<Vec<Edge>> {
    parse_edges(path, &crate::io::read_text(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TypeNode {
    pub node_id: String,
    pub event_type: Option<EventType>,
    pub provenance: Option<Provenance>,
    pub label: String,
    #[serde(skip)]
    parent: Option<usize>,
    #[serde(skip)]
    children: Vec<usize>,
}

impl TypeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Sort key among siblings: code, then full id.
    fn order_key(&self) -> (&str, &str) {
        let code = self.node_id.split_once('/').map_or(self.node_id.as_str(), |(_, c)| c);
        (code, &self.node_id)
    }
}

/// Identifies what a leaf stands for: an event type, narrowed to one
/// provenance for imputation subtypes.
pub type LeafKey = (EventType, Option<Provenance>);

#[derive(Debug, Clone, Default)]
pub struct TypeHierarchy {
    nodes: Vec<TypeNode>,
    by_id: HashMap<String, usize>,
    index: BTreeMap<EventType, usize>,
    conflicts: Vec<String>,
}

#[derive(Debug, Default)]
struct Draft {
    parent: HashMap<String, String>,
    labels: HashMap<String, String>,
    nodes: BTreeSet<String>,
    conflicts: Vec<String>,
}

impl Draft {
    fn add_edges(&mut self, edges: &[Edge], source: &str) {
        for e in edges {
            let child = e.child_id();
            self.nodes.insert(child.clone());
            if !e.child_label.is_empty() {
                self.labels.entry(child.clone()).or_insert_with(|| e.child_label.clone());
            }
            let Some(parent) = e.parent_id() else { continue };
            self.nodes.insert(parent.clone());
            match self.parent.get(&child) {
                None => {
                    self.parent.insert(child, parent);
                }
                Some(existing) if *existing == parent => {}
                Some(existing) => {
                    let msg = format!("{child}: keeping parent {existing}, ignoring {parent} from {source}");
                    log::warn!("conflicting parents for {msg}");
                    self.conflicts.push(msg);
                }
            }
        }
    }

    fn find_cycle(&self) -> Option<Vec<String>> {
        let mut done: BTreeSet<&str> = BTreeSet::new();
        for start in &self.nodes {
            let mut path: Vec<&str> = Vec::new();
            let mut on_path: HashMap<&str, usize> = HashMap::new();
            let mut cur = Some(start.as_str());
            while let Some(n) = cur {
                if done.contains(n) {
                    break;
                }
                if let Some(&pos) = on_path.get(n) {
                    let mut cycle: Vec<String> = path[pos..].iter().map(|s| s.to_string()).collect();
                    cycle.push(n.to_string());
                    return Some(cycle);
                }
                on_path.insert(n, path.len());
                path.push(n);
                cur = self.parent.get(n).map(String::as_str);
            }
            done.extend(path);
        }
        None
    }
}

/// Builds the hierarchy from vocabulary and manual edges and the set of
/// event types observed in the data.
///
/// Manual edges take precedence: a child's parent is the first one found in
/// manual file order, then vocabulary file order. Observed types without an
/// edge go under `UNMAPPED/<class>`. Categorized lab types
/// (`<loinc>:<CATEGORY>`) become category nodes under their lab's node. Only
/// nodes on a path to an observed type are kept.
pub fn build_hierarchy<'a>(
    vocab_edges: &[Edge],
    manual_edges: &[Edge],
    observed_types: impl IntoIterator<Item = &'a EventType>,
) -> Result<TypeHierarchy> {
    let mut draft = Draft::default();
    draft.add_edges(manual_edges, "manual");
    draft.add_edges(vocab_edges, "vocabulary");
    if let Some(cycle) = draft.find_cycle() {
        return Err(Error::HierarchyCycle(cycle));
    }

    let mut hierarchy = TypeHierarchy {
        conflicts: std::mem::take(&mut draft.conflicts),
        ..Default::default()
    };

    // Keep only ancestors-or-self of observed types.
    let observed: BTreeSet<&EventType> = observed_types.into_iter().collect();
    let mut keep: BTreeSet<String> = BTreeSet::new();
    for t in &observed {
        let anchor = match t.lab_code() {
            Some(lab) => node_id(CodeClass::Loinc.as_str(), lab.loinc()),
            None => t.to_string(),
        };
        if !draft.nodes.contains(&anchor) {
            continue;
        }
        let mut cur = Some(anchor);
        while let Some(n) = cur {
            if !keep.insert(n.clone()) {
                break;
            }
            cur = draft.parent.get(&n).cloned();
        }
    }
    for id in &keep {
        let (class, code) = id.split_once('/').expect("node ids contain a class");
        let event_type = class
            .parse::<CodeClass>()
            .ok()
            .and_then(|c| EventType::new(c, code).ok());
        let label = draft.labels.get(id).cloned().unwrap_or_else(|| code.to_string());
        hierarchy.push_node(id.clone(), event_type, None, label);
    }
    for id in &keep {
        if let Some(parent) = draft.parent.get(id) {
            let (c, p) = (hierarchy.by_id[id], hierarchy.by_id[parent]);
            hierarchy.link(p, c);
        }
    }

    for t in observed {
        let idx = match t.lab_code() {
            Some(lab) => {
                let lab_idx = hierarchy.ensure_lab_node(lab.loinc());
                hierarchy.ensure_category_node(lab_idx, t)
            }
            None => match hierarchy.by_id.get(&t.to_string()) {
                Some(&i) => i,
                None => hierarchy.ensure_unmapped(t),
            },
        };
        hierarchy.index.insert(t.clone(), idx);
    }
    hierarchy.split_code_bearing();
    hierarchy.sort_children();
    Ok(hierarchy)
}

impl TypeHierarchy {
    fn push_node(
        &mut self,
        id: String,
        event_type: Option<EventType>,
        provenance: Option<Provenance>,
        label: String,
    ) -> usize {
        let idx = self.nodes.len();
        self.by_id.insert(id.clone(), idx);
        self.nodes.push(TypeNode {
            node_id: id,
            event_type,
            provenance,
            label,
            parent: None,
            children: Vec::new(),
        });
        idx
    }

    fn link(&mut self, parent: usize, child: usize) {
        self.nodes[child].parent = Some(parent);
        self.nodes[parent].children.push(child);
    }

    fn sort_children(&mut self) {
        for i in 0..self.nodes.len() {
            let mut children = std::mem::take(&mut self.nodes[i].children);
            children.sort_by(|&a, &b| self.nodes[a].order_key().cmp(&self.nodes[b].order_key()));
            self.nodes[i].children = children;
        }
    }

    /// A type mapped to a node that also has children gets its own leaf
    /// (`<id>#self`), so every interior node's leaves are exactly its
    /// children's leaves. Provenance-split category nodes are left alone.
    fn split_code_bearing(&mut self) {
        let mapped: Vec<(EventType, usize)> = self.index.iter().map(|(t, &i)| (t.clone(), i)).collect();
        for (t, i) in mapped {
            let node = &self.nodes[i];
            if node.children.is_empty() || node.children.iter().any(|&c| self.nodes[c].provenance.is_some()) {
                continue;
            }
            let id = format!("{}#self", node.node_id);
            let leaf = match self.by_id.get(&id) {
                Some(&l) => l,
                None => {
                    let label = format!("{} (code itself)", node.label);
                    let l = self.push_node(id, Some(t.clone()), None, label);
                    self.link(i, l);
                    l
                }
            };
            self.index.insert(t, leaf);
        }
    }

    fn ensure_root(&mut self, class: CodeClass) -> usize {
        let id = unmapped_root_id(class);
        if let Some(&i) = self.by_id.get(&id) {
            return i;
        }
        self.push_node(id, None, None, format!("Unmapped {class}"))
    }

    fn ensure_unmapped(&mut self, t: &EventType) -> usize {
        let root = self.ensure_root(t.class);
        let idx = self.push_node(t.to_string(), Some(t.clone()), None, t.code.clone());
        self.link(root, idx);
        idx
    }

    fn ensure_lab_node(&mut self, loinc: &str) -> usize {
        let id = node_id(CodeClass::Loinc.as_str(), loinc);
        match self.by_id.get(&id) {
            Some(&i) => i,
            None => {
                let t = EventType::new(CodeClass::Loinc, loinc).expect("lab codes are valid tokens");
                self.ensure_unmapped(&t)
            }
        }
    }

    fn ensure_category_node(&mut self, lab_idx: usize, t: &EventType) -> usize {
        let id = t.to_string();
        if let Some(&i) = self.by_id.get(&id) {
            return i;
        }
        let suffix = match t.lab_code() {
            Some(LabCode::Categorized { category, .. }) => category.display_name(),
            _ => "Uncategorized",
        };
        let label = format!("{} {suffix}", self.nodes[lab_idx].label);
        let idx = self.push_node(id, Some(t.clone()), None, label);
        self.link(lab_idx, idx);
        idx
    }

    fn ensure_provenance_node(&mut self, category_idx: usize, provenance: Provenance) -> bool {
        let id = format!("{}/{}", self.nodes[category_idx].node_id, provenance.as_str());
        if self.by_id.contains_key(&id) {
            return false;
        }
        let label = format!("{} ({})", self.nodes[category_idx].label, provenance.display_name());
        let event_type = self.nodes[category_idx].event_type.clone();
        let idx = self.push_node(id, event_type, Some(provenance), label);
        self.link(category_idx, idx);
        true
    }

    /// Adds a category node per lab code and category present, and under it
    /// one child per provenance present. Re-inserting the same events changes
    /// nothing.
    pub fn insert_imputation_subtypes(&mut self, labs: &[CategorizedLabEvent]) -> Result<()> {
        let present: BTreeSet<(&str, Category, Provenance)> = labs
            .iter()
            .map(|e| (e.loinc_code.as_str(), e.category, e.provenance))
            .collect();
        for (loinc, category, provenance) in present {
            self.insert_subtype(&EventType::lab(loinc, category)?, provenance);
        }
        self.split_code_bearing();
        self.sort_children();
        Ok(())
    }

    /// Same as [`insert_imputation_subtypes`](Self::insert_imputation_subtypes),
    /// reading the categorized labs out of dataset events.
    pub fn insert_subtypes_from_events(&mut self, events: &[EventRecord]) {
        let present: BTreeSet<(&EventType, Provenance)> = events
            .iter()
            .filter(|e| matches!(e.event_type.lab_code(), Some(LabCode::Categorized { .. })))
            .map(|e| (&e.event_type, e.provenance))
            .collect();
        for (t, provenance) in present {
            self.insert_subtype(t, provenance);
        }
        self.split_code_bearing();
        self.sort_children();
    }

    fn insert_subtype(&mut self, t: &EventType, provenance: Provenance) {
        let Some(lab) = t.lab_code() else { return };
        let lab_idx = self.ensure_lab_node(lab.loinc());
        let cat_idx = self.ensure_category_node(lab_idx, t);
        self.index.insert(t.clone(), cat_idx);
        self.ensure_provenance_node(cat_idx, provenance);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn conflicts(&self) -> &[String] {
        &self.conflicts
    }

    pub fn node(&self, node_id: &str) -> Result<&TypeNode> {
        self.by_id
            .get(node_id)
            .map(|&i| &self.nodes[i])
            .ok_or_else(|| Error::NoSuchNode(node_id.to_string()))
    }

    pub fn roots(&self) -> Vec<&TypeNode> {
        let mut roots: Vec<&TypeNode> = self.nodes.iter().filter(|n| n.parent.is_none()).collect();
        roots.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        roots
    }

    pub fn parent(&self, node_id: &str) -> Result<Option<&TypeNode>> {
        Ok(self.node(node_id)?.parent.map(|p| &self.nodes[p]))
    }

    pub fn children(&self, node_id: &str) -> Result<Vec<&TypeNode>> {
        Ok(self.node(node_id)?.children.iter().map(|&c| &self.nodes[c]).collect())
    }

    /// Node an event type maps to, before any provenance split.
    pub fn node_for_type(&self, t: &EventType) -> Option<&TypeNode> {
        self.index.get(t).map(|&i| &self.nodes[i])
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TypeNode> {
        self.nodes.iter()
    }

    /// Case-insensitive substring search over labels, shortest labels first.
    pub fn search(&self, query: &str) -> Vec<&TypeNode> {
        let query = query.trim().to_lowercase();
        if query.is_empty() {
            return Vec::new();
        }
        let mut hits: Vec<&TypeNode> = self
            .nodes
            .iter()
            .filter(|n| n.label.to_lowercase().contains(&query))
            .collect();
        hits.sort_by(|a, b| {
            (a.label.chars().count(), &a.label, &a.node_id).cmp(&(b.label.chars().count(), &b.label, &b.node_id))
        });
        hits
    }

    /// Whether `ancestor` is a proper ancestor of `node`.
    pub fn is_ancestor(&self, ancestor: &str, node: &str) -> Result<bool> {
        let target = self.idx(ancestor)?;
        let mut cur = self.nodes[self.idx(node)?].parent;
        while let Some(p) = cur {
            if p == target {
                return Ok(true);
            }
            cur = self.nodes[p].parent;
        }
        Ok(false)
    }

    /// Mapped event types under a node, including the node itself.
    pub fn leaf_set(&self, node_id: &str) -> Result<BTreeSet<LeafKey>> {
        let root = self.idx(node_id)?;
        let mut out = BTreeSet::new();
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            if let Some(key) = self.leaf_key(i) {
                out.insert(key);
            }
            stack.extend(&self.nodes[i].children);
        }
        Ok(out)
    }

    fn leaf_key(&self, i: usize) -> Option<LeafKey> {
        let n = &self.nodes[i];
        if let Some(p) = n.provenance {
            return n.event_type.clone().map(|t| (t, Some(p)));
        }
        let t = n.event_type.as_ref()?;
        let mapped = self.index.get(t) == Some(&i);
        let split = n.children.iter().any(|&c| self.nodes[c].provenance.is_some());
        (mapped && !split).then(|| (t.clone(), None))
    }

    /// Most specific node for an event: its type's node, or the matching
    /// provenance subtype when one exists.
    pub(crate) fn resolve(&self, t: &EventType, provenance: Provenance) -> Option<usize> {
        let i = *self.index.get(t)?;
        let sub = self.nodes[i]
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c].provenance == Some(provenance));
        Some(sub.unwrap_or(i))
    }

    pub(crate) fn idx(&self, node_id: &str) -> Result<usize> {
        self.by_id
            .get(node_id)
            .copied()
            .ok_or_else(|| Error::NoSuchNode(node_id.to_string()))
    }

    pub(crate) fn at(&self, i: usize) -> &TypeNode {
        &self.nodes[i]
    }

    pub(crate) fn parent_idx(&self, i: usize) -> Option<usize> {
        self.nodes[i].parent
    }

    pub(crate) fn child_idxs(&self, i: usize) -> &[usize] {
        &self.nodes[i].children
    }

    pub(crate) fn root_idxs(&self) -> Vec<usize> {
        let mut roots: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.nodes[i].parent.is_none()).collect();
        roots.sort_by(|&a, &b| self.nodes[a].node_id.cmp(&self.nodes[b].node_id));
        roots
    }
}
