//! Per-node support, outcome correlation and child-variation scent over an
//! aligned cohort, plus selection and navigation of the displayed cut.
//!
//! Support is the fraction of matched patients with at least one retained
//! event anywhere under a node. Parents aggregate by patient-set union, never
//! by summing child supports. Correlation is the phi coefficient between node
//! presence and the outcome label, positive when presence goes with a
//! positive label. Nodes present in every or no patient get correlation 0.

use std::collections::BTreeMap;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::TypeHierarchy;
use crate::query::AlignedCohort;

/// Outcome label per patient id.
pub type OutcomeLabels = BTreeMap<String, bool>;

/// 2x2 table of node presence against outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency {
    pub present_positive: u64,
    pub present_negative: u64,
    pub absent_positive: u64,
    pub absent_negative: u64,
}

impl Contingency {
    pub fn total(&self) -> u64 {
        self.present_positive + self.present_negative + self.absent_positive + self.absent_negative
    }

    /// Phi coefficient; 0 when either margin has zero variance.
    pub fn phi(&self) -> f64 {
        let (a, b, c, d) = (
            self.present_positive,
            self.present_negative,
            self.absent_positive,
            self.absent_negative,
        );
        let rows = (a + b) as u128 * (c + d) as u128;
        let cols = (a + c) as u128 * (b + d) as u128;
        if rows == 0 || cols == 0 {
            return 0.0;
        }
        let num = (a as i128 * d as i128 - b as i128 * c as i128) as f64;
        let phi = num / ((rows as f64).sqrt() * (cols as f64).sqrt());
        phi.clamp(-1.0, 1.0)
    }
}

/// Phi of the expected table for an event present with probability
/// `p_positive` among positives and `p_negative` among negatives, at outcome
/// prevalence `prevalence`.
pub fn analytic_phi(prevalence: f64, p_positive: f64, p_negative: f64) -> f64 {
    let q = prevalence * p_positive + (1.0 - prevalence) * p_negative;
    let denom = (q * (1.0 - q) * prevalence * (1.0 - prevalence)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    prevalence * (1.0 - prevalence) * (p_positive - p_negative) / denom
}

/// Spread of child correlations: max minus min over children that occur at
/// all; 0 with fewer than two such children.
pub fn scent(children: impl IntoIterator<Item = (f64, usize)>) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut n = 0;
    for (corr, count) in children {
        if count == 0 {
            continue;
        }
        lo = lo.min(corr);
        hi = hi.max(corr);
        n += 1;
    }
    if n < 2 {
        0.0
    } else {
        hi - lo
    }
}

struct Matched {
    n: usize,
    positives: FixedBitSet,
    n_positive: usize,
}

fn matched(aligned: &AlignedCohort, labels: Option<&OutcomeLabels>) -> Result<Matched> {
    let n = aligned.matched_count();
    if n == 0 {
        return Err(Error::EmptyAlignedCohort);
    }
    let mut positives = FixedBitSet::with_capacity(n);
    if let Some(labels) = labels {
        for (p, id) in aligned.matched_patient_ids().enumerate() {
            let label = labels.get(id).ok_or_else(|| Error::MissingLabel(id.to_string()))?;
            positives.set(p, *label);
        }
    }
    let n_positive = positives.count_ones(..);
    Ok(Matched {
        n,
        positives,
        n_positive,
    })
}

/// Patients (by matched index) with an event under every node.
fn presence_table(h: &TypeHierarchy, aligned: &AlignedCohort) -> Vec<FixedBitSet> {
    let n = aligned.matched_count();
    let mut presence = vec![FixedBitSet::with_capacity(n); h.len()];
    for (p, timeline) in aligned.timelines.values().enumerate() {
        for e in &timeline.events {
            let Some(leaf) = h.resolve(&e.event_type, e.provenance) else {
                log::debug!("event type {} has no hierarchy node", e.event_type);
                continue;
            };
            let mut cur = Some(leaf);
            while let Some(i) = cur {
                if presence[i].put(p) {
                    break;
                }
                cur = h.parent_idx(i);
            }
        }
    }
    presence
}

fn node_presence(h: &TypeHierarchy, aligned: &AlignedCohort, node: usize) -> FixedBitSet {
    let mut bits = FixedBitSet::with_capacity(aligned.matched_count());
    for (p, timeline) in aligned.timelines.values().enumerate() {
        let hit = timeline.events.iter().any(|e| {
            let mut cur = h.resolve(&e.event_type, e.provenance);
            while let Some(i) = cur {
                if i == node {
                    return true;
                }
                cur = h.parent_idx(i);
            }
            false
        });
        bits.set(p, hit);
    }
    bits
}

fn contingency(present: &FixedBitSet, m: &Matched) -> Contingency {
    let count = present.count_ones(..);
    let pp = present.intersection_count(&m.positives);
    Contingency {
        present_positive: pp as u64,
        present_negative: (count - pp) as u64,
        absent_positive: (m.n_positive - pp) as u64,
        absent_negative: (m.n - m.n_positive - (count - pp)) as u64,
    }
}

pub fn support(node_id: &str, aligned: &AlignedCohort, h: &TypeHierarchy) -> Result<f64> {
    let node = h.idx(node_id)?;
    let m = matched(aligned, None)?;
    Ok(node_presence(h, aligned, node).count_ones(..) as f64 / m.n as f64)
}

pub fn correlation(node_id: &str, aligned: &AlignedCohort, h: &TypeHierarchy, labels: &OutcomeLabels) -> Result<f64> {
    let node = h.idx(node_id)?;
    let m = matched(aligned, Some(labels))?;
    if m.n_positive == 0 || m.n_positive == m.n {
        return Err(Error::DegenerateOutcome);
    }
    Ok(contingency(&node_presence(h, aligned, node), &m).phi())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub table: Contingency,
    pub patient_count: usize,
    pub support: f64,
    pub correlation: f64,
    pub scent: f64,
}

impl NodeStats {
    /// Contribution of this node to the cut objective.
    pub fn informativeness(&self) -> f64 {
        self.support * self.correlation.abs()
    }
}

/// Statistics for every hierarchy node over one aligned cohort.
#[derive(Debug, Clone)]
pub struct StatsTable {
    stats: Vec<NodeStats>,
    matched: usize,
}

impl StatsTable {
    pub fn compute(h: &TypeHierarchy, aligned: &AlignedCohort, labels: &OutcomeLabels) -> Result<Self> {
        let m = matched(aligned, Some(labels))?;
        if m.n_positive == 0 || m.n_positive == m.n {
            return Err(Error::DegenerateOutcome);
        }
        let presence = presence_table(h, aligned);
        let mut stats: Vec<NodeStats> = presence
            .iter()
            .map(|bits| {
                let table = contingency(bits, &m);
                let patient_count = bits.count_ones(..);
                NodeStats {
                    table,
                    patient_count,
                    support: patient_count as f64 / m.n as f64,
                    correlation: table.phi(),
                    scent: 0.0,
                }
            })
            .collect();
        for i in 0..stats.len() {
            stats[i].scent = scent(
                h.child_idxs(i)
                    .iter()
                    .map(|&c| (stats[c].correlation, stats[c].patient_count)),
            );
        }
        Ok(StatsTable { stats, matched: m.n })
    }

    pub fn matched(&self) -> usize {
        self.matched
    }

    pub fn get(&self, h: &TypeHierarchy, node_id: &str) -> Result<&NodeStats> {
        Ok(&self.stats[h.idx(node_id)?])
    }

    fn live_children(&self, h: &TypeHierarchy, i: usize) -> Vec<usize> {
        h.child_idxs(i)
            .iter()
            .copied()
            .filter(|&c| self.stats[c].patient_count > 0)
            .collect()
    }

    pub fn point(&self, h: &TypeHierarchy, node_id: &str) -> Result<ScatterPoint> {
        Ok(self.point_at(h, h.idx(node_id)?))
    }

    fn point_at(&self, h: &TypeHierarchy, i: usize) -> ScatterPoint {
        let s = &self.stats[i];
        let node = h.at(i);
        ScatterPoint {
            node_id: node.node_id.clone(),
            label: node.label.clone(),
            support: s.support,
            correlation: s.correlation,
            scent: s.scent,
            patient_count: s.patient_count,
            has_children: !self.live_children(h, i).is_empty(),
        }
    }
}

/// A hierarchy node's position and glyph data for the scatterplot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub node_id: String,
    pub label: String,
    pub support: f64,
    pub correlation: f64,
    pub scent: f64,
    pub patient_count: usize,
    pub has_children: bool,
}

/// An antichain of nodes covering every observed type, kept sorted by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyCut {
    pub node_ids: Vec<String>,
}

impl HierarchyCut {
    fn from_idxs(h: &TypeHierarchy, idxs: impl IntoIterator<Item = usize>) -> Self {
        let mut node_ids: Vec<String> = idxs.into_iter().map(|i| h.at(i).node_id.clone()).collect();
        node_ids.sort();
        node_ids.dedup();
        HierarchyCut { node_ids }
    }

    fn idxs(&self, h: &TypeHierarchy) -> Result<Vec<usize>> {
        self.node_ids.iter().map(|id| h.idx(id)).collect()
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn contains(&self, node_id: &str) -> bool {
        self.node_ids.binary_search_by(|n| n.as_str().cmp(node_id)).is_ok()
    }
}

/// Σ support × |correlation| over the cut.
pub fn objective(h: &TypeHierarchy, table: &StatsTable, cut: &HierarchyCut) -> Result<f64> {
    Ok(cut.idxs(h)?.into_iter().map(|i| table.stats[i].informativeness()).sum())
}

pub fn scatter_points(h: &TypeHierarchy, table: &StatsTable, cut: &HierarchyCut) -> Result<Vec<ScatterPoint>> {
    Ok(cut.idxs(h)?.into_iter().map(|i| table.point_at(h, i)).collect())
}

/// Roots that occur in the aligned cohort.
fn live_roots(h: &TypeHierarchy, table: &StatsTable) -> Vec<usize> {
    h.root_idxs()
        .into_iter()
        .filter(|&r| table.stats[r].patient_count > 0)
        .collect()
}

pub fn minimum_budget(h: &TypeHierarchy, table: &StatsTable) -> usize {
    live_roots(h, table).len()
}

/// Expansions must beat the node they replace by more than this.
const MIN_GAIN: f64 = 1e-12;

/// Best covering cuts of one subtree, by budget.
struct Plan {
    /// `value[k]`: best objective using at most `k` nodes; `-inf` if none fits.
    value: Vec<f64>,
    expand: Vec<bool>,
    children: Vec<usize>,
    /// `split[j][k]`: nodes given to child `j` when children `0..=j` share `k`.
    split: Vec<Vec<usize>>,
}

/// Best way to cover the subtrees of `items` with at most `k` nodes in total,
/// for every `k` up to `cap`, plus the per-item split.
fn combine(items: &[usize], plans: &[Option<Plan>], cap: usize) -> (Vec<f64>, Vec<Vec<usize>>) {
    let mut acc = vec![f64::NEG_INFINITY; cap + 1];
    acc[0] = 0.0;
    let mut split = Vec::with_capacity(items.len());
    for &c in items {
        let v = &plans[c].as_ref().expect("occurring nodes are planned").value;
        let mut next = vec![f64::NEG_INFINITY; cap + 1];
        let mut choice = vec![0; cap + 1];
        for k in 1..=cap {
            for s in 1..=k {
                let total = acc[k - s] + v[s];
                if total > next[k] {
                    next[k] = total;
                    choice[k] = s;
                }
            }
        }
        acc = next;
        split.push(choice);
    }
    (acc, split)
}

fn plan(h: &TypeHierarchy, table: &StatsTable, i: usize, cap: usize, plans: &mut Vec<Option<Plan>>) {
    let children = table.live_children(h, i);
    for &c in &children {
        plan(h, table, c, cap, plans);
    }
    let own = table.stats[i].informativeness();
    let (below, split) = combine(&children, plans, cap);
    let mut value = vec![f64::NEG_INFINITY; cap + 1];
    let mut expand = vec![false; cap + 1];
    for k in 1..=cap {
        if !children.is_empty() && below[k] > own + MIN_GAIN {
            value[k] = below[k];
            expand[k] = true;
        } else {
            value[k] = own;
        }
    }
    plans[i] = Some(Plan {
        value,
        expand,
        children,
        split,
    });
}

fn emit(plans: &[Option<Plan>], i: usize, k: usize, out: &mut Vec<usize>) {
    let p = plans[i].as_ref().expect("occurring nodes are planned");
    if !p.expand[k] {
        out.push(i);
        return;
    }
    let mut rest = k;
    for (j, &c) in p.children.iter().enumerate().rev() {
        let s = p.split[j][rest];
        emit(plans, c, s, out);
        rest -= s;
    }
}

/// Top-down refinement of the root antichain into the cut of at most
/// `budget` occurring nodes with the largest Σ support × |correlation|.
///
/// A node is only replaced by its children when that strictly raises the
/// objective, so equal-valued refinements keep the coarser node. Solved
/// exactly by dynamic programming over the tree, in O(nodes × budget²).
pub fn select_cut(h: &TypeHierarchy, table: &StatsTable, budget: usize) -> Result<HierarchyCut> {
    let roots = live_roots(h, table);
    if budget < roots.len() {
        return Err(Error::BudgetTooSmall { minimum: roots.len() });
    }
    if roots.is_empty() {
        return Ok(HierarchyCut::default());
    }
    let live_leaves = (0..h.len())
        .filter(|&i| table.stats[i].patient_count > 0 && table.live_children(h, i).is_empty())
        .count();
    let cap = budget.min(live_leaves.max(roots.len()));
    let mut plans: Vec<Option<Plan>> = (0..h.len()).map(|_| None).collect();
    for &r in &roots {
        plan(h, table, r, cap, &mut plans);
    }
    let (value, split) = combine(&roots, &plans, cap);
    // Smallest budget reaching the best value.
    let best = value[cap];
    let mut k = (roots.len()..=cap).find(|&k| value[k] >= best).unwrap_or(cap);
    let mut out = Vec::new();
    for (j, &r) in roots.iter().enumerate().rev() {
        let s = split[j][k];
        emit(&plans, r, s, &mut out);
        k -= s;
    }
    Ok(HierarchyCut::from_idxs(h, out))
}

/// Replaces a cut node with its occurring children.
pub fn drill_down(h: &TypeHierarchy, table: &StatsTable, cut: &HierarchyCut, node_id: &str) -> Result<HierarchyCut> {
    let target = h.idx(node_id)?;
    if !cut.contains(node_id) {
        return Err(Error::NotInCut(node_id.to_string()));
    }
    let children = table.live_children(h, target);
    if children.is_empty() {
        return Err(Error::CannotExpandLeaf(node_id.to_string()));
    }
    let rest = cut.idxs(h)?.into_iter().filter(|&i| i != target);
    Ok(HierarchyCut::from_idxs(h, rest.chain(children)))
}

/// Collapses every cut node below `node_id` back into `node_id`.
pub fn roll_up(h: &TypeHierarchy, cut: &HierarchyCut, node_id: &str) -> Result<HierarchyCut> {
    h.idx(node_id)?;
    let fail = |reason: &str| Error::CannotRollUp {
        node: node_id.to_string(),
        reason: reason.to_string(),
    };
    if cut.contains(node_id) {
        return Err(fail("it is already in the cut"));
    }
    let mut below = Vec::new();
    let mut rest = Vec::new();
    for id in &cut.node_ids {
        if h.is_ancestor(node_id, id)? {
            below.push(id);
        } else if h.is_ancestor(id, node_id)? {
            return Err(fail("an ancestor is in the cut"));
        } else {
            rest.push(id.clone());
        }
    }
    if below.is_empty() {
        return Err(fail("none of its descendants are in the cut"));
    }
    rest.push(node_id.to_string());
    rest.sort();
    Ok(HierarchyCut { node_ids: rest })
}
