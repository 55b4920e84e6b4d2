//! Helpers shared by the integration tests: random small hierarchies with
//! cohorts over them, and an exhaustive oracle over covering antichains.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqlens::hierarchy::{build_hierarchy, parse_edges, TypeHierarchy};
use seqlens::model::{CodeClass, EventType, Provenance};
use seqlens::query::{AlignedCohort, AlignedEvent, PatientTimeline};
use seqlens::stats::{objective, select_cut, HierarchyCut, OutcomeLabels, StatsTable};

pub struct Instance {
    pub h: TypeHierarchy,
    pub table: StatsTable,
    pub observed: BTreeSet<EventType>,
    pub aligned: AlignedCohort,
    pub labels: OutcomeLabels,
}

/// Random forest with at most 10 leaves, random cohort over its types.
pub fn random_instance(seed: u64) -> Option<Instance> {
    random_instance_sized(seed, 40, usize::MAX)
}

/// As [`random_instance`], with at most `max_patients` patients and
/// `max_types` event types.
pub fn random_instance_sized(seed: u64, max_patients: usize, max_types: usize) -> Option<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_nodes = rng.random_range(2..=14);
    let mut parents: Vec<Option<usize>> = vec![None];
    for k in 1..n_nodes {
        parents.push(if rng.random_bool(0.15) { None } else { Some(rng.random_range(0..k)) });
    }
    let mut text = String::new();
    for (k, p) in parents.iter().enumerate() {
        match p {
            None => text.push_str(&format!("\t\tICD-10\tN{k}\tnode {k}\n")),
            Some(p) => text.push_str(&format!("ICD-10\tN{p}\tICD-10\tN{k}\tnode {k}\n")),
        }
    }
    let is_leaf = |k: usize| !parents.contains(&Some(k));
    let types: Vec<EventType> = (0..n_nodes)
        .filter(|&k| is_leaf(k) || rng.random_bool(0.2))
        .map(|k| EventType::new(CodeClass::Icd10, format!("N{k}")).unwrap())
        .take(max_types)
        .collect();

    let n_patients = rng.random_range(4..=max_patients);
    let rates: Vec<(f64, f64)> = types.iter().map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let mut aligned = AlignedCohort { window_days: 365, ..Default::default() };
    let mut labels = OutcomeLabels::new();
    for p in 0..n_patients {
        let label = rng.random_bool(0.5);
        let id = format!("P{p:02}");
        let events = types
            .iter()
            .zip(&rates)
            .filter(|(_, (p1, p0))| rng.random_bool(if label { *p1 } else { *p0 }))
            .map(|(t, _)| AlignedEvent { offset_days: 0, event_type: t.clone(), provenance: Provenance::Raw })
            .collect();
        labels.insert(id.clone(), label);
        aligned.timelines.insert(id, PatientTimeline { sentinel_date: "2020-01-01".parse().unwrap(), events });
    }
    let edges = parse_edges(Path::new("random.tsv"), &text).unwrap();
    let observed: BTreeSet<EventType> =
        aligned.timelines.values().flat_map(|t| t.events.iter().map(|e| e.event_type.clone())).collect();
    let h = build_hierarchy(&edges, &[], &observed).unwrap();
    if h.leaf_count() > 10 {
        return None;
    }
    let table = StatsTable::compute(&h, &aligned, &labels).ok()?;
    Some(Instance { h, table, observed, aligned, labels })
}

fn live(inst: &Instance, id: &str) -> bool {
    inst.table.get(&inst.h, id).unwrap().patient_count > 0
}

/// Every covering antichain of the subtree under `id`, restricted to
/// occurring nodes.
fn subtree_cuts(inst: &Instance, id: &str) -> Vec<Vec<String>> {
    let mut out = vec![vec![id.to_string()]];
    let children: Vec<String> = inst
        .h
        .children(id)
        .unwrap()
        .into_iter()
        .map(|c| c.node_id.clone())
        .filter(|c| live(inst, c))
        .collect();
    if !children.is_empty() {
        out.extend(product(children.iter().map(|c| subtree_cuts(inst, c)).collect()));
    }
    out
}

fn product(parts: Vec<Vec<Vec<String>>>) -> Vec<Vec<String>> {
    parts.into_iter().fold(vec![Vec::new()], |acc, options| {
        acc.iter()
            .flat_map(|prefix| {
                options.iter().map(move |o| {
                    let mut v = prefix.clone();
                    v.extend(o.iter().cloned());
                    v
                })
            })
            .collect()
    })
}

pub fn all_cuts(inst: &Instance) -> Vec<HierarchyCut> {
    let roots: Vec<String> =
        inst.h.roots().into_iter().map(|r| r.node_id.clone()).filter(|r| live(inst, r)).collect();
    product(roots.iter().map(|r| subtree_cuts(inst, r)).collect())
        .into_iter()
        .map(|mut node_ids| {
            node_ids.sort();
            HierarchyCut { node_ids }
        })
        .collect()
}

pub fn exhaustive_best(inst: &Instance, budget: usize) -> f64 {
    all_cuts(inst)
        .iter()
        .filter(|c| c.len() <= budget)
        .map(|c| objective(&inst.h, &inst.table, c).unwrap())
        .fold(0.0, f64::max)
}

/// Antichain, coverage of every occurring leaf type, and size.
pub fn check_cut(inst: &Instance, cut: &HierarchyCut, budget: usize) -> Result<(), String> {
    if cut.len() > budget {
        return Err(format!("{} nodes over budget {budget}", cut.len()));
    }
    for a in &cut.node_ids {
        for b in &cut.node_ids {
            if inst.h.is_ancestor(a, b).unwrap() {
                return Err(format!("{a} is an ancestor of {b}"));
            }
        }
    }
    let mut covered = BTreeSet::new();
    for id in &cut.node_ids {
        covered.extend(inst.h.leaf_set(id).unwrap());
    }
    for t in &inst.observed {
        if !covered.contains(&(t.clone(), None)) {
            return Err(format!("{t} is not covered"));
        }
    }
    Ok(())
}

/// Worst selected/optimum ratio over every budget of the first `seeds` random
/// instances, checking cut validity along the way.
pub fn worst_ratio(seeds: u64) -> Result<(f64, usize), String> {
    let mut worst = 1.0f64;
    let mut checked = 0;
    for seed in 0..seeds {
        let Some(inst) = random_instance(seed) else { continue };
        let min = seqlens::stats::minimum_budget(&inst.h, &inst.table);
        for budget in min.max(1)..=12 {
            let cut = select_cut(&inst.h, &inst.table, budget).unwrap();
            check_cut(&inst, &cut, budget).map_err(|e| format!("seed {seed} budget {budget}: {e}"))?;
            let got = objective(&inst.h, &inst.table, &cut).unwrap();
            let best = exhaustive_best(&inst, budget);
            if best > 0.0 {
                worst = worst.min(got / best);
            }
            checked += 1;
        }
    }
    Ok((worst, checked))
}

