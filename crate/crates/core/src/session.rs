//! An analysis session: one query over a loaded dataset, its statistics and
//! the cut currently on display.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchy::{build_hierarchy, read_edges, TypeHierarchy};
use crate::io::DatasetDir;
use crate::model::CohortDataset;
use crate::query::{run_query, AlignedCohort, TemporalQuery};
use crate::stats::{self, HierarchyCut, OutcomeLabels, ScatterPoint, StatsTable};

pub const DEFAULT_BUDGET: usize = 50;

/// A dataset snapshot with its hierarchy. Never mutated after loading.
#[derive(Debug, Clone)]
pub struct Engine {
    pub dataset: CohortDataset,
    pub hierarchy: TypeHierarchy,
    pub labels: OutcomeLabels,
}

impl Engine {
    pub fn new(dataset: CohortDataset, mut hierarchy: TypeHierarchy) -> Self {
        hierarchy.insert_subtypes_from_events(dataset.events());
        let labels = dataset.labels();
        Engine {
            dataset,
            hierarchy,
            labels,
        }
    }

    /// Builds the hierarchy over the dataset's observed types from the given
    /// edge files.
    pub fn load(dataset_dir: &Path, vocab: Option<&Path>, manual: Option<&Path>) -> Result<Self> {
        let dataset = DatasetDir::new(dataset_dir).read_dataset()?;
        let vocab = vocab.map(read_edges).transpose()?.unwrap_or_default();
        let manual = manual.map(read_edges).transpose()?.unwrap_or_default();
        let hierarchy = build_hierarchy(&vocab, &manual, dataset.event_types())?;
        for c in hierarchy.conflicts() {
            log::warn!("{c}");
        }
        Ok(Engine::new(dataset, hierarchy))
    }
}

/// Why a session has no statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unavailable {
    EmptyCohort,
    DegenerateOutcome,
}

impl From<Unavailable> for Error {
    fn from(u: Unavailable) -> Error {
        match u {
            Unavailable::EmptyCohort => Error::EmptyAlignedCohort,
            Unavailable::DegenerateOutcome => Error::DegenerateOutcome,
        }
    }
}

#[derive(Debug, Clone)]
struct Analysis {
    table: StatsTable,
    cut: HierarchyCut,
    budget: usize,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub query: TemporalQuery,
    pub aligned: AlignedCohort,
    analysis: std::result::Result<Analysis, Unavailable>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub node_id: String,
    pub label: String,
    pub support: Option<f64>,
    pub correlation: Option<f64>,
    pub patient_count: Option<usize>,
    pub in_cut: bool,
}

impl Session {
    /// Runs the query and selects the initial cut at `budget`, raised to the
    /// minimum feasible budget when below it.
    pub fn new(engine: &Engine, id: String, query: TemporalQuery, budget: usize) -> Result<Self> {
        let aligned = run_query(&engine.dataset, &query)?;
        let analysis = match StatsTable::compute(&engine.hierarchy, &aligned, &engine.labels) {
            Ok(table) => {
                let budget = budget.max(stats::minimum_budget(&engine.hierarchy, &table));
                let cut = stats::select_cut(&engine.hierarchy, &table, budget)?;
                Ok(Analysis { table, cut, budget })
            }
            Err(Error::EmptyAlignedCohort) => Err(Unavailable::EmptyCohort),
            Err(Error::DegenerateOutcome) => Err(Unavailable::DegenerateOutcome),
            Err(e) => return Err(e),
        };
        Ok(Session {
            id,
            query,
            aligned,
            analysis,
        })
    }

    fn analysis(&self) -> Result<&Analysis> {
        self.analysis.as_ref().map_err(|u| Error::from(*u))
    }

    fn analysis_mut(&mut self) -> Result<&mut Analysis> {
        self.analysis.as_mut().map_err(|u| Error::from(*u))
    }

    pub fn matched(&self) -> usize {
        self.aligned.matched_count()
    }

    pub fn unmatched(&self) -> usize {
        self.aligned.unmatched_patient_ids.len()
    }

    pub fn budget(&self) -> Option<usize> {
        self.analysis.as_ref().ok().map(|a| a.budget)
    }

    pub fn cut(&self) -> Result<&HierarchyCut> {
        Ok(&self.analysis()?.cut)
    }

    pub fn stats(&self) -> Result<&StatsTable> {
        Ok(&self.analysis()?.table)
    }

    /// Points of the current cut, reselecting it first when `budget` differs
    /// from the one it was selected with.
    pub fn scatter(&mut self, engine: &Engine, budget: Option<usize>) -> Result<Vec<ScatterPoint>> {
        let h = &engine.hierarchy;
        let a = self.analysis_mut()?;
        if let Some(budget) = budget.filter(|&b| b != a.budget) {
            a.cut = stats::select_cut(h, &a.table, budget)?;
            a.budget = budget;
        }
        stats::scatter_points(h, &a.table, &a.cut)
    }

    pub fn drill_down(&mut self, engine: &Engine, node_id: &str) -> Result<Vec<ScatterPoint>> {
        let h = &engine.hierarchy;
        let a = self.analysis_mut()?;
        a.cut = stats::drill_down(h, &a.table, &a.cut, node_id)?;
        stats::scatter_points(h, &a.table, &a.cut)
    }

    pub fn roll_up(&mut self, engine: &Engine, node_id: &str) -> Result<Vec<ScatterPoint>> {
        let h = &engine.hierarchy;
        let a = self.analysis_mut()?;
        a.cut = stats::roll_up(h, &a.cut, node_id)?;
        stats::scatter_points(h, &a.table, &a.cut)
    }

    /// Hierarchy search joined with this session's statistics, which are
    /// absent when the session has none.
    pub fn search(&self, engine: &Engine, query: &str) -> Vec<SearchHit> {
        let analysis = self.analysis.as_ref().ok();
        engine
            .hierarchy
            .search(query)
            .into_iter()
            .map(|n| {
                let s = analysis.and_then(|a| a.table.get(&engine.hierarchy, &n.node_id).ok());
                SearchHit {
                    node_id: n.node_id.clone(),
                    label: n.label.clone(),
                    support: s.map(|s| s.support),
                    correlation: s.map(|s| s.correlation),
                    patient_count: s.map(|s| s.patient_count),
                    in_cut: analysis.is_some_and(|a| a.cut.contains(&n.node_id)),
                }
            })
            .collect()
    }
}
