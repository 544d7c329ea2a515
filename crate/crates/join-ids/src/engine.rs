//! The streaming join engine: per-timestamp eviction, lazy imputation,
//! grid-driven candidate generation, two-stage pruning, and exact
//! refinement, plus the two eager baselines used for comparison.
//!
//! Arrival processing follows one fixed order per timestamp: expired objects
//! leave the windows, the grid, and the join set first; then the left
//! arrival is imputed lazily and probed against the right queues; then the
//! right arrival runs the same steps symmetrically. An arriving object is
//! materialized to instances only when some populated opposite cell lies
//! within epsilon of its node-state box, and an object sitting in the grid
//! is materialized only when a probe reaches it.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::dd::{build_lattice, DDRule, ImputationLattice, Imputer, QueryRange, ResolvedPlan};
use crate::error::{Error, Result};
use crate::grid::EpsilonGrid;
use crate::index::{
    select_clusters, select_sub_mbr, Clustering, Histogram, ImputationIndex, Repository, SubMbr,
};
use crate::model::{
    ImputationState, ImputedObject, IncompleteObject, JoinSet, Mbr, ObjectId, SlidingWindow,
    StreamId, DEFAULT_CANDIDATE_CAP,
};
use crate::prune::{exceeds_epsilon, join_probability, mindist, JoinParams};

/// Engine tuning knobs beyond the join parameters themselves.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub params: JoinParams,
    pub window: usize,
    /// Buckets per node histogram.
    pub lambda: usize,
    /// Candidate leaf capacities for cluster selection.
    pub leaf_capacities: Vec<usize>,
    /// Number of sampled rule queries scoring each candidate clustering.
    pub cluster_samples: usize,
    /// Cap on candidate values kept per missing attribute.
    pub candidate_cap: usize,
}

impl EngineConfig {
    pub fn new(params: JoinParams, window: usize) -> Self {
        EngineConfig {
            params,
            window,
            lambda: 10,
            leaf_capacities: vec![16, 32, 64],
            cluster_samples: 100,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
        }
    }
}

/// Changes to the join set at one timestamp.
#[derive(Debug, Clone, Default)]
pub struct JoinDelta {
    pub timestamp: i64,
    /// `(left_ts, right_ts, probability)` pairs entering the join set.
    pub added: Vec<(i64, i64, f64)>,
    /// Pairs leaving the join set because an endpoint expired.
    pub removed: Vec<(i64, i64, f64)>,
    /// Objects found unimputable at this timestamp.
    pub unimputable: Vec<ObjectId>,
}

/// Running counts of how candidate pairs were handled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PruneStats {
    /// Every (arrival, opposite-window resident) combination.
    pub window_pairs: u64,
    /// Distinct pairs surfaced by the grid neighborhood of a probe.
    pub grid_candidate_pairs: u64,
    /// Pairs discarded by box distance (cell-level or pair-level).
    pub lemma1_pruned: u64,
    /// Pairs discarded by the sub-box mass argument.
    pub lemma3_pruned: u64,
    /// Pairs that reached exact refinement.
    pub refined: u64,
}

/// Common driving interface of the engine and the baselines.
pub trait Stepper {
    fn step(
        &mut self,
        new_left: Option<IncompleteObject>,
        new_right: Option<IncompleteObject>,
        timestamp: i64,
    ) -> Result<JoinDelta>;

    fn join_set(&self) -> &JoinSet;

    fn stats(&self) -> PruneStats;
}

/// Whether arriving objects are imputed on demand or immediately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ImputationMode {
    Lazy,
    Eager,
}

/// Read-only machinery built once at startup.
struct EngineCore {
    config: EngineConfig,
    repo: Repository,
    lattices: HashMap<usize, ImputationLattice>,
    indexes: HashMap<usize, ImputationIndex>,
}

impl EngineCore {
    fn imputer(&self) -> Imputer<'_> {
        Imputer::new(&self.repo, &self.lattices, &self.indexes)
            .with_candidate_cap(self.config.candidate_cap)
    }
}

/// Mutable per-timestamp state.
struct EngineRuntime {
    windows: [SlidingWindow; 2],
    grid: EpsilonGrid,
    join_set: JoinSet,
    /// Pending imputation plans of node-state objects in the grid.
    plans: HashMap<ObjectId, ResolvedPlan>,
    /// Cached dependent-attribute histograms of instance-state residents.
    sub_hists: HashMap<ObjectId, Option<(usize, Histogram)>>,
    unimputable: HashSet<ObjectId>,
    stats: PruneStats,
    last_timestamp: Option<i64>,
}

/// One-object summary used for sample-level pruning: a high-mass sub-box of
/// the imputed object.
#[derive(Debug, Clone)]
struct SubBox {
    mbr: Mbr,
    beta: f64,
}

pub struct Engine {
    core: EngineCore,
    rt: EngineRuntime,
    mode: ImputationMode,
    phase_timer: PhaseTimer,
}

/// Coarse per-phase wall-clock accounting, reported on drop when
/// `JOINIDS_PHASE_TIMING` is set. Diagnostic only.
#[derive(Default)]
struct PhaseTimer {
    enabled: bool,
    resolve: std::time::Duration,
    node: std::time::Duration,
    instance: std::time::Duration,
    neighborhood: std::time::Duration,
    screening: std::time::Duration,
    examine: std::time::Duration,
    insert: std::time::Duration,
    evict: std::time::Duration,
}

impl PhaseTimer {
    fn new() -> Self {
        PhaseTimer { enabled: std::env::var("JOINIDS_PHASE_TIMING").is_ok(), ..Default::default() }
    }

    #[inline]
    fn now(&self) -> Option<std::time::Instant> {
        if self.enabled { Some(std::time::Instant::now()) } else { None }
    }

    #[inline]
    fn lap(&mut self, start: &mut Option<std::time::Instant>) -> std::time::Duration {
        match start.take() {
            Some(t) => {
                let d = t.elapsed();
                *start = Some(std::time::Instant::now());
                d
            }
            None => std::time::Duration::ZERO,
        }
    }
}

impl Drop for PhaseTimer {
    fn drop(&mut self) {
        if self.enabled {
            eprintln!(
                "phase timing: resolve={:?} node={:?} instance={:?} neighborhood={:?} screening={:?} examine={:?} insert={:?} evict={:?}",
                self.resolve, self.node, self.instance, self.neighborhood,
                self.screening, self.examine, self.insert, self.evict
            );
        }
    }
}

fn window_index(stream: StreamId) -> usize {
    match stream {
        StreamId::Left => 0,
        StreamId::Right => 1,
    }
}

/// Build lattices and indexes for every dependent attribute named by the
/// rules. Cluster candidates are sort-tile-recursive packings at each
/// configured leaf capacity, scored over sample queries centered at evenly
/// strided repository rows.
fn build_imputation_machinery(
    repo: &Repository,
    rules: &[DDRule],
    config: &EngineConfig,
) -> Result<(HashMap<usize, ImputationLattice>, HashMap<usize, ImputationIndex>)> {
    let mut by_dependent: HashMap<usize, Vec<DDRule>> = HashMap::new();
    for rule in rules {
        if rule.dependent() >= repo.schema().len()
            || rule.determinants().iter().any(|&a| a >= repo.schema().len())
        {
            return Err(Error::Schema("rule references an attribute outside the schema".into()));
        }
        by_dependent.entry(rule.dependent()).or_default().push(rule.clone());
    }

    let mut lattices = HashMap::new();
    let mut indexes = HashMap::new();
    for (dependent, dep_rules) in by_dependent {
        let lattice = build_lattice(dep_rules, repo)?;
        let key_attrs = lattice.key_attrs();

        let samples = sample_queries(repo, lattice.base_rules(), config.cluster_samples);
        let mut candidates = Vec::new();
        for &capacity in &config.leaf_capacities {
            candidates.push(Clustering::str_packing(repo, &key_attrs, capacity)?);
        }
        if candidates.is_empty() {
            return Err(Error::Config("no leaf capacity configured".into()));
        }
        let clustering = select_clusters(repo, candidates, &samples)?;

        let index = ImputationIndex::build(repo, &key_attrs, dependent, config.lambda, clustering)?;
        lattices.insert(dependent, lattice);
        indexes.insert(dependent, index);
    }
    Ok((lattices, indexes))
}

/// Sample queries for cluster selection: one query per (strided repository
/// row, base rule) combination.
fn sample_queries(repo: &Repository, rules: &[DDRule], samples: usize) -> Vec<QueryRange> {
    let mut queries = Vec::new();
    if repo.is_empty() || samples == 0 {
        return queries;
    }
    let stride = (repo.len() / samples).max(1);
    for i in 0..samples.min(repo.len()) {
        let row = repo.row((i * stride) % repo.len());
        let values: Vec<Option<f64>> = row.iter().map(|&v| Some(v)).collect();
        for rule in rules {
            let range =
                QueryRange::from_rule(&values, rule.determinants(), rule.determinant_eps())
                    .expect("repository rows are complete");
            queries.push(range);
        }
    }
    queries
}

impl Engine {
    /// Offline phase: build the per-attribute lattices and indexes, then
    /// start with empty windows, an empty grid, and an empty join set.
    pub fn startup(repo: Repository, rules: &[DDRule], config: EngineConfig) -> Result<Self> {
        Self::startup_with_mode(repo, rules, config, ImputationMode::Lazy)
    }

    /// Same machinery, but every arriving object is fully imputed
    /// immediately; candidate generation and pruning still run on the grid.
    pub fn startup_eager(repo: Repository, rules: &[DDRule], config: EngineConfig) -> Result<Self> {
        Self::startup_with_mode(repo, rules, config, ImputationMode::Eager)
    }

    fn startup_with_mode(
        repo: Repository,
        rules: &[DDRule],
        config: EngineConfig,
        mode: ImputationMode,
    ) -> Result<Self> {
        if config.window == 0 {
            return Err(Error::Config("window size must be at least 1".into()));
        }
        let (lattices, indexes) = build_imputation_machinery(&repo, rules, &config)?;
        let grid = EpsilonGrid::new(repo.schema().len(), config.params.epsilon)?;
        let windows = [SlidingWindow::new(config.window)?, SlidingWindow::new(config.window)?];
        Ok(Engine {
            core: EngineCore { config, repo, lattices, indexes },
            rt: EngineRuntime {
                windows,
                grid,
                join_set: JoinSet::new(),
                plans: HashMap::new(),
                sub_hists: HashMap::new(),
                unimputable: HashSet::new(),
                stats: PruneStats::default(),
                last_timestamp: None,
            },
            mode,
            phase_timer: PhaseTimer::new(),
        })
    }

    pub fn window(&self, stream: StreamId) -> &SlidingWindow {
        &self.rt.windows[window_index(stream)]
    }

    pub fn grid(&self) -> &EpsilonGrid {
        &self.rt.grid
    }

    pub fn params(&self) -> JoinParams {
        self.core.config.params
    }

    pub fn is_unimputable(&self, id: ObjectId) -> bool {
        self.rt.unimputable.contains(&id)
    }

    pub fn repo(&self) -> &Repository {
        &self.core.repo
    }

    pub fn imputer(&self) -> Imputer<'_> {
        self.core.imputer()
    }

    fn validate_arrival(
        &self,
        arrival: &Option<IncompleteObject>,
        stream: StreamId,
        timestamp: i64,
    ) -> Result<()> {
        if let Some(obj) = arrival {
            if obj.stream != stream {
                return Err(Error::Schema(format!(
                    "arrival tagged {:?} fed to the {stream:?} stream",
                    obj.stream
                )));
            }
            if obj.timestamp != timestamp {
                return Err(Error::Ordering(format!(
                    "arrival carries t={} at step t={timestamp}",
                    obj.timestamp
                )));
            }
            if obj.dim() != self.core.repo.schema().len() {
                return Err(Error::Schema(format!(
                    "arrival has {} attributes, repository has {}",
                    obj.dim(),
                    self.core.repo.schema().len()
                )));
            }
        }
        Ok(())
    }

    fn evict_expired(&mut self, timestamp: i64, delta: &mut JoinDelta) {
        let min_ts = timestamp - self.core.config.window as i64 + 1;
        for stream in [StreamId::Left, StreamId::Right] {
            let expired = self.rt.windows[window_index(stream)].evict_older_than(min_ts);
            for obj in expired {
                let id = obj.id();
                if !self.rt.unimputable.remove(&id) {
                    self.rt.grid.evict(id, obj.mbr());
                }
                self.rt.plans.remove(&id);
                self.rt.sub_hists.remove(&id);
                for ((l, r), p) in self.rt.join_set.remove_endpoint(id) {
                    delta.removed.push((l, r, p));
                }
            }
        }
    }

    fn process_arrival(
        &mut self,
        source: IncompleteObject,
        delta: &mut JoinDelta,
    ) -> Result<()> {
        let stream = source.stream;
        let id = source.id();
        let opposite = stream.opposite();
        let params = self.core.config.params;
        self.rt.stats.window_pairs += self.rt.windows[window_index(opposite)].len() as u64;

        // Lazy imputation: fix the query ranges, then tighten the box from
        // the index frontier without reading any leaf row.
        let mut lap = self.phase_timer.now();
        let mut plan = ResolvedPlan::default();
        let imputed = if source.is_complete() {
            Some(ImputedObject::complete(source.clone())?)
        } else {
            match self.core.imputer().resolve_plan(&source)? {
                Some(resolved) => {
                    plan = resolved;
                    let d = self.phase_timer.lap(&mut lap);
                    self.phase_timer.resolve += d;
                    let mut obj = ImputedObject::range_state(source.clone());
                    self.core.imputer().to_node_state(&mut obj, &plan)?;
                    let d = self.phase_timer.lap(&mut lap);
                    self.phase_timer.node += d;
                    Some(obj)
                }
                None => None,
            }
        };

        let Some(mut imputed) = imputed else {
            // Unimputable: takes a window slot, joins nothing.
            self.rt.unimputable.insert(id);
            delta.unimputable.push(id);
            self.rt.windows[window_index(stream)].slide(ImputedObject::range_state(source))?;
            return Ok(());
        };

        // Materialize instances only when some populated opposite cell is
        // close enough that a join is possible at all; in eager mode, always.
        if imputed.state() != ImputationState::Instance {
            let near_cell = self
                .rt
                .grid
                .neighborhood(imputed.mbr(), opposite)
                .iter()
                .any(|&(_, d)| !exceeds_epsilon(d, params.epsilon));
            if near_cell || self.mode == ImputationMode::Eager {
                let mut lap = self.phase_timer.now();
                self.core.imputer().to_instance_state(&mut imputed, &plan)?;
                let d = self.phase_timer.lap(&mut lap);
                self.phase_timer.instance += d;
            }
        }

        if imputed.state() == ImputationState::Instance {
            self.probe_candidates(&imputed, delta)?;
        } else {
            self.rt.plans.insert(id, plan);
        }
        let mut lap = self.phase_timer.now();
        self.rt.grid.insert(id, imputed.mbr());
        self.rt.windows[window_index(stream)].slide(imputed)?;
        let d = self.phase_timer.lap(&mut lap);
        self.phase_timer.insert += d;
        Ok(())
    }

    /// Probe the opposite queues around a fully imputed arrival: cell-level
    /// screening, per-object box pruning, on-demand imputation of grid
    /// residents, sub-box mass pruning, and exact refinement.
    fn probe_candidates(&mut self, probe: &ImputedObject, delta: &mut JoinDelta) -> Result<()> {
        let params = self.core.config.params;
        let opposite = probe.id().stream.opposite();
        let probe_sub = sub_box(probe, params.alpha, self.core.config.lambda);

        let mut lap = self.phase_timer.now();
        let neighborhood = self.rt.grid.neighborhood(probe.mbr(), opposite);
        let d = self.phase_timer.lap(&mut lap);
        self.phase_timer.neighborhood += d;
        // Track the best screening level each opposite object reaches,
        // indexed by window slot: 255 = unseen, 0 = all its cells fail the
        // box test, 1 = some cell passes the box test but none passes the
        // sub-box test, 2 = reachable.
        let window_size = self.core.config.window as i64;
        let min_ts = probe.timestamp() - window_size + 1;
        let mut screening = vec![255u8; self.core.config.window];
        for (key, cell_dist) in neighborhood {
            let level = if exceeds_epsilon(cell_dist, params.epsilon) {
                0
            } else {
                let cell_box = self.rt.grid.cell_box(&key);
                let sub_dist = mindist(&probe_sub.mbr, &cell_box)?;
                // Skipping the cell is justified by the mass argument only
                // when the probe's sub-box mass is large enough.
                if exceeds_epsilon(sub_dist, params.epsilon)
                    && probe_sub.beta > 1.0 - params.alpha + crate::prune::PRUNE_GUARD
                {
                    1
                } else {
                    2
                }
            };
            for candidate in self.rt.grid.queue(&key, opposite) {
                let slot = &mut screening[(candidate.timestamp - min_ts) as usize];
                if *slot == 255 || level > *slot {
                    *slot = level;
                }
            }
        }

        let d = self.phase_timer.lap(&mut lap);
        self.phase_timer.screening += d;
        for (offset, &level) in screening.iter().enumerate() {
            if level == 255 {
                continue;
            }
            let candidate_id =
                ObjectId { stream: opposite, timestamp: min_ts + offset as i64 };
            if self.rt.unimputable.contains(&candidate_id) {
                continue;
            }
            self.rt.stats.grid_candidate_pairs += 1;
            match level {
                0 => {
                    self.rt.stats.lemma1_pruned += 1;
                    continue;
                }
                1 => {
                    self.rt.stats.lemma3_pruned += 1;
                    continue;
                }
                _ => {}
            }

            // Pair-level box pruning against the candidate's current
            // (possibly still node-state) box.
            let pair_prunable = {
                let resident = self.rt.windows[window_index(opposite)]
                    .get(candidate_id.timestamp)
                    .expect("grid references live objects");
                exceeds_epsilon(mindist(probe.mbr(), resident.mbr())?, params.epsilon)
            };
            if pair_prunable {
                self.rt.stats.lemma1_pruned += 1;
                continue;
            }

            // Impute the resident on demand.
            self.materialize_resident(candidate_id)?;
            let lambda = self.core.config.lambda;
            let candidate = self.rt.windows[window_index(opposite)]
                .get(candidate_id.timestamp)
                .expect("grid references live objects");
            let cand_hist = self
                .rt
                .sub_hists
                .entry(candidate_id)
                .or_insert_with(|| object_histogram(candidate, lambda));

            // Sub-box mass pruning over the pair: the probe's high-mass run
            // is fixed per arrival, the candidate's run answers it. The
            // candidate's sub-box is its instance box with the dependent
            // interval narrowed to the run, evaluated without materializing
            // the box.
            let pruned = match cand_hist {
                Some((attr, hist)) => {
                    let bound = (1.0 - params.alpha) / probe_sub.beta;
                    match select_sub_mbr(hist, bound, false) {
                        Ok(s) => {
                            let mass_margin = probe_sub.beta * s.beta
                                > 1.0 - params.alpha + crate::prune::PRUNE_GUARD;
                            mass_margin
                                && exceeds_epsilon(
                                    mindist_with_override(
                                        &probe_sub.mbr,
                                        candidate.mbr(),
                                        Some((*attr, s.interval)),
                                    ),
                                    params.epsilon,
                                )
                        }
                        Err(_) => false,
                    }
                }
                None => {
                    probe_sub.beta > 1.0 - params.alpha + crate::prune::PRUNE_GUARD
                        && exceeds_epsilon(
                            mindist_with_override(&probe_sub.mbr, candidate.mbr(), None),
                            params.epsilon,
                        )
                }
            };
            if pruned {
                self.rt.stats.lemma3_pruned += 1;
                continue;
            }

            // Exact refinement.
            self.rt.stats.refined += 1;
            let p = join_probability(probe, candidate, &params)?;
            if p >= params.alpha {
                let (l, r) = pair_key(probe.id(), candidate_id);
                self.rt.join_set.insert(l, r, p);
                delta.added.push((l, r, p));
            }
        }
        let d = self.phase_timer.lap(&mut lap);
        self.phase_timer.examine += d;
        Ok(())
    }

    /// Bring a grid resident to instance state. Its resolved ranges were
    /// verified nonempty at arrival, so the box only shrinks and the grid
    /// placement is refreshed in place.
    fn materialize_resident(&mut self, id: ObjectId) -> Result<()> {
        let state = self.rt.windows[window_index(id.stream)]
            .get(id.timestamp)
            .expect("grid references live objects")
            .state();
        if state == ImputationState::Instance {
            return Ok(());
        }
        let plan = self.rt.plans.remove(&id).unwrap_or_default();
        let core = &self.core;
        let rt = &mut self.rt;
        let resident = rt.windows[window_index(id.stream)]
            .get_mut(id.timestamp)
            .expect("grid references live objects");
        let old_mbr = resident.mbr().clone();
        core.imputer().to_instance_state(resident, &plan)?;
        let new_mbr = resident.mbr().clone();
        rt.grid.reindex(id, &old_mbr, &new_mbr)
    }
}

fn pair_key(a: ObjectId, b: ObjectId) -> (i64, i64) {
    match a.stream {
        StreamId::Left => (a.timestamp, b.timestamp),
        StreamId::Right => (b.timestamp, a.timestamp),
    }
}

/// Equi-depth histogram of an imputed object's first missing attribute,
/// weighted by candidate confidence. `None` for complete objects.
fn object_histogram(obj: &ImputedObject, lambda: usize) -> Option<(usize, Histogram)> {
    let (attr, candidates) = obj.candidates().first()?;
    let pairs: Vec<(f64, f64)> = candidates.iter().map(|c| (c.value, c.confidence)).collect();
    let hist = Histogram::equi_depth(pairs, lambda).ok()?;
    Some((*attr, hist))
}

/// Minimum distance between `a` and `b` where one axis of `b` is replaced by
/// a narrower interval, without building the modified box.
fn mindist_with_override(a: &Mbr, b: &Mbr, b_override: Option<(usize, (f64, f64))>) -> f64 {
    let mut sum = 0.0;
    for j in 0..a.dim() {
        let (blo, bhi) = match b_override {
            Some((axis, (lo, hi))) if axis == j => {
                (lo.max(b.lo(j)), hi.min(b.hi(j)))
            }
            _ => (b.lo(j), b.hi(j)),
        };
        let gap = (a.lo(j) - bhi).max(blo - a.hi(j)).max(0.0);
        sum += gap * gap;
    }
    sum.sqrt()
}

fn assemble_sub_box(obj: &ImputedObject, attr: usize, sub: &SubMbr) -> Mbr {
    let mut mbr = obj.mbr().clone();
    let (lo, hi) = sub.interval;
    mbr.set_interval(attr, lo.max(mbr.lo(attr)), hi.min(mbr.hi(attr)));
    mbr
}

/// High-mass sub-box of a single object: the histogram prefix run (with the
/// extension rule) for its first missing attribute, or the whole
/// point-intervaled box with mass 1 for complete objects.
fn sub_box(obj: &ImputedObject, alpha: f64, lambda: usize) -> SubBox {
    match object_histogram(obj, lambda) {
        Some((attr, hist)) => match select_sub_mbr(&hist, 1.0 - alpha, true) {
            Ok(s_x) => SubBox { mbr: assemble_sub_box(obj, attr, &s_x), beta: s_x.beta },
            Err(_) => SubBox { mbr: obj.mbr().clone(), beta: 1.0 },
        },
        None => SubBox { mbr: obj.mbr().clone(), beta: 1.0 },
    }
}

impl Stepper for Engine {
    fn step(
        &mut self,
        new_left: Option<IncompleteObject>,
        new_right: Option<IncompleteObject>,
        timestamp: i64,
    ) -> Result<JoinDelta> {
        if let Some(last) = self.rt.last_timestamp {
            if timestamp <= last {
                return Err(Error::Ordering(format!(
                    "step t={timestamp} not after previous t={last}"
                )));
            }
        }
        self.validate_arrival(&new_left, StreamId::Left, timestamp)?;
        self.validate_arrival(&new_right, StreamId::Right, timestamp)?;

        let mut delta = JoinDelta { timestamp, ..JoinDelta::default() };
        let mut lap = self.phase_timer.now();
        self.evict_expired(timestamp, &mut delta);
        let d = self.phase_timer.lap(&mut lap);
        self.phase_timer.evict += d;
        if let Some(left) = new_left {
            self.process_arrival(left, &mut delta)?;
        }
        if let Some(right) = new_right {
            self.process_arrival(right, &mut delta)?;
        }
        self.rt.last_timestamp = Some(timestamp);
        delta.added.sort_by_key(|&(l, r, _)| (l, r));
        delta.removed.sort_by_key(|&(l, r, _)| (l, r));
        Ok(delta)
    }

    fn join_set(&self) -> &JoinSet {
        &self.rt.join_set
    }

    fn stats(&self) -> PruneStats {
        self.rt.stats
    }
}

/// Baseline that imputes every arrival immediately and then recomputes the
/// probability of every window pair from scratch at every timestamp, with
/// no synopsis and no pruning. The join set is replaced wholesale and the
/// delta derived by diffing against the previous one.
pub struct NestedLoopBaseline {
    core: EngineCore,
    windows: [SlidingWindow; 2],
    join_set: JoinSet,
    unimputable: HashSet<ObjectId>,
    stats: PruneStats,
    last_timestamp: Option<i64>,
}

impl NestedLoopBaseline {
    pub fn startup(repo: Repository, rules: &[DDRule], config: EngineConfig) -> Result<Self> {
        if config.window == 0 {
            return Err(Error::Config("window size must be at least 1".into()));
        }
        let (lattices, indexes) = build_imputation_machinery(&repo, rules, &config)?;
        let windows = [SlidingWindow::new(config.window)?, SlidingWindow::new(config.window)?];
        Ok(NestedLoopBaseline {
            core: EngineCore { config, repo, lattices, indexes },
            windows,
            join_set: JoinSet::new(),
            unimputable: HashSet::new(),
            stats: PruneStats::default(),
            last_timestamp: None,
        })
    }

    fn admit_arrival(&mut self, source: IncompleteObject, delta: &mut JoinDelta) -> Result<()> {
        let stream = source.stream;
        let id = source.id();
        let opposite = window_index(stream.opposite());
        self.stats.window_pairs += self.windows[opposite].len() as u64;
        let imputed = match self.core.imputer().impute_fully(source.clone())? {
            Some(obj) => obj,
            None => {
                self.unimputable.insert(id);
                delta.unimputable.push(id);
                self.windows[window_index(stream)].slide(ImputedObject::range_state(source))?;
                return Ok(());
            }
        };
        self.windows[window_index(stream)].slide(imputed)?;
        Ok(())
    }
}

impl Stepper for NestedLoopBaseline {
    fn step(
        &mut self,
        new_left: Option<IncompleteObject>,
        new_right: Option<IncompleteObject>,
        timestamp: i64,
    ) -> Result<JoinDelta> {
        if let Some(last) = self.last_timestamp {
            if timestamp <= last {
                return Err(Error::Ordering(format!(
                    "step t={timestamp} not after previous t={last}"
                )));
            }
        }
        let mut delta = JoinDelta { timestamp, ..JoinDelta::default() };
        let min_ts = timestamp - self.core.config.window as i64 + 1;
        for w in &mut self.windows {
            for obj in w.evict_older_than(min_ts) {
                self.unimputable.remove(&obj.id());
            }
        }
        if let Some(left) = new_left {
            self.admit_arrival(left, &mut delta)?;
        }
        if let Some(right) = new_right {
            self.admit_arrival(right, &mut delta)?;
        }

        // Full pairwise recomputation over both windows; the refinement of
        // independent pairs fans out across worker threads.
        let params = self.core.config.params;
        let left_objs: Vec<&ImputedObject> = self.windows[0]
            .iter()
            .filter(|o| !self.unimputable.contains(&o.id()))
            .collect();
        let right_objs: Vec<&ImputedObject> = self.windows[1]
            .iter()
            .filter(|o| !self.unimputable.contains(&o.id()))
            .collect();
        let qualifying: Result<Vec<Vec<(i64, i64, f64)>>> = left_objs
            .par_iter()
            .map(|left_obj| {
                let mut found = Vec::new();
                for right_obj in &right_objs {
                    let p = join_probability(left_obj, right_obj, &params)?;
                    if p >= params.alpha {
                        found.push((left_obj.timestamp(), right_obj.timestamp(), p));
                    }
                }
                Ok(found)
            })
            .collect();
        let mut fresh = JoinSet::new();
        for (l, r, p) in qualifying?.into_iter().flatten() {
            fresh.insert(l, r, p);
        }
        self.stats.refined += (left_objs.len() * right_objs.len()) as u64;
        self.stats.grid_candidate_pairs +=
            (left_objs.len() * right_objs.len()) as u64;
        for (key, p) in fresh.iter() {
            if !self.join_set.contains(key.0, key.1) {
                delta.added.push((key.0, key.1, p));
            }
        }
        for (key, p) in self.join_set.iter() {
            if !fresh.contains(key.0, key.1) {
                delta.removed.push((key.0, key.1, p));
            }
        }
        self.join_set = fresh;

        self.last_timestamp = Some(timestamp);
        delta.added.sort_by_key(|&(l, r, _)| (l, r));
        delta.removed.sort_by_key(|&(l, r, _)| (l, r));
        Ok(delta)
    }

    fn join_set(&self) -> &JoinSet {
        &self.join_set
    }

    fn stats(&self) -> PruneStats {
        self.stats
    }
}

/// Feed two timestamp-aligned streams through a stepper, one timestamp at a
/// time, collecting all deltas.
pub fn run_streams(
    stepper: &mut dyn Stepper,
    left: &[IncompleteObject],
    right: &[IncompleteObject],
) -> Result<Vec<JoinDelta>> {
    let mut by_ts: std::collections::BTreeMap<i64, (Option<IncompleteObject>, Option<IncompleteObject>)> =
        std::collections::BTreeMap::new();
    for obj in left {
        by_ts.entry(obj.timestamp).or_default().0 = Some(obj.clone());
    }
    for obj in right {
        by_ts.entry(obj.timestamp).or_default().1 = Some(obj.clone());
    }
    let mut deltas = Vec::with_capacity(by_ts.len());
    for (t, (l, r)) in by_ts {
        deltas.push(stepper.step(l, r, t)?);
    }
    Ok(deltas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dd::DDRule;
    use crate::model::AttributeSchema;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn schema(names: &[&str]) -> AttributeSchema {
        AttributeSchema::new(names.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn complete(stream: StreamId, t: i64, values: &[f64]) -> IncompleteObject {
        IncompleteObject::new(stream, t, values.iter().map(|&v| Some(v)).collect()).unwrap()
    }

    fn random_repo(seed: u64, n: usize, d: usize) -> Repository {
        let mut rng = StdRng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let names: Vec<String> = (0..d).map(|j| format!("X{j}")).collect();
        Repository::new(AttributeSchema::new(names).unwrap(), rows).unwrap()
    }

    fn basic_rules() -> Vec<DDRule> {
        vec![DDRule::new(vec![0, 1], vec![0.05, 0.05], 2, 0.05).unwrap()]
    }

    fn config(epsilon: f64, alpha: f64, window: usize) -> EngineConfig {
        EngineConfig::new(JoinParams::new(epsilon, alpha).unwrap(), window)
    }

    #[test]
    fn complete_near_pair_joins_with_probability_one() {
        let repo = random_repo(1, 200, 3);
        let mut engine = Engine::startup(repo, &basic_rules(), config(0.3, 0.5, 4)).unwrap();
        let delta = engine
            .step(
                Some(complete(StreamId::Left, 1, &[0.4, 0.4, 0.4])),
                Some(complete(StreamId::Right, 1, &[0.45, 0.45, 0.45])),
                1,
            )
            .unwrap();
        assert_eq!(delta.added.len(), 1);
        let (l, r, p) = delta.added[0];
        assert_eq!((l, r), (1, 1));
        assert_eq!(p, 1.0);
        assert!(engine.join_set().contains(1, 1));
    }

    #[test]
    fn far_incomplete_object_stays_at_node_state() {
        let repo = random_repo(2, 300, 3);
        let mut engine = Engine::startup(repo, &basic_rules(), config(0.1, 0.5, 4)).unwrap();
        // A right-stream resident in one corner.
        engine
            .step(None, Some(complete(StreamId::Right, 1, &[0.05, 0.05, 0.05])), 1)
            .unwrap();
        // Incomplete arrival in the far corner: even with attribute 2
        // unknown, the present attributes alone keep it out of reach.
        let incomplete = IncompleteObject::new(
            StreamId::Left,
            2,
            vec![Some(0.95), Some(0.95), None],
        )
        .unwrap();
        let delta = engine.step(Some(incomplete), None, 2).unwrap();
        assert!(delta.added.is_empty());
        let obj = engine.window(StreamId::Left).get(2).unwrap();
        assert_ne!(obj.state(), ImputationState::Instance);

        // Lazy-imputation safety: the skipped object is farther than epsilon
        // from every populated opposite cell.
        let params = engine.params();
        for (key, _) in engine.grid().neighborhood(obj.mbr(), StreamId::Right) {
            let d = mindist(&engine.grid().cell_box(&key), obj.mbr()).unwrap();
            assert!(d > params.epsilon);
        }
    }

    #[test]
    fn scripted_three_step_run_matches_hand_simulation() {
        let repo = random_repo(3, 200, 3);
        let mut engine = Engine::startup(repo, &basic_rules(), config(0.3, 0.5, 2)).unwrap();

        // t=1: o1 and u1 join.
        let d1 = engine
            .step(
                Some(complete(StreamId::Left, 1, &[0.2, 0.2, 0.2])),
                Some(complete(StreamId::Right, 1, &[0.3, 0.2, 0.2])),
                1,
            )
            .unwrap();
        assert_eq!(d1.added, vec![(1, 1, 1.0)]);
        assert!(d1.removed.is_empty());

        // t=2: far pair, nothing changes.
        let d2 = engine
            .step(
                Some(complete(StreamId::Left, 2, &[0.9, 0.9, 0.9])),
                Some(complete(StreamId::Right, 2, &[0.05, 0.9, 0.9])),
                2,
            )
            .unwrap();
        assert!(d2.added.is_empty());
        assert!(d2.removed.is_empty());

        // t=3: o1/u1 expire (w=2), the pair leaves the join set.
        let d3 = engine
            .step(
                Some(complete(StreamId::Left, 3, &[0.5, 0.5, 0.5])),
                Some(complete(StreamId::Right, 3, &[0.1, 0.1, 0.1])),
                3,
            )
            .unwrap();
        assert_eq!(d3.removed.len(), 1);
        assert_eq!((d3.removed[0].0, d3.removed[0].1), (1, 1));
        assert!(engine.join_set().is_empty() || !engine.join_set().contains(1, 1));
    }

    fn random_stream(
        rng: &mut StdRng,
        stream: StreamId,
        len: usize,
        d: usize,
        missing_rate: f64,
    ) -> Vec<IncompleteObject> {
        (1..=len as i64)
            .map(|t| {
                let values: Vec<Option<f64>> = (0..d)
                    .map(|j| {
                        if j == d - 1 && rng.gen_bool(missing_rate) {
                            None
                        } else {
                            Some(rng.gen_range(0.0..1.0))
                        }
                    })
                    .collect();
                IncompleteObject::new(stream, t, values).unwrap()
            })
            .collect()
    }

    #[test]
    fn engine_and_baselines_agree_on_random_streams() {
        let mut rng = StdRng::seed_from_u64(41);
        let repo = random_repo(42, 500, 3);
        let rules = vec![DDRule::new(vec![0, 1], vec![0.1, 0.1], 2, 0.05).unwrap()];
        let cfg = config(0.25, 0.5, 8);
        let left = random_stream(&mut rng, StreamId::Left, 60, 3, 0.4);
        let right = random_stream(&mut rng, StreamId::Right, 60, 3, 0.4);

        let mut lazy = Engine::startup(repo.clone(), &rules, cfg.clone()).unwrap();
        let mut eager = Engine::startup_eager(repo.clone(), &rules, cfg.clone()).unwrap();
        let mut nested = NestedLoopBaseline::startup(repo, &rules, cfg).unwrap();

        let lazy_deltas = run_streams(&mut lazy, &left, &right).unwrap();
        let eager_deltas = run_streams(&mut eager, &left, &right).unwrap();
        let nested_deltas = run_streams(&mut nested, &left, &right).unwrap();

        let snapshot = |deltas: &[JoinDelta]| -> Vec<Vec<(i64, i64)>> {
            let mut live: std::collections::BTreeSet<(i64, i64)> = Default::default();
            let mut out = Vec::new();
            for d in deltas {
                for &(l, r, _) in &d.added {
                    live.insert((l, r));
                }
                for &(l, r, _) in &d.removed {
                    live.remove(&(l, r));
                }
                out.push(live.iter().copied().collect());
            }
            out
        };
        assert_eq!(snapshot(&lazy_deltas), snapshot(&nested_deltas));
        assert_eq!(snapshot(&eager_deltas), snapshot(&nested_deltas));
    }

    #[test]
    fn join_set_matches_from_scratch_recomputation() {
        let mut rng = StdRng::seed_from_u64(51);
        let repo = random_repo(52, 400, 3);
        let rules = vec![DDRule::new(vec![0, 1], vec![0.1, 0.1], 2, 0.05).unwrap()];
        let cfg = config(0.3, 0.5, 6);
        let left = random_stream(&mut rng, StreamId::Left, 40, 3, 0.5);
        let right = random_stream(&mut rng, StreamId::Right, 40, 3, 0.5);

        let mut engine = Engine::startup(repo.clone(), &rules, cfg.clone()).unwrap();
        run_streams(&mut engine, &left, &right).unwrap();

        // Recompute the expected join set over the final windows.
        let imputer = engine.imputer();
        let params = engine.params();
        let mut expected = Vec::new();
        for l in engine.window(StreamId::Left).iter() {
            let Some(li) = imputer.impute_fully(l.source().clone()).unwrap() else { continue };
            for r in engine.window(StreamId::Right).iter() {
                let Some(ri) = imputer.impute_fully(r.source().clone()).unwrap() else { continue };
                let p = join_probability(&li, &ri, &params).unwrap();
                if p >= params.alpha {
                    expected.push((l.timestamp(), r.timestamp()));
                }
            }
        }
        expected.sort_unstable();
        let mut got: Vec<(i64, i64)> = engine.join_set().iter().map(|(k, _)| k).collect();
        got.sort_unstable();
        assert_eq!(got, expected);

        // No pair may reference an expired or unimputable endpoint.
        for ((l, r), _) in engine.join_set().iter() {
            assert!(engine.window(StreamId::Left).get(l).is_some());
            assert!(engine.window(StreamId::Right).get(r).is_some());
            assert!(!engine.is_unimputable(ObjectId { stream: StreamId::Left, timestamp: l }));
            assert!(!engine.is_unimputable(ObjectId { stream: StreamId::Right, timestamp: r }));
        }
    }

    #[test]
    fn grid_references_match_live_objects_after_run() {
        let mut rng = StdRng::seed_from_u64(61);
        let repo = random_repo(62, 300, 3);
        let rules = basic_rules();
        let cfg = config(0.2, 0.5, 5);
        let left = random_stream(&mut rng, StreamId::Left, 50, 3, 0.3);
        let right = random_stream(&mut rng, StreamId::Right, 50, 3, 0.3);
        let mut engine = Engine::startup(repo, &rules, cfg).unwrap();
        run_streams(&mut engine, &left, &right).unwrap();

        for stream in [StreamId::Left, StreamId::Right] {
            for obj in engine.window(stream).iter() {
                let id = obj.id();
                let mut expect = if engine.is_unimputable(id) {
                    Vec::new()
                } else {
                    crate::grid::cells_for(obj.mbr(), engine.params().epsilon)
                };
                expect.sort();
                assert_eq!(engine.grid().referenced_cells(id), expect);
            }
        }
    }

    #[test]
    fn unimputable_objects_never_join() {
        // Repository misses any row near the probe, and the only rule's
        // determinants are missing on the arrival, so nothing can impute it.
        let repo = random_repo(71, 100, 3);
        let rules = basic_rules();
        let mut engine = Engine::startup(repo, &rules, config(0.5, 0.5, 4)).unwrap();
        engine
            .step(None, Some(complete(StreamId::Right, 1, &[0.5, 0.5, 0.5])), 1)
            .unwrap();
        // Both determinants missing: no applicable lattice node.
        let hopeless =
            IncompleteObject::new(StreamId::Left, 2, vec![None, None, Some(0.5)]).unwrap();
        let delta = engine.step(Some(hopeless), None, 2).unwrap();
        assert_eq!(delta.unimputable.len(), 1);
        assert!(delta.added.is_empty());
        assert!(engine.join_set().is_empty());
        // Still occupies a window slot.
        assert_eq!(engine.window(StreamId::Left).len(), 1);
    }
}
