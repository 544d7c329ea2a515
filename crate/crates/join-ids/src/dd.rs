//! Distance-constraint dependency rules, the per-attribute rule lattice,
//! fractal-dimension count estimation, and rule-driven imputation.
//!
//! Imputation of a missing attribute walks the rule lattice from the most
//! specific combination down, picking the first rule whose estimated match
//! count reaches one, then range-queries the matching imputation index. The
//! count estimate projects the repository onto the rule's determinant
//! attributes and scales a local neighborhood count by the projection's
//! correlation fractal dimension.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::index::{ImputationIndex, Repository};
use crate::model::{build_candidates, ImputedObject, IncompleteObject, DEFAULT_CANDIDATE_CAP};

/// A dependency rule: objects close on every determinant attribute (within
/// the per-attribute epsilon) must be close on the dependent attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct DDRule {
    determinants: Vec<usize>,
    determinant_eps: Vec<f64>,
    dependent: usize,
    dependent_eps: f64,
}

impl DDRule {
    pub fn new(
        determinants: Vec<usize>,
        determinant_eps: Vec<f64>,
        dependent: usize,
        dependent_eps: f64,
    ) -> Result<Self> {
        if determinants.is_empty() {
            return Err(Error::Schema("rule needs at least one determinant".into()));
        }
        if determinants.len() != determinant_eps.len() {
            return Err(Error::Schema("one epsilon per determinant required".into()));
        }
        if determinants.contains(&dependent) {
            return Err(Error::Schema(format!(
                "dependent attribute {dependent} cannot also be a determinant"
            )));
        }
        for (i, &a) in determinants.iter().enumerate() {
            if determinants[..i].contains(&a) {
                return Err(Error::Schema(format!("duplicate determinant attribute {a}")));
            }
        }
        if determinant_eps.iter().any(|&e| !(e >= 0.0)) || !(dependent_eps >= 0.0) {
            return Err(Error::Schema("rule epsilons must be nonnegative".into()));
        }
        let mut paired: Vec<(usize, f64)> =
            determinants.into_iter().zip(determinant_eps).collect();
        paired.sort_by_key(|(a, _)| *a);
        let (determinants, determinant_eps) = paired.into_iter().unzip();
        Ok(DDRule { determinants, determinant_eps, dependent, dependent_eps })
    }

    pub fn determinants(&self) -> &[usize] {
        &self.determinants
    }

    pub fn determinant_eps(&self) -> &[f64] {
        &self.determinant_eps
    }

    pub fn eps_for(&self, attr: usize) -> Option<f64> {
        self.determinants
            .iter()
            .position(|&a| a == attr)
            .map(|i| self.determinant_eps[i])
    }

    pub fn dependent(&self) -> usize {
        self.dependent
    }

    pub fn dependent_eps(&self) -> f64 {
        self.dependent_eps
    }
}

/// Conjunction of closed intervals over determinant attributes, centered at
/// an object's values: `[v - eps, v + eps]` per attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRange {
    intervals: Vec<(usize, f64, f64)>,
}

impl QueryRange {
    pub fn new(mut intervals: Vec<(usize, f64, f64)>) -> Self {
        intervals.sort_by_key(|(a, _, _)| *a);
        QueryRange { intervals }
    }

    /// Range for imputing `obj`'s missing attribute via `rule`; every
    /// determinant of the rule must be present on the object.
    pub fn from_rule(values: &[Option<f64>], rule_determinants: &[usize], eps: &[f64]) -> Result<Self> {
        let mut intervals = Vec::with_capacity(rule_determinants.len());
        for (&attr, &e) in rule_determinants.iter().zip(eps) {
            let v = values[attr].ok_or_else(|| {
                Error::State(format!("determinant attribute {attr} is missing on the object"))
            })?;
            intervals.push((attr, v - e, v + e));
        }
        Ok(QueryRange { intervals })
    }

    pub fn intervals(&self) -> &[(usize, f64, f64)] {
        &self.intervals
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    /// Same center, every half-width multiplied by `factor`.
    pub fn widened(&self, factor: f64) -> QueryRange {
        let intervals = self
            .intervals
            .iter()
            .map(|&(a, lo, hi)| {
                let c = (lo + hi) / 2.0;
                let h = (hi - lo) / 2.0 * factor;
                (a, c - h, c + h)
            })
            .collect();
        QueryRange { intervals }
    }

    pub fn contains_row(&self, row: &[f64]) -> bool {
        self.intervals.iter().all(|&(a, lo, hi)| lo <= row[a] && row[a] <= hi)
    }

    /// Intersection test against a box stored over `key_attrs` (the box's
    /// axis `k` corresponds to attribute `key_attrs[k]`). Attributes the
    /// range does not constrain always pass.
    pub fn intersects_keyed_box(&self, bbox: &crate::model::Mbr, key_attrs: &[usize]) -> bool {
        self.intervals.iter().all(|&(a, lo, hi)| {
            match key_attrs.iter().position(|&k| k == a) {
                Some(axis) => lo <= bbox.hi(axis) && bbox.lo(axis) <= hi,
                None => true,
            }
        })
    }

    pub fn volume(&self) -> f64 {
        self.intervals.iter().map(|&(_, lo, hi)| hi - lo).product()
    }

    /// Largest distance between the range's center and its corners.
    pub fn half_diagonal(&self) -> f64 {
        self.intervals
            .iter()
            .map(|&(_, lo, hi)| {
                let h = (hi - lo) / 2.0;
                h * h
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<(usize, f64)> {
        self.intervals.iter().map(|&(a, lo, hi)| (a, (lo + hi) / 2.0)).collect()
    }
}

/// Correlation fractal dimension of the repository's projection onto an
/// attribute subset, fitted over box-counting statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FractalEstimate {
    pub attrs: Vec<usize>,
    pub d2: f64,
    /// True when the box-counting statistic did not scale at all (for
    /// example, every projected point is identical).
    pub degenerate: bool,
}

/// Geometric sequence of six cell sides from 1/64 to 1/4 of the domain.
pub fn default_resolutions() -> Vec<f64> {
    let r1: f64 = 1.0 / 64.0;
    let r2: f64 = 1.0 / 4.0;
    let steps = 6;
    (0..steps)
        .map(|i| r1 * (r2 / r1).powf(i as f64 / (steps - 1) as f64))
        .collect()
}

/// Fit the correlation fractal dimension of the `attrs` projection: the
/// least-squares slope of `log(sum p_i^2)` against `log(r)` over grids of
/// cell side `r`, where `p_i` is the fraction of rows in cell `i`.
pub fn estimate_fractal_dimension(
    repo: &Repository,
    attrs: &[usize],
    resolutions: &[f64],
) -> Result<FractalEstimate> {
    if repo.is_empty() {
        return Err(Error::Config("fractal estimate needs a nonempty repository".into()));
    }
    if attrs.is_empty() {
        return Err(Error::Schema("fractal estimate needs at least one attribute".into()));
    }
    if resolutions.len() < 4 {
        return Err(Error::Config(format!(
            "need at least 4 grid resolutions, got {}",
            resolutions.len()
        )));
    }
    let n = repo.len() as f64;
    let mut points = Vec::with_capacity(resolutions.len());
    for &r in resolutions {
        if !(r > 0.0) {
            return Err(Error::Config(format!("resolution {r} must be positive")));
        }
        let mut cells: HashMap<Vec<i64>, usize> = HashMap::new();
        for row in repo.rows() {
            let key: Vec<i64> = attrs.iter().map(|&a| (row[a] / r).floor() as i64).collect();
            *cells.entry(key).or_insert(0) += 1;
        }
        let sum_sq: f64 = cells.values().map(|&c| (c as f64 / n) * (c as f64 / n)).sum();
        points.push((r.ln(), sum_sq.ln()));
    }

    let spread = points
        .iter()
        .map(|(_, y)| *y)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let degenerate = spread.1 - spread.0 < 1e-12;

    let slope = if degenerate { 0.0 } else { least_squares_slope(&points) };
    let d2 = slope.clamp(0.0, attrs.len() as f64 + 0.5);
    Ok(FractalEstimate { attrs: attrs.to_vec(), d2, degenerate })
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mean_x: f64 = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y: f64 = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in points {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// The cube sharing the query's half-diagonal, centered at its center; the
/// neighborhood whose row count anchors the estimate.
pub fn neighborhood_cube(range: &QueryRange) -> QueryRange {
    let dims = range.dim() as f64;
    let half = range.half_diagonal() / dims.sqrt();
    QueryRange::new(range.center().into_iter().map(|(a, c)| (a, c - half, c + half)).collect())
}

/// Estimated number of repository rows inside `range`, scaled by the fractal
/// dimension of the determinant projection.
///
/// The neighborhood count is taken over the cube with the same half-diagonal
/// as the query, centered at the query's center; an empty neighborhood
/// yields zero.
pub fn estimate_count(repo: &Repository, range: &QueryRange, fractal: &FractalEstimate) -> f64 {
    let cube = neighborhood_cube(range);
    let neighborhood =
        repo.rows().iter().filter(|row| cube.contains_row(row)).count();
    estimate_count_from_neighborhood(range, fractal, neighborhood)
}

/// The count formula itself, given the neighborhood row count (however it
/// was obtained).
pub fn estimate_count_from_neighborhood(
    range: &QueryRange,
    fractal: &FractalEstimate,
    neighborhood: usize,
) -> f64 {
    debug_assert_eq!(
        range.intervals().iter().map(|&(a, _, _)| a).collect::<Vec<_>>(),
        fractal.attrs,
        "range attributes must match the fractal estimate"
    );
    if neighborhood <= 1 {
        return 0.0;
    }
    let dims = range.dim() as f64;
    let eps = range.half_diagonal();
    let cube_side = 2.0 * eps / dims.sqrt();
    let cube_volume = cube_side.powf(dims);
    let query_volume = range.volume();
    let ratio = if cube_volume > 0.0 { query_volume / cube_volume } else { 1.0 };
    ratio.powf(fractal.d2 / dims)
        * (neighborhood - 1) as f64
        * 2.0f64.powf(fractal.d2)
        * eps.powf(fractal.d2)
}

/// One lattice node: a combination of base rules sharing the dependent
/// attribute. Determinants are the union of the members' determinant sets;
/// when an attribute repeats, the smallest epsilon wins.
#[derive(Debug, Clone)]
pub struct LatticeNode {
    determinants: Vec<usize>,
    determinant_eps: Vec<f64>,
    dependent_eps: f64,
    member_rules: Vec<usize>,
    offline_count: f64,
    fractal: FractalEstimate,
}

impl LatticeNode {
    pub fn determinants(&self) -> &[usize] {
        &self.determinants
    }

    pub fn determinant_eps(&self) -> &[f64] {
        &self.determinant_eps
    }

    pub fn dependent_eps(&self) -> f64 {
        self.dependent_eps
    }

    pub fn member_rules(&self) -> &[usize] {
        &self.member_rules
    }

    pub fn offline_count(&self) -> f64 {
        self.offline_count
    }

    pub fn fractal(&self) -> &FractalEstimate {
        &self.fractal
    }

    /// True when every determinant is present on the object.
    pub fn applicable_to(&self, obj: &IncompleteObject) -> bool {
        self.determinants.iter().all(|&a| !obj.is_missing(a))
    }

    pub fn query_range_for(&self, obj: &IncompleteObject) -> Result<QueryRange> {
        QueryRange::from_rule(obj.values(), &self.determinants, &self.determinant_eps)
    }
}

/// Position of a node inside a lattice: level (1-based) and rank within the
/// level's traversal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    pub level: usize,
    pub pos: usize,
}

/// All `2^l - 1` combinations of the `l` base rules for one dependent
/// attribute, each level pre-sorted by the offline count estimate.
#[derive(Debug, Clone)]
pub struct ImputationLattice {
    dependent: usize,
    base_rules: Vec<DDRule>,
    /// `levels[lv - 1]` holds level `lv`; traversal goes from the top level
    /// down to level 1.
    levels: Vec<Vec<LatticeNode>>,
}

impl ImputationLattice {
    pub fn dependent(&self) -> usize {
        self.dependent
    }

    pub fn base_rules(&self) -> &[DDRule] {
        &self.base_rules
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, level: usize) -> &[LatticeNode] {
        &self.levels[level - 1]
    }

    pub fn node(&self, node_ref: NodeRef) -> &LatticeNode {
        &self.levels[node_ref.level - 1][node_ref.pos]
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(|l| l.len()).sum()
    }

    /// Union of all base-rule determinants; the key attributes of the
    /// matching imputation index.
    pub fn key_attrs(&self) -> Vec<usize> {
        let mut attrs: Vec<usize> = self
            .base_rules
            .iter()
            .flat_map(|r| r.determinants().iter().copied())
            .collect();
        attrs.sort_unstable();
        attrs.dedup();
        attrs
    }

    /// Nodes in traversal order: top level first, each level in its
    /// precomputed rank order.
    pub fn traversal(&self) -> impl Iterator<Item = NodeRef> + '_ {
        (1..=self.levels.len()).rev().flat_map(move |level| {
            (0..self.levels[level - 1].len()).map(move |pos| NodeRef { level, pos })
        })
    }
}

/// Build the lattice for a set of rules sharing one dependent attribute.
///
/// Every level holds all combinations of that many base rules. Nodes on a
/// level are ranked by the offline count estimate, taken over a query box of
/// width `2 * eps` per determinant centered at the repository centroid:
/// counts of at least one come first in increasing order, then counts below
/// one in decreasing order.
pub fn build_lattice(rules: Vec<DDRule>, repo: &Repository) -> Result<ImputationLattice> {
    if rules.is_empty() {
        return Err(Error::Config("lattice needs at least one rule".into()));
    }
    let dependent = rules[0].dependent();
    if rules.iter().any(|r| r.dependent() != dependent) {
        return Err(Error::Schema("all lattice rules must share the dependent attribute".into()));
    }
    if repo.is_empty() {
        return Err(Error::Config("lattice needs a nonempty repository".into()));
    }
    let l = rules.len();
    if l > 16 {
        return Err(Error::Config(format!("lattice over {l} base rules is impractical")));
    }

    let centroid = repo.centroid();
    let centroid_values: Vec<Option<f64>> = centroid.iter().map(|&v| Some(v)).collect();
    let resolutions = default_resolutions();

    let mut levels: Vec<Vec<LatticeNode>> = vec![Vec::new(); l];
    for mask in 1u32..(1 << l) {
        let members: Vec<usize> = (0..l).filter(|&i| mask & (1 << i) != 0).collect();
        let mut eps_by_attr: HashMap<usize, f64> = HashMap::new();
        let mut dependent_eps = f64::INFINITY;
        for &i in &members {
            let rule = &rules[i];
            dependent_eps = dependent_eps.min(rule.dependent_eps());
            for (&attr, &eps) in rule.determinants().iter().zip(rule.determinant_eps()) {
                eps_by_attr
                    .entry(attr)
                    .and_modify(|e| *e = e.min(eps))
                    .or_insert(eps);
            }
        }
        let mut determinants: Vec<usize> = eps_by_attr.keys().copied().collect();
        determinants.sort_unstable();
        let determinant_eps: Vec<f64> = determinants.iter().map(|a| eps_by_attr[a]).collect();

        let fractal = estimate_fractal_dimension(repo, &determinants, &resolutions)?;
        let range = QueryRange::from_rule(&centroid_values, &determinants, &determinant_eps)?;
        let offline_count = estimate_count(repo, &range, &fractal);

        levels[members.len() - 1].push(LatticeNode {
            determinants,
            determinant_eps,
            dependent_eps,
            member_rules: members,
            offline_count,
            fractal,
        });
    }

    for level in &mut levels {
        // Counts >= 1 first in increasing order, then counts < 1 in
        // decreasing order.
        level.sort_by(|a, b| {
            let (ca, cb) = (a.offline_count, b.offline_count);
            match (ca >= 1.0, cb >= 1.0) {
                (true, false) => std::cmp::Ordering::Less,
                (false, true) => std::cmp::Ordering::Greater,
                (true, true) => ca.total_cmp(&cb),
                (false, false) => cb.total_cmp(&ca),
            }
            .then_with(|| a.member_rules.cmp(&b.member_rules))
        });
    }

    Ok(ImputationLattice { dependent, base_rules: rules, levels })
}

/// Walk the lattice from the top level down and return the first applicable
/// node whose online count estimate for this object's own query range
/// reaches one. `None` means no rule qualifies.
pub fn select_rule(
    lattice: &ImputationLattice,
    obj: &IncompleteObject,
    repo: &Repository,
) -> Option<(NodeRef, QueryRange)> {
    select_rule_counted(lattice, obj, |cube| {
        repo.rows().iter().filter(|row| cube.contains_row(row)).count()
    })
}

/// Same walk with a caller-supplied neighborhood counter (for example the
/// imputation index); the counter must return the exact row count inside
/// the cube.
pub fn select_rule_counted(
    lattice: &ImputationLattice,
    obj: &IncompleteObject,
    mut count_in: impl FnMut(&QueryRange) -> usize,
) -> Option<(NodeRef, QueryRange)> {
    for node_ref in lattice.traversal() {
        let node = lattice.node(node_ref);
        if !node.applicable_to(obj) {
            continue;
        }
        let range = node.query_range_for(obj).expect("applicable node has present determinants");
        let neighborhood = count_in(&neighborhood_cube(&range));
        if estimate_count_from_neighborhood(&range, &node.fractal, neighborhood) >= 1.0 {
            return Some((node_ref, range));
        }
    }
    None
}

/// Final imputation decision for one missing attribute: a query range
/// guaranteed to match at least one repository row.
#[derive(Debug, Clone)]
pub struct ResolvedAttr {
    pub attr: usize,
    pub node: NodeRef,
    pub range: QueryRange,
    /// True when the fallback ladder had to widen past the selected rule's
    /// own range.
    pub widened: bool,
}

/// Resolved imputation plan for one object: one entry per missing attribute.
/// Box upgrades driven by this plan only ever shrink, because instances are
/// later drawn from exactly these ranges.
#[derive(Debug, Clone, Default)]
pub struct ResolvedPlan {
    pub per_attr: Vec<ResolvedAttr>,
}

/// How many times the fallback doubles the determinant epsilons.
const FALLBACK_DOUBLINGS: u32 = 3;

/// Stateless imputation façade over the lattices and indexes.
pub struct Imputer<'a> {
    repo: &'a Repository,
    lattices: &'a HashMap<usize, ImputationLattice>,
    indexes: &'a HashMap<usize, ImputationIndex>,
    candidate_cap: usize,
}

impl<'a> Imputer<'a> {
    pub fn new(
        repo: &'a Repository,
        lattices: &'a HashMap<usize, ImputationLattice>,
        indexes: &'a HashMap<usize, ImputationIndex>,
    ) -> Self {
        Imputer { repo, lattices, indexes, candidate_cap: DEFAULT_CANDIDATE_CAP }
    }

    pub fn with_candidate_cap(mut self, cap: usize) -> Self {
        self.candidate_cap = cap.max(1);
        self
    }

    pub fn repo(&self) -> &Repository {
        self.repo
    }

    /// Fix the query range for every missing attribute. The lattice picks a
    /// rule by estimated count; an early-exit index probe then verifies a
    /// real match exists, walking the fallback ladder otherwise (double the
    /// epsilons up to three times, then try every other applicable node the
    /// same way). `None` means some attribute has no supported rule at all.
    pub fn resolve_plan(&self, source: &IncompleteObject) -> Result<Option<ResolvedPlan>> {
        let mut per_attr = Vec::new();
        for attr in source.missing_attrs() {
            match self.resolve_attr(source, attr)? {
                Some(resolved) => per_attr.push(resolved),
                None => return Ok(None),
            }
        }
        Ok(Some(ResolvedPlan { per_attr }))
    }

    fn resolve_attr(&self, source: &IncompleteObject, attr: usize) -> Result<Option<ResolvedAttr>> {
        let (Some(lattice), Some(index)) = (self.lattices.get(&attr), self.indexes.get(&attr))
        else {
            return Ok(None);
        };

        let repo = self.repo;
        let primary =
            select_rule_counted(lattice, source, |cube| index.count_in_box(repo, cube));
        if let Some((node_ref, range)) = &primary {
            if let Some(resolved) = self.probe_ladder(index, attr, *node_ref, range)? {
                return Ok(Some(resolved));
            }
        }
        for node_ref in lattice.traversal() {
            if primary.as_ref().is_some_and(|(p, _)| *p == node_ref) {
                continue;
            }
            let node = lattice.node(node_ref);
            if !node.applicable_to(source) {
                continue;
            }
            let range = node.query_range_for(source)?;
            if let Some(mut resolved) = self.probe_ladder(index, attr, node_ref, &range)? {
                resolved.widened = true;
                return Ok(Some(resolved));
            }
        }
        Ok(None)
    }

    fn probe_ladder(
        &self,
        index: &ImputationIndex,
        attr: usize,
        node: NodeRef,
        base: &QueryRange,
    ) -> Result<Option<ResolvedAttr>> {
        for doubling in 0..=FALLBACK_DOUBLINGS {
            let range = if doubling == 0 {
                base.clone()
            } else {
                base.widened(2.0f64.powi(doubling as i32))
            };
            if index.has_match(self.repo, &range) {
                return Ok(Some(ResolvedAttr { attr, node, range, widened: doubling > 0 }));
            }
        }
        Ok(None)
    }

    /// Tighten the object's box from the index nodes intersecting each
    /// resolved query range; reads no leaf rows.
    pub fn to_node_state(&self, imputed: &mut ImputedObject, plan: &ResolvedPlan) -> Result<()> {
        let mut intervals = Vec::new();
        let mut node_refs = Vec::new();
        for resolved in &plan.per_attr {
            let Some(index) = self.indexes.get(&resolved.attr) else { continue };
            let frontier = index.frontier_query(&resolved.range);
            if let Some(interval) = frontier.dependent_interval {
                intervals.push((resolved.attr, interval));
            }
            node_refs.extend(frontier.node_ids);
        }
        imputed.upgrade_to_node(&intervals, node_refs)
    }

    /// Materialize instances from the resolved ranges. The ranges were
    /// verified nonempty, so candidate values always exist and stay inside
    /// the node-state box.
    pub fn to_instance_state(&self, imputed: &mut ImputedObject, plan: &ResolvedPlan) -> Result<()> {
        let mut per_attr = Vec::with_capacity(plan.per_attr.len());
        for resolved in &plan.per_attr {
            let index = self.indexes.get(&resolved.attr).ok_or_else(|| {
                Error::State(format!("no index for resolved attribute {}", resolved.attr))
            })?;
            let rows = index.range_query(self.repo, &resolved.range).row_ids;
            if rows.is_empty() {
                return Err(Error::State(format!(
                    "resolved range for attribute {} lost its matches",
                    resolved.attr
                )));
            }
            per_attr.push((resolved.attr, self.rows_to_candidates(&rows, resolved.attr)));
        }
        imputed.upgrade_to_instance(per_attr)
    }

    fn rows_to_candidates(&self, rows: &[usize], attr: usize) -> Vec<crate::model::CandidateValue> {
        let weighted: Vec<(f64, f64)> =
            rows.iter().map(|&rid| (self.repo.row(rid)[attr], 1.0)).collect();
        build_candidates(&weighted, self.candidate_cap)
    }

    /// Run the whole descent eagerly. Returns `None` when the object is
    /// unimputable.
    pub fn impute_fully(&self, source: IncompleteObject) -> Result<Option<ImputedObject>> {
        if source.is_complete() {
            return Ok(Some(ImputedObject::complete(source)?));
        }
        let Some(plan) = self.resolve_plan(&source)? else {
            return Ok(None);
        };
        let mut imputed = ImputedObject::range_state(source);
        self.to_node_state(&mut imputed, &plan)?;
        self.to_instance_state(&mut imputed, &plan)?;
        Ok(Some(imputed))
    }
}
