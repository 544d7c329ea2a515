//! Domain types shared by the whole pipeline: attribute schemas, stream
//! objects with missing attributes, imputed probabilistic objects and their
//! bounding boxes, count-based sliding windows, and the live join set.
//!
//! Values are real numbers normalized to `[0, 1]`. An object is identified
//! by `(stream, timestamp)` and that identity is stable across imputation
//! state changes.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};

/// Tolerance for probability sums that must equal 1.
pub const CONFIDENCE_TOLERANCE: f64 = 1e-9;

/// Default cap on the number of possible worlds the enumeration oracle will
/// materialize.
pub const DEFAULT_WORLD_CAP: u128 = 1_000_000;

/// Default cap on candidate values kept per missing attribute.
pub const DEFAULT_CANDIDATE_CAP: usize = 16;

/// Candidate values equal after rounding at this scale are merged into one.
pub const CANDIDATE_MERGE_SCALE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StreamId {
    Left,
    Right,
}

impl StreamId {
    pub fn opposite(self) -> StreamId {
        match self {
            StreamId::Left => StreamId::Right,
            StreamId::Right => StreamId::Left,
        }
    }
}

/// Stable object identity: which stream it came from and its arrival index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId {
    pub stream: StreamId,
    pub timestamp: i64,
}

/// Ordered attribute names; all attribute values live in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSchema {
    names: Vec<String>,
}

impl AttributeSchema {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Schema("schema needs at least one attribute".into()));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::Schema(format!("duplicate attribute name `{name}`")));
            }
        }
        Ok(AttributeSchema { names })
    }

    /// Number of attributes, `d`.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, attr: usize) -> &str {
        &self.names[attr]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// A timestamped record where any attribute may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteObject {
    pub stream: StreamId,
    pub timestamp: i64,
    values: Vec<Option<f64>>,
}

impl IncompleteObject {
    pub fn new(stream: StreamId, timestamp: i64, values: Vec<Option<f64>>) -> Result<Self> {
        let present = values.iter().filter(|v| v.is_some()).count();
        if present == 0 {
            return Err(Error::Schema(format!(
                "object at t={timestamp} has no present attribute"
            )));
        }
        for (j, v) in values.iter().enumerate() {
            if let Some(v) = v {
                if !v.is_finite() || !(0.0..=1.0).contains(v) {
                    return Err(Error::Schema(format!(
                        "attribute {j} value {v} outside normalized domain [0,1]"
                    )));
                }
            }
        }
        Ok(IncompleteObject { stream, timestamp, values })
    }

    pub fn id(&self) -> ObjectId {
        ObjectId { stream: self.stream, timestamp: self.timestamp }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn value(&self, attr: usize) -> Option<f64> {
        self.values[attr]
    }

    pub fn is_missing(&self, attr: usize) -> bool {
        self.values[attr].is_none()
    }

    pub fn missing_attrs(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&j| self.values[j].is_none()).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }
}

/// One possible value for a missing attribute together with its existence
/// probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateValue {
    pub value: f64,
    pub confidence: f64,
}

/// Merge equal values (after rounding), keep the `cap` highest-confidence
/// candidates, and renormalize so confidences sum to 1.
///
/// `weighted` holds one `(value, weight)` entry per supporting repository
/// row; weights are usually 1.
pub fn build_candidates(weighted: &[(f64, f64)], cap: usize) -> Vec<CandidateValue> {
    if weighted.is_empty() {
        return Vec::new();
    }
    let mut merged: HashMap<i64, (f64, f64)> = HashMap::new();
    for &(value, weight) in weighted {
        let key = (value * CANDIDATE_MERGE_SCALE).round() as i64;
        match merged.entry(key) {
            Entry::Occupied(mut e) => {
                let (rep, w) = e.get_mut();
                // Keep the smallest raw value as the representative so
                // candidates always equal a real supporting value.
                *rep = rep.min(value);
                *w += weight;
            }
            Entry::Vacant(e) => {
                e.insert((value, weight));
            }
        }
    }
    let mut candidates: Vec<(f64, f64)> = merged.into_values().collect();
    // Highest confidence first; ties broken by value for determinism.
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    candidates.truncate(cap.max(1));
    let total: f64 = candidates.iter().map(|(_, w)| w).sum();
    let mut out: Vec<CandidateValue> = candidates
        .into_iter()
        .map(|(value, weight)| CandidateValue { value, confidence: weight / total })
        .collect();
    out.sort_by(|a, b| a.value.total_cmp(&b.value));
    out
}

/// A fully materialized instance of an imputed object.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub values: Vec<f64>,
    pub confidence: f64,
}

/// Axis-aligned bounding box with per-attribute closed intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Mbr {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Mbr {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Schema("mbr lo/hi dimension mismatch".into()));
        }
        for j in 0..lo.len() {
            if !(lo[j] <= hi[j]) {
                return Err(Error::Schema(format!(
                    "mbr interval [{}, {}] inverted on axis {j}",
                    lo[j], hi[j]
                )));
            }
        }
        Ok(Mbr { lo, hi })
    }

    pub fn from_point(point: &[f64]) -> Self {
        Mbr { lo: point.to_vec(), hi: point.to_vec() }
    }

    /// Box enclosing a nonempty set of points.
    pub fn from_points<'a, I: IntoIterator<Item = &'a [f64]>>(points: I) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = iter.next()?;
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for p in iter {
            for j in 0..lo.len() {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        Some(Mbr { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.lo[axis]
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.hi[axis]
    }

    pub fn interval(&self, axis: usize) -> (f64, f64) {
        (self.lo[axis], self.hi[axis])
    }

    pub fn set_interval(&mut self, axis: usize, lo: f64, hi: f64) {
        debug_assert!(lo <= hi);
        self.lo[axis] = lo;
        self.hi[axis] = hi;
    }

    pub fn contains_point(&self, point: &[f64]) -> bool {
        (0..self.dim()).all(|j| self.lo[j] <= point[j] && point[j] <= self.hi[j])
    }

    pub fn contains(&self, other: &Mbr) -> bool {
        (0..self.dim()).all(|j| self.lo[j] <= other.lo[j] && other.hi[j] <= self.hi[j])
    }

    pub fn intersects(&self, other: &Mbr) -> bool {
        (0..self.dim()).all(|j| self.lo[j] <= other.hi[j] && other.lo[j] <= self.hi[j])
    }

    pub fn expand(&mut self, other: &Mbr) {
        for j in 0..self.dim() {
            self.lo[j] = self.lo[j].min(other.lo[j]);
            self.hi[j] = self.hi[j].max(other.hi[j]);
        }
    }

    /// Box grown by `amount` on every side.
    pub fn inflated(&self, amount: f64) -> Mbr {
        Mbr {
            lo: self.lo.iter().map(|v| v - amount).collect(),
            hi: self.hi.iter().map(|v| v + amount).collect(),
        }
    }
}

/// How much of an imputed object has been materialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputationState {
    /// Box derived from the imputation rule's query range only.
    Range,
    /// Box tightened from the index nodes touched by the range query.
    Node,
    /// Full instance list materialized.
    Instance,
}

/// Probabilistic counterpart of an incomplete object.
///
/// The bounding box only ever shrinks across the `Range -> Node -> Instance`
/// transitions, so pruning decisions made against an earlier state stay
/// valid.
#[derive(Debug, Clone)]
pub struct ImputedObject {
    source: IncompleteObject,
    state: ImputationState,
    mbr: Mbr,
    node_refs: Vec<usize>,
    instances: Vec<Instance>,
    /// Per missing attribute: the normalized candidate set (instance state).
    candidates: Vec<(usize, Vec<CandidateValue>)>,
}

impl ImputedObject {
    /// Initial state for a freshly arrived object: point intervals on present
    /// attributes, full domain on missing ones.
    pub fn range_state(source: IncompleteObject) -> Self {
        let d = source.dim();
        let mut lo = vec![0.0; d];
        let mut hi = vec![1.0; d];
        for j in 0..d {
            if let Some(v) = source.value(j) {
                lo[j] = v;
                hi[j] = v;
            }
        }
        ImputedObject {
            source,
            state: ImputationState::Range,
            mbr: Mbr { lo, hi },
            node_refs: Vec::new(),
            instances: Vec::new(),
            candidates: Vec::new(),
        }
    }

    /// A complete object needs no imputation: one instance with confidence 1.
    pub fn complete(source: IncompleteObject) -> Result<Self> {
        if !source.is_complete() {
            return Err(Error::State(format!(
                "object at t={} has missing attributes",
                source.timestamp
            )));
        }
        let values: Vec<f64> = source.values().iter().map(|v| v.unwrap()).collect();
        let mbr = Mbr::from_point(&values);
        Ok(ImputedObject {
            source,
            state: ImputationState::Instance,
            mbr,
            node_refs: Vec::new(),
            instances: vec![Instance { values, confidence: 1.0 }],
            candidates: Vec::new(),
        })
    }

    pub fn source(&self) -> &IncompleteObject {
        &self.source
    }

    pub fn id(&self) -> ObjectId {
        self.source.id()
    }

    pub fn timestamp(&self) -> i64 {
        self.source.timestamp
    }

    pub fn state(&self) -> ImputationState {
        self.state
    }

    pub fn mbr(&self) -> &Mbr {
        &self.mbr
    }

    pub fn node_refs(&self) -> &[usize] {
        &self.node_refs
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    /// Normalized candidate set per missing attribute (instance state only).
    pub fn candidates(&self) -> &[(usize, Vec<CandidateValue>)] {
        &self.candidates
    }

    /// Tighten missing-attribute intervals from the index nodes touched by
    /// the imputation range query.
    pub fn upgrade_to_node(
        &mut self,
        attr_intervals: &[(usize, (f64, f64))],
        node_refs: Vec<usize>,
    ) -> Result<()> {
        if self.state != ImputationState::Range {
            return Err(Error::State("node upgrade requires range state".into()));
        }
        let mut mbr = self.mbr.clone();
        for &(attr, (lo, hi)) in attr_intervals {
            if lo < self.mbr.lo(attr) - CONFIDENCE_TOLERANCE
                || hi > self.mbr.hi(attr) + CONFIDENCE_TOLERANCE
            {
                return Err(Error::Containment(format!(
                    "node interval [{lo}, {hi}] grows attribute {attr}"
                )));
            }
            mbr.set_interval(attr, lo.max(self.mbr.lo(attr)), hi.min(self.mbr.hi(attr)));
        }
        self.mbr = mbr;
        self.node_refs = node_refs;
        self.state = ImputationState::Node;
        Ok(())
    }

    /// Materialize the full instance list from per-attribute candidate sets.
    ///
    /// `per_attr` must hold one normalized candidate set for every missing
    /// attribute of the source object. Instance confidences are the products
    /// of the per-attribute candidate confidences and sum to 1.
    pub fn upgrade_to_instance(
        &mut self,
        mut per_attr: Vec<(usize, Vec<CandidateValue>)>,
    ) -> Result<()> {
        if self.state == ImputationState::Instance {
            return Err(Error::State("object already at instance level".into()));
        }
        per_attr.sort_by_key(|(attr, _)| *attr);
        let missing = self.source.missing_attrs();
        let supplied: Vec<usize> = per_attr.iter().map(|(a, _)| *a).collect();
        if supplied != missing {
            return Err(Error::Schema(format!(
                "candidates supplied for attributes {supplied:?}, object misses {missing:?}"
            )));
        }
        for (attr, set) in &per_attr {
            if set.is_empty() {
                return Err(Error::Config(format!("empty candidate set for attribute {attr}")));
            }
            let sum: f64 = set.iter().map(|c| c.confidence).sum();
            if (sum - 1.0).abs() > CONFIDENCE_TOLERANCE {
                return Err(Error::Config(format!(
                    "candidate confidences for attribute {attr} sum to {sum}, expected 1"
                )));
            }
        }

        let base: Vec<f64> = self.source.values().iter().map(|v| v.unwrap_or(0.0)).collect();
        let mut instances = vec![Instance { values: base, confidence: 1.0 }];
        for (attr, set) in &per_attr {
            let mut next = Vec::with_capacity(instances.len() * set.len());
            for inst in &instances {
                for cand in set {
                    let mut values = inst.values.clone();
                    values[*attr] = cand.value;
                    next.push(Instance { values, confidence: inst.confidence * cand.confidence });
                }
            }
            instances = next;
        }

        let mbr = Mbr::from_points(instances.iter().map(|i| i.values.as_slice()))
            .expect("instance list is nonempty");
        if !self.mbr_contains_with_tolerance(&mbr) {
            return Err(Error::Containment(
                "instance box escapes the current bounding box".into(),
            ));
        }
        self.mbr = mbr;
        self.instances = instances;
        self.candidates = per_attr;
        self.state = ImputationState::Instance;
        Ok(())
    }

    fn mbr_contains_with_tolerance(&self, inner: &Mbr) -> bool {
        (0..self.mbr.dim()).all(|j| {
            self.mbr.lo(j) - CONFIDENCE_TOLERANCE <= inner.lo(j)
                && inner.hi(j) <= self.mbr.hi(j) + CONFIDENCE_TOLERANCE
        })
    }
}

/// Count-based sliding window holding the most recent `w` objects.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    capacity: usize,
    entries: VecDeque<ImputedObject>,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("window capacity must be at least 1".into()));
        }
        Ok(SlidingWindow { capacity, entries: VecDeque::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn newest_timestamp(&self) -> Option<i64> {
        self.entries.back().map(|o| o.timestamp())
    }

    pub fn oldest_timestamp(&self) -> Option<i64> {
        self.entries.front().map(|o| o.timestamp())
    }

    /// Append a new arrival; returns the expired object when the window was
    /// already full. Timestamps must be strictly increasing.
    pub fn slide(&mut self, obj: ImputedObject) -> Result<Option<ImputedObject>> {
        if let Some(newest) = self.newest_timestamp() {
            if obj.timestamp() <= newest {
                return Err(Error::Ordering(format!(
                    "arrival t={} not after newest t={newest}",
                    obj.timestamp()
                )));
            }
        }
        self.entries.push_back(obj);
        if self.entries.len() > self.capacity {
            Ok(self.entries.pop_front())
        } else {
            Ok(None)
        }
    }

    /// Remove and return all entries with timestamp < `min_timestamp`.
    pub fn evict_older_than(&mut self, min_timestamp: i64) -> Vec<ImputedObject> {
        let mut expired = Vec::new();
        while self.entries.front().is_some_and(|o| o.timestamp() < min_timestamp) {
            expired.push(self.entries.pop_front().unwrap());
        }
        expired
    }

    pub fn iter(&self) -> impl Iterator<Item = &ImputedObject> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ImputedObject> {
        self.entries.iter_mut()
    }

    pub fn get(&self, timestamp: i64) -> Option<&ImputedObject> {
        self.position(timestamp).map(|i| &self.entries[i])
    }

    pub fn get_mut(&mut self, timestamp: i64) -> Option<&mut ImputedObject> {
        self.position(timestamp).map(move |i| &mut self.entries[i])
    }

    fn position(&self, timestamp: i64) -> Option<usize> {
        self.entries.binary_search_by_key(&timestamp, |o| o.timestamp()).ok()
    }
}

/// One instance chosen per window object; probability is the product of the
/// chosen confidences.
#[derive(Debug, Clone)]
pub struct PossibleWorld {
    /// Chosen instance index, one per window entry in window order.
    pub choice: Vec<usize>,
    pub probability: f64,
}

/// Enumerate every possible world of a fully imputed window.
///
/// Exists as a test oracle; the product of instance counts must stay within
/// `cap` or the call fails with a combinatorial-blowup error.
pub fn enumerate_possible_worlds(window: &SlidingWindow, cap: u128) -> Result<Vec<PossibleWorld>> {
    let mut counts = Vec::with_capacity(window.len());
    for obj in window.iter() {
        if obj.state() != ImputationState::Instance {
            return Err(Error::State(format!(
                "object at t={} not at instance level",
                obj.timestamp()
            )));
        }
        counts.push(obj.instances().len());
    }
    let mut total: u128 = 1;
    for &c in &counts {
        total = total.saturating_mul(c as u128);
        if total > cap {
            return Err(Error::WorldCap { worlds: total, cap });
        }
    }

    let objects: Vec<&ImputedObject> = window.iter().collect();
    let mut worlds = Vec::with_capacity(total as usize);
    let mut choice = vec![0usize; objects.len()];
    loop {
        let probability = objects
            .iter()
            .zip(&choice)
            .map(|(o, &i)| o.instances()[i].confidence)
            .product();
        worlds.push(PossibleWorld { choice: choice.clone(), probability });
        // Odometer increment over the instance counts.
        let mut axis = objects.len();
        loop {
            if axis == 0 {
                return Ok(worlds);
            }
            axis -= 1;
            choice[axis] += 1;
            if choice[axis] < counts[axis] {
                break;
            }
            choice[axis] = 0;
        }
    }
}

/// Live set of joined pairs keyed by `(left timestamp, right timestamp)`,
/// with per-endpoint indexes so expiry removal costs the endpoint's degree
/// rather than a scan of the whole set.
#[derive(Debug, Clone, Default)]
pub struct JoinSet {
    pairs: HashMap<(i64, i64), f64>,
    by_left: HashMap<i64, Vec<i64>>,
    by_right: HashMap<i64, Vec<i64>>,
}

impl JoinSet {
    pub fn new() -> Self {
        JoinSet::default()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn insert(&mut self, left_ts: i64, right_ts: i64, probability: f64) {
        if self.pairs.insert((left_ts, right_ts), probability).is_none() {
            self.by_left.entry(left_ts).or_default().push(right_ts);
            self.by_right.entry(right_ts).or_default().push(left_ts);
        }
    }

    pub fn get(&self, left_ts: i64, right_ts: i64) -> Option<f64> {
        self.pairs.get(&(left_ts, right_ts)).copied()
    }

    pub fn contains(&self, left_ts: i64, right_ts: i64) -> bool {
        self.pairs.contains_key(&(left_ts, right_ts))
    }

    pub fn iter(&self) -> impl Iterator<Item = ((i64, i64), f64)> + '_ {
        self.pairs.iter().map(|(&k, &v)| (k, v))
    }

    /// Drop every pair with the given endpoint; returns the removed pairs.
    pub fn remove_endpoint(&mut self, id: ObjectId) -> Vec<((i64, i64), f64)> {
        let partners = match id.stream {
            StreamId::Left => self.by_left.remove(&id.timestamp),
            StreamId::Right => self.by_right.remove(&id.timestamp),
        };
        let Some(partners) = partners else { return Vec::new() };
        let mut removed = Vec::with_capacity(partners.len());
        for partner in partners {
            let key = match id.stream {
                StreamId::Left => (id.timestamp, partner),
                StreamId::Right => (partner, id.timestamp),
            };
            if let Some(p) = self.pairs.remove(&key) {
                removed.push((key, p));
                let reverse = match id.stream {
                    StreamId::Left => self.by_right.get_mut(&partner),
                    StreamId::Right => self.by_left.get_mut(&partner),
                };
                if let Some(list) = reverse {
                    list.retain(|&ts| ts != id.timestamp);
                    if list.is_empty() {
                        match id.stream {
                            StreamId::Left => self.by_right.remove(&partner),
                            StreamId::Right => self.by_left.remove(&partner),
                        };
                    }
                }
            }
        }
        removed.sort_by_key(|(k, _)| *k);
        removed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(ts: i64, values: &[f64]) -> ImputedObject {
        let source =
            IncompleteObject::new(StreamId::Left, ts, values.iter().map(|&v| Some(v)).collect())
                .unwrap();
        ImputedObject::complete(source).unwrap()
    }

    fn probabilistic_obj(ts: i64, confidences: &[f64]) -> ImputedObject {
        let source = IncompleteObject::new(StreamId::Left, ts, vec![Some(0.5), None]).unwrap();
        let mut imputed = ImputedObject::range_state(source);
        let candidates: Vec<CandidateValue> = confidences
            .iter()
            .enumerate()
            .map(|(i, &confidence)| CandidateValue {
                value: i as f64 / confidences.len() as f64,
                confidence,
            })
            .collect();
        imputed.upgrade_to_instance(vec![(1, candidates)]).unwrap();
        imputed
    }

    #[test]
    fn slide_evicts_oldest_when_full() {
        let mut window = SlidingWindow::new(3).unwrap();
        for t in 1..=3 {
            assert!(window.slide(obj(t, &[0.1])).unwrap().is_none());
        }
        let expired = window.slide(obj(4, &[0.1])).unwrap().unwrap();
        assert_eq!(expired.timestamp(), 1);
        let timestamps: Vec<i64> = window.iter().map(|o| o.timestamp()).collect();
        assert_eq!(timestamps, vec![2, 3, 4]);
    }

    #[test]
    fn slide_under_capacity_returns_none() {
        let mut window = SlidingWindow::new(3).unwrap();
        assert!(window.slide(obj(1, &[0.2])).unwrap().is_none());
        assert_eq!(window.len(), 1);
    }

    #[test]
    fn slide_rejects_duplicate_timestamp() {
        let mut window = SlidingWindow::new(3).unwrap();
        window.slide(obj(5, &[0.2])).unwrap();
        let err = window.slide(obj(5, &[0.3])).unwrap_err();
        assert!(matches!(err, Error::Ordering(_)));
    }

    #[test]
    fn repeated_slides_keep_exact_suffix() {
        let w = 4;
        let mut window = SlidingWindow::new(w).unwrap();
        for t in 1..=25i64 {
            window.slide(obj(t, &[0.5])).unwrap();
            let got: Vec<i64> = window.iter().map(|o| o.timestamp()).collect();
            let expect: Vec<i64> = ((t - w as i64 + 1).max(1)..=t).collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn worlds_of_two_object_window() {
        let mut window = SlidingWindow::new(3).unwrap();
        window.slide(probabilistic_obj(1, &[0.5, 0.5])).unwrap();
        window.slide(probabilistic_obj(2, &[1.0])).unwrap();
        let worlds = enumerate_possible_worlds(&window, DEFAULT_WORLD_CAP).unwrap();
        assert_eq!(worlds.len(), 2);
        for world in &worlds {
            assert!((world.probability - 0.5).abs() < CONFIDENCE_TOLERANCE);
        }
    }

    #[test]
    fn worlds_uniform_product() {
        let mut window = SlidingWindow::new(3).unwrap();
        window.slide(probabilistic_obj(1, &[0.5, 0.5])).unwrap();
        window.slide(probabilistic_obj(2, &[0.5, 0.5])).unwrap();
        let worlds = enumerate_possible_worlds(&window, DEFAULT_WORLD_CAP).unwrap();
        assert_eq!(worlds.len(), 4);
        for world in &worlds {
            assert!((world.probability - 0.25).abs() < CONFIDENCE_TOLERANCE);
        }
    }

    #[test]
    fn worlds_nonuniform_product() {
        let mut window = SlidingWindow::new(3).unwrap();
        window.slide(probabilistic_obj(1, &[0.3, 0.7])).unwrap();
        window.slide(probabilistic_obj(2, &[0.6, 0.4])).unwrap();
        let worlds = enumerate_possible_worlds(&window, DEFAULT_WORLD_CAP).unwrap();
        let mut probs: Vec<f64> = worlds.iter().map(|w| w.probability).collect();
        probs.sort_by(f64::total_cmp);
        let mut expect = [0.18, 0.12, 0.42, 0.28];
        expect.sort_by(f64::total_cmp);
        for (got, want) in probs.iter().zip(expect) {
            assert!((got - want).abs() < CONFIDENCE_TOLERANCE);
        }
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < CONFIDENCE_TOLERANCE);
    }

    #[test]
    fn worlds_cap_is_enforced() {
        let mut window = SlidingWindow::new(8).unwrap();
        for t in 1..=8 {
            window.slide(probabilistic_obj(t, &[0.25; 4])).unwrap();
        }
        let err = enumerate_possible_worlds(&window, 1000).unwrap_err();
        assert!(matches!(err, Error::WorldCap { .. }));
    }

    #[test]
    fn world_probabilities_sum_to_one() {
        let mut window = SlidingWindow::new(5).unwrap();
        window.slide(probabilistic_obj(1, &[0.2, 0.3, 0.5])).unwrap();
        window.slide(probabilistic_obj(2, &[0.9, 0.1])).unwrap();
        window.slide(probabilistic_obj(3, &[0.6, 0.25, 0.15])).unwrap();
        let worlds = enumerate_possible_worlds(&window, DEFAULT_WORLD_CAP).unwrap();
        assert_eq!(worlds.len(), 18);
        let sum: f64 = worlds.iter().map(|w| w.probability).sum();
        assert!((sum - 1.0).abs() < CONFIDENCE_TOLERANCE);
    }

    #[test]
    fn candidate_cap_merges_then_truncates() {
        // Three distinct values, one duplicated; cap 2 keeps the heaviest two.
        let raw = [(0.2, 1.0), (0.2, 1.0), (0.6, 1.0), (0.9, 1.0)];
        let candidates = build_candidates(&raw, 2);
        assert_eq!(candidates.len(), 2);
        assert!((candidates[0].value - 0.2).abs() < 1e-12);
        // 0.2 carried weight 2 out of the kept total 3.
        assert!((candidates[0].confidence - 2.0 / 3.0).abs() < CONFIDENCE_TOLERANCE);
        let sum: f64 = candidates.iter().map(|c| c.confidence).sum();
        assert!((sum - 1.0).abs() < CONFIDENCE_TOLERANCE);
    }

    #[test]
    fn instance_confidences_are_candidate_products() {
        let source = IncompleteObject::new(StreamId::Right, 7, vec![Some(0.5), None, None]).unwrap();
        let mut imputed = ImputedObject::range_state(source);
        let a = vec![
            CandidateValue { value: 0.1, confidence: 0.25 },
            CandidateValue { value: 0.4, confidence: 0.75 },
        ];
        let b = vec![
            CandidateValue { value: 0.2, confidence: 0.6 },
            CandidateValue { value: 0.8, confidence: 0.4 },
        ];
        imputed.upgrade_to_instance(vec![(1, a.clone()), (2, b.clone())]).unwrap();
        assert_eq!(imputed.instances().len(), 4);
        for inst in imputed.instances() {
            let ca = a.iter().find(|c| c.value == inst.values[1]).unwrap();
            let cb = b.iter().find(|c| c.value == inst.values[2]).unwrap();
            assert!(
                (inst.confidence - ca.confidence * cb.confidence).abs() < CONFIDENCE_TOLERANCE
            );
        }
        let sum: f64 = imputed.instances().iter().map(|i| i.confidence).sum();
        assert!((sum - 1.0).abs() < CONFIDENCE_TOLERANCE);
        assert!(imputed.mbr().contains_point(&[0.5, 0.1, 0.2]));
        assert_eq!(imputed.mbr().interval(0), (0.5, 0.5));
        assert_eq!(imputed.mbr().interval(1), (0.1, 0.4));
    }

    #[test]
    fn state_transitions_never_grow_the_box() {
        let source = IncompleteObject::new(StreamId::Left, 1, vec![Some(0.3), None]).unwrap();
        let mut imputed = ImputedObject::range_state(source);
        assert_eq!(imputed.state(), ImputationState::Range);
        assert_eq!(imputed.mbr().interval(1), (0.0, 1.0));

        imputed.upgrade_to_node(&[(1, (0.2, 0.7))], vec![3, 4]).unwrap();
        assert_eq!(imputed.state(), ImputationState::Node);
        assert_eq!(imputed.mbr().interval(1), (0.2, 0.7));
        assert_eq!(imputed.node_refs(), &[3, 4]);

        let out_of_node_box = vec![(1, vec![CandidateValue { value: 0.9, confidence: 1.0 }])];
        assert!(matches!(
            imputed.clone().upgrade_to_instance(out_of_node_box),
            Err(Error::Containment(_))
        ));

        imputed
            .upgrade_to_instance(vec![(
                1,
                vec![
                    CandidateValue { value: 0.3, confidence: 0.5 },
                    CandidateValue { value: 0.6, confidence: 0.5 },
                ],
            )])
            .unwrap();
        assert_eq!(imputed.state(), ImputationState::Instance);
        assert_eq!(imputed.mbr().interval(1), (0.3, 0.6));
    }

    #[test]
    fn join_set_removes_pairs_by_endpoint() {
        let mut js = JoinSet::new();
        js.insert(1, 10, 0.9);
        js.insert(1, 11, 0.8);
        js.insert(2, 10, 0.7);
        let removed = js.remove_endpoint(ObjectId { stream: StreamId::Left, timestamp: 1 });
        assert_eq!(removed.len(), 2);
        assert_eq!(js.len(), 1);
        assert!(js.contains(2, 10));
        let removed = js.remove_endpoint(ObjectId { stream: StreamId::Right, timestamp: 10 });
        assert_eq!(removed.len(), 1);
        assert!(js.is_empty());
    }
}
