//! Sparse grid synopsis over the two imputed streams.
//!
//! The data space is cut into cells of side epsilon per attribute. Each
//! populated cell holds one queue of object ids per stream: every object
//! appears in the queues of exactly the cells its current bounding box
//! intersects. Cell boxes are closed intervals, so a value sitting exactly on
//! a boundary belongs to both adjacent cells.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::model::{Mbr, ObjectId, StreamId};
use crate::prune::{exceeds_epsilon, mindist};

/// Integer cell coordinates: `coordinate_j = floor(value_j / epsilon)`.
pub type CellKey = Vec<i64>;

#[derive(Debug, Clone, Default)]
struct Cell {
    left: VecDeque<ObjectId>,
    right: VecDeque<ObjectId>,
}

impl Cell {
    fn queue(&self, stream: StreamId) -> &VecDeque<ObjectId> {
        match stream {
            StreamId::Left => &self.left,
            StreamId::Right => &self.right,
        }
    }

    fn queue_mut(&mut self, stream: StreamId) -> &mut VecDeque<ObjectId> {
        match stream {
            StreamId::Left => &mut self.left,
            StreamId::Right => &mut self.right,
        }
    }

    fn is_empty(&self) -> bool {
        self.left.is_empty() && self.right.is_empty()
    }
}

/// All cell keys whose closed box intersects `mbr`. A bound lying exactly on
/// a cell boundary pulls in the touching neighbor as well.
pub fn cells_for(mbr: &Mbr, epsilon: f64) -> Vec<CellKey> {
    let ranges: Vec<(i64, i64)> =
        (0..mbr.dim()).map(|j| axis_cell_range(mbr.lo(j), mbr.hi(j), epsilon)).collect();
    let mut keys = Vec::new();
    let mut key: CellKey = ranges.iter().map(|&(lo, _)| lo).collect();
    loop {
        keys.push(key.clone());
        let mut axis = ranges.len();
        loop {
            if axis == 0 {
                return keys;
            }
            axis -= 1;
            key[axis] += 1;
            if key[axis] <= ranges[axis].1 {
                break;
            }
            key[axis] = ranges[axis].0;
        }
    }
}

fn axis_cell_range(lo: f64, hi: f64, epsilon: f64) -> (i64, i64) {
    let lo_div = lo / epsilon;
    let lo_floor = lo_div.floor();
    // A bound exactly on a boundary touches the lower neighbor too.
    let c_min = if lo_div == lo_floor { lo_floor as i64 - 1 } else { lo_floor as i64 };
    let c_max = (hi / epsilon).floor() as i64;
    (c_min, c_max.max(c_min))
}

fn cell_count(ranges: &[(i64, i64)]) -> usize {
    ranges.iter().map(|&(lo, hi)| (hi - lo + 1) as usize).product()
}

/// Sparse mapping from populated cells to their per-stream queues.
#[derive(Debug, Clone)]
pub struct EpsilonGrid {
    epsilon: f64,
    dim: usize,
    cells: HashMap<CellKey, Cell>,
}

impl EpsilonGrid {
    pub fn new(dim: usize, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("cell side must be positive, got {epsilon}")));
        }
        if dim == 0 {
            return Err(Error::Config("grid needs at least one dimension".into()));
        }
        Ok(EpsilonGrid { epsilon, dim, cells: HashMap::new() })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// The closed box of one cell.
    pub fn cell_box(&self, key: &CellKey) -> Mbr {
        let lo: Vec<f64> = key.iter().map(|&c| c as f64 * self.epsilon).collect();
        let hi: Vec<f64> = key.iter().map(|&c| (c + 1) as f64 * self.epsilon).collect();
        Mbr::new(lo, hi).expect("cell box is well formed")
    }

    /// Append the object to the queue of every cell its box intersects.
    pub fn insert(&mut self, id: ObjectId, mbr: &Mbr) {
        debug_assert_eq!(mbr.dim(), self.dim);
        for key in cells_for(mbr, self.epsilon) {
            self.cells.entry(key).or_default().queue_mut(id.stream).push_back(id);
        }
    }

    /// Update cell membership after the object's box shrank: the object is
    /// removed from cells its new box no longer touches and never added
    /// anywhere new.
    pub fn reindex(&mut self, id: ObjectId, old_mbr: &Mbr, new_mbr: &Mbr) -> Result<()> {
        if !old_mbr.contains(new_mbr) {
            return Err(Error::Containment(
                "reindex requires the new box to lie inside the old one".into(),
            ));
        }
        let keep: std::collections::HashSet<CellKey> =
            cells_for(new_mbr, self.epsilon).into_iter().collect();
        for key in cells_for(old_mbr, self.epsilon) {
            if keep.contains(&key) {
                continue;
            }
            if let Some(cell) = self.cells.get_mut(&key) {
                cell.queue_mut(id.stream).retain(|&x| x != id);
                if cell.is_empty() {
                    self.cells.remove(&key);
                }
            }
        }
        Ok(())
    }

    /// Remove every reference to the object; empty cells disappear. Expiry
    /// goes oldest-first, so the object usually sits at the queue head.
    pub fn evict(&mut self, id: ObjectId, mbr: &Mbr) {
        for key in cells_for(mbr, self.epsilon) {
            if let Some(cell) = self.cells.get_mut(&key) {
                let queue = cell.queue_mut(id.stream);
                if queue.front() == Some(&id) {
                    queue.pop_front();
                } else {
                    queue.retain(|&x| x != id);
                }
                if cell.is_empty() {
                    self.cells.remove(&key);
                }
            }
        }
    }

    pub fn queue<'a>(&'a self, key: &CellKey, stream: StreamId) -> impl Iterator<Item = ObjectId> + 'a {
        self.cells.get(key).into_iter().flat_map(move |c| c.queue(stream).iter().copied())
    }

    /// Populated cells with a nonempty `stream` queue in the one-cell-per-axis
    /// neighborhood of `probe_mbr`, each with its exact minimum distance to
    /// the probe. Callers filter on the distance they care about.
    pub fn neighborhood(&self, probe_mbr: &Mbr, stream: StreamId) -> Vec<(CellKey, f64)> {
        let inflated = probe_mbr.inflated(self.epsilon);
        let ranges: Vec<(i64, i64)> = (0..inflated.dim())
            .map(|j| axis_cell_range(inflated.lo(j), inflated.hi(j), self.epsilon))
            .collect();

        let mut out = Vec::new();
        if cell_count(&ranges) <= self.cells.len() {
            for key in cells_for(&inflated, self.epsilon) {
                if let Some(cell) = self.cells.get(&key) {
                    if !cell.queue(stream).is_empty() {
                        let d = mindist(&self.cell_box(&key), probe_mbr)
                            .expect("grid and probe share dimensionality");
                        out.push((key, d));
                    }
                }
            }
        } else {
            // Sparser to walk the populated cells than the key product.
            for (key, cell) in &self.cells {
                if cell.queue(stream).is_empty() {
                    continue;
                }
                let in_window = key
                    .iter()
                    .zip(&ranges)
                    .all(|(&c, &(lo, hi))| lo <= c && c <= hi);
                if in_window {
                    let d = mindist(&self.cell_box(key), probe_mbr)
                        .expect("grid and probe share dimensionality");
                    out.push((key.clone(), d));
                }
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Cells a probe has to look at: nonempty `stream` queues whose cell box
    /// lies within epsilon of the probe box.
    pub fn candidate_cells(&self, probe_mbr: &Mbr, stream: StreamId) -> Vec<(CellKey, f64)> {
        self.neighborhood(probe_mbr, stream)
            .into_iter()
            .filter(|&(_, d)| !exceeds_epsilon(d, self.epsilon))
            .collect()
    }

    /// Every cell currently referencing the object. Linear scan; meant for
    /// integrity checks, not the hot path.
    pub fn referenced_cells(&self, id: ObjectId) -> Vec<CellKey> {
        let mut keys: Vec<CellKey> = self
            .cells
            .iter()
            .filter(|(_, cell)| cell.queue(id.stream).contains(&id))
            .map(|(key, _)| key.clone())
            .collect();
        keys.sort();
        keys
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(coords: &[i64]) -> CellKey {
        coords.to_vec()
    }

    fn id(stream: StreamId, ts: i64) -> ObjectId {
        ObjectId { stream, timestamp: ts }
    }

    fn boxed(lo: &[f64], hi: &[f64]) -> Mbr {
        Mbr::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    #[test]
    fn point_maps_to_single_cell() {
        let mbr = Mbr::from_point(&[0.35]);
        assert_eq!(cells_for(&mbr, 0.3), vec![key(&[1])]);
    }

    #[test]
    fn interval_cover_spans_touched_cells() {
        let mbr = boxed(&[0.25], &[0.65]);
        assert_eq!(cells_for(&mbr, 0.3), vec![key(&[0]), key(&[1]), key(&[2])]);
    }

    #[test]
    fn boundary_point_belongs_to_both_cells() {
        let mbr = boxed(&[0.3], &[0.3]);
        assert_eq!(cells_for(&mbr, 0.3), vec![key(&[0]), key(&[1])]);
    }

    #[test]
    fn insert_and_evict_round_trip() {
        let mut grid = EpsilonGrid::new(1, 0.3).unwrap();
        let obj = id(StreamId::Left, 1);
        let mbr = boxed(&[0.25], &[0.65]);
        grid.insert(obj, &mbr);
        assert_eq!(grid.cell_count(), 3);
        assert_eq!(grid.referenced_cells(obj).len(), 3);
        grid.evict(obj, &mbr);
        assert!(grid.is_empty());
    }

    #[test]
    fn reindex_shrink_drops_stale_cells() {
        let mut grid = EpsilonGrid::new(1, 0.3).unwrap();
        let obj = id(StreamId::Right, 4);
        let old = boxed(&[0.25], &[0.65]);
        let new = boxed(&[0.35], &[0.45]);
        grid.insert(obj, &old);
        grid.reindex(obj, &old, &new).unwrap();
        assert_eq!(grid.referenced_cells(obj), vec![key(&[1])]);
        assert_eq!(grid.cell_count(), 1);

        // No shrink: nothing changes.
        grid.reindex(obj, &new, &new).unwrap();
        assert_eq!(grid.referenced_cells(obj), vec![key(&[1])]);

        // Growth is rejected.
        assert!(matches!(
            grid.reindex(obj, &new, &old),
            Err(Error::Containment(_))
        ));
    }

    #[test]
    fn reindex_equal_cover_is_noop() {
        let mut grid = EpsilonGrid::new(2, 0.3).unwrap();
        let obj = id(StreamId::Left, 2);
        let old = boxed(&[0.31, 0.31], &[0.5, 0.5]);
        let new = boxed(&[0.32, 0.32], &[0.49, 0.49]);
        grid.insert(obj, &old);
        let before = grid.referenced_cells(obj);
        grid.reindex(obj, &old, &new).unwrap();
        assert_eq!(grid.referenced_cells(obj), before);
    }

    #[test]
    fn candidate_cells_isolated_probe_is_empty() {
        let mut grid = EpsilonGrid::new(2, 0.3).unwrap();
        grid.insert(id(StreamId::Right, 1), &Mbr::from_point(&[0.05, 0.05]));
        let probe = Mbr::from_point(&[0.95, 0.95]);
        assert!(grid.candidate_cells(&probe, StreamId::Right).is_empty());
    }

    #[test]
    fn candidate_cells_containment() {
        let mut grid = EpsilonGrid::new(2, 0.3).unwrap();
        grid.insert(id(StreamId::Right, 1), &Mbr::from_point(&[0.35, 0.35]));
        let probe = Mbr::from_point(&[0.4, 0.4]);
        let cells = grid.candidate_cells(&probe, StreamId::Right);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].0, key(&[1, 1]));
        assert_eq!(cells[0].1, 0.0);
        // The opposite stream's queues are empty there.
        assert!(grid.candidate_cells(&probe, StreamId::Left).is_empty());
    }

    #[test]
    fn diagonal_neighbor_needs_exact_mindist() {
        // Populated cell (0,0) covers [0,0.3]^2. A probe on the diagonal can
        // sit in the one-cell neighborhood yet farther than epsilon away.
        let mut grid = EpsilonGrid::new(2, 0.3).unwrap();
        grid.insert(id(StreamId::Right, 1), &Mbr::from_point(&[0.15, 0.15]));

        let near = Mbr::from_point(&[0.5, 0.5]);
        // Gap 0.2 per axis: sqrt(0.08) < 0.3 qualifies.
        let cells = grid.candidate_cells(&near, StreamId::Right);
        assert_eq!(cells.len(), 1);

        let far = Mbr::from_point(&[0.55, 0.55]);
        // Gap 0.25 per axis: sqrt(0.125) > 0.3, excluded despite being a
        // neighborhood cell.
        assert!(grid.candidate_cells(&far, StreamId::Right).is_empty());
        assert_eq!(grid.neighborhood(&far, StreamId::Right).len(), 1);
    }

    #[test]
    fn referential_completeness_under_random_ops() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(31);
        let mut grid = EpsilonGrid::new(3, 0.25).unwrap();
        let mut live: Vec<(ObjectId, Mbr)> = Vec::new();
        for step in 0..400 {
            let action: f64 = rng.gen();
            if action < 0.5 || live.is_empty() {
                let stream = if rng.gen_bool(0.5) { StreamId::Left } else { StreamId::Right };
                let obj = id(stream, step);
                let lo: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..0.8)).collect();
                let hi: Vec<f64> =
                    lo.iter().map(|&v| (v + rng.gen_range(0.0..0.2)).min(1.0)).collect();
                let mbr = Mbr::new(lo, hi).unwrap();
                grid.insert(obj, &mbr);
                live.push((obj, mbr));
            } else if action < 0.75 {
                let idx = rng.gen_range(0..live.len());
                let (obj, mbr) = live.remove(idx);
                grid.evict(obj, &mbr);
            } else {
                let idx = rng.gen_range(0..live.len());
                let (obj, old) = live[idx].clone();
                let shrink = rng.gen_range(0.0..0.5);
                let lo: Vec<f64> = (0..3)
                    .map(|j| old.lo(j) + (old.hi(j) - old.lo(j)) * shrink / 2.0)
                    .collect();
                let hi: Vec<f64> = (0..3)
                    .map(|j| old.hi(j) - (old.hi(j) - old.lo(j)) * shrink / 2.0)
                    .collect();
                let new = Mbr::new(lo, hi).unwrap();
                grid.reindex(obj, &old, &new).unwrap();
                live[idx] = (obj, new);
            }

            // Exactly the cells of the current box reference each object.
            for (obj, mbr) in &live {
                let mut expect = cells_for(mbr, 0.25);
                expect.sort();
                assert_eq!(grid.referenced_cells(*obj), expect);
            }
        }
        for (obj, mbr) in live.drain(..) {
            grid.evict(obj, &mbr);
        }
        assert!(grid.is_empty(), "stale cells remain after evicting everything");
    }

    #[test]
    fn candidate_cells_never_miss_a_partner() {
        use crate::prune::euclidean;
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(57);
        let eps = 0.2;
        for _ in 0..200 {
            let mut grid = EpsilonGrid::new(2, eps).unwrap();
            let mut points = Vec::new();
            for t in 0..30 {
                let p: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..1.0)).collect();
                grid.insert(id(StreamId::Right, t), &Mbr::from_point(&p));
                points.push((t, p));
            }
            let probe: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..1.0)).collect();
            let probe_mbr = Mbr::from_point(&probe);
            let cells = grid.candidate_cells(&probe_mbr, StreamId::Right);
            let reachable: std::collections::HashSet<i64> = cells
                .iter()
                .flat_map(|(key, _)| grid.queue(key, StreamId::Right))
                .map(|oid| oid.timestamp)
                .collect();
            for (t, p) in &points {
                if euclidean(&probe, p) <= eps {
                    assert!(
                        reachable.contains(t),
                        "true partner at {p:?} missed by the candidate cells"
                    );
                }
            }
        }
    }
}
