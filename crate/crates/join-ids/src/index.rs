//! Imputation indexes over the complete repository.
//!
//! One index exists per possibly-missing attribute. Repository rows are
//! packed into clusters with sort-tile-recursive bulk loading over the
//! determinant attributes, a candidate clustering is chosen by a query-range
//! intersection score over sampled rule queries, and the clusters become the
//! leaves of a spatial tree. Every node carries a tight bounding box over the
//! determinant attributes and an equi-depth histogram over the dependent
//! attribute, which later feeds sub-box selection for sample-level pruning.

use crate::dd::QueryRange;
use crate::error::{Error, Result};
use crate::model::{AttributeSchema, Mbr};

/// Static collection of complete, normalized rows.
#[derive(Debug, Clone)]
pub struct Repository {
    schema: AttributeSchema,
    rows: Vec<Vec<f64>>,
}

impl Repository {
    pub fn new(schema: AttributeSchema, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Schema(format!(
                    "repository row {i} has {} values, schema has {}",
                    row.len(),
                    schema.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() || !(0.0..=1.0).contains(v) {
                    return Err(Error::Schema(format!(
                        "repository row {i} attribute {j} value {v} outside [0,1]"
                    )));
                }
            }
        }
        Ok(Repository { schema, rows })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn centroid(&self) -> Vec<f64> {
        let d = self.schema.len();
        let mut c = vec![0.0; d];
        for row in &self.rows {
            for j in 0..d {
                c[j] += row[j];
            }
        }
        let n = self.rows.len().max(1) as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }
}

/// Contiguous run of rows packed together; becomes one tree leaf.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub rows: Vec<usize>,
    /// Bounding box over the key attributes, axis order matching `key_attrs`.
    pub bbox: Mbr,
}

/// One candidate partitioning of the repository into clusters.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub key_attrs: Vec<usize>,
    pub clusters: Vec<Cluster>,
    pub capacity: usize,
}

impl Clustering {
    /// Sort-tile-recursive packing of the repository's key-attribute
    /// projection into clusters of at most `capacity` rows (and at least
    /// `capacity / 4` except when fewer rows exist overall).
    pub fn str_packing(repo: &Repository, key_attrs: &[usize], capacity: usize) -> Result<Self> {
        if capacity < 2 {
            return Err(Error::Config("cluster capacity must be at least 2".into()));
        }
        if key_attrs.is_empty() {
            return Err(Error::Config("clustering needs at least one key attribute".into()));
        }
        let mut ids: Vec<usize> = (0..repo.len()).collect();
        let mut groups = Vec::new();
        str_recurse(repo, key_attrs, &mut ids, 0, capacity, &mut groups);

        let clusters = groups
            .into_iter()
            .map(|rows| {
                let bbox = project_bbox(repo, key_attrs, &rows).expect("nonempty cluster");
                Cluster { rows, bbox }
            })
            .collect();
        Ok(Clustering { key_attrs: key_attrs.to_vec(), clusters, capacity })
    }
}

fn str_recurse(
    repo: &Repository,
    key_attrs: &[usize],
    ids: &mut [usize],
    depth: usize,
    capacity: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if ids.is_empty() {
        return;
    }
    let attr = key_attrs[depth];
    ids.sort_by(|&a, &b| repo.row(a)[attr].total_cmp(&repo.row(b)[attr]).then(a.cmp(&b)));
    if depth + 1 == key_attrs.len() {
        let chunks = ids.len().div_ceil(capacity);
        for chunk in balanced_parts(ids, chunks) {
            out.push(chunk.to_vec());
        }
        return;
    }
    let leaves = ids.len().div_ceil(capacity);
    let remaining_dims = (key_attrs.len() - depth) as f64;
    let slabs = (leaves as f64).powf(1.0 / remaining_dims).ceil() as usize;
    let slabs = slabs.clamp(1, ids.len());
    let mut rest = ids;
    for size in balanced_sizes(rest.len(), slabs) {
        let (slab, tail) = rest.split_at_mut(size);
        str_recurse(repo, key_attrs, slab, depth + 1, capacity, out);
        rest = tail;
    }
}

/// Sizes of `parts` contiguous chunks covering `len` items, differing by at
/// most one so no chunk ends up as a tiny tail.
fn balanced_sizes(len: usize, parts: usize) -> Vec<usize> {
    let parts = parts.clamp(1, len.max(1));
    let base = len / parts;
    let extra = len % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

fn balanced_parts<T>(items: &[T], parts: usize) -> Vec<&[T]> {
    let mut out = Vec::with_capacity(parts);
    let mut rest = items;
    for size in balanced_sizes(items.len(), parts) {
        let (chunk, tail) = rest.split_at(size);
        out.push(chunk);
        rest = tail;
    }
    out
}

fn project_bbox(repo: &Repository, key_attrs: &[usize], rows: &[usize]) -> Option<Mbr> {
    let first = *rows.first()?;
    let mut lo: Vec<f64> = key_attrs.iter().map(|&a| repo.row(first)[a]).collect();
    let mut hi = lo.clone();
    for &id in &rows[1..] {
        for (k, &a) in key_attrs.iter().enumerate() {
            let v = repo.row(id)[a];
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    Some(Mbr::new(lo, hi).expect("projection box is well formed"))
}

/// Pick the clustering maximizing the summed intersection ratio over the
/// sample queries: for every query and every intersecting cluster, the
/// fraction of the cluster's rows inside the query contributes to the score.
/// Ties break toward fewer clusters.
pub fn select_clusters(
    repo: &Repository,
    candidates: Vec<Clustering>,
    sample_queries: &[QueryRange],
) -> Result<Clustering> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidate clustering supplied".into()));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, clustering) in candidates.iter().enumerate() {
        let mut score = 0.0;
        for query in sample_queries {
            for cluster in &clustering.clusters {
                if !query.intersects_keyed_box(&cluster.bbox, &clustering.key_attrs) {
                    continue;
                }
                let inside = cluster
                    .rows
                    .iter()
                    .filter(|&&id| query.contains_row(repo.row(id)))
                    .count();
                score += inside as f64 / cluster.rows.len() as f64;
            }
        }
        let better = match best {
            None => true,
            Some((best_score, best_len, _)) => {
                score > best_score + 1e-12
                    || ((score - best_score).abs() <= 1e-12
                        && clustering.clusters.len() < best_len)
            }
        };
        if better {
            best = Some((score, clustering.clusters.len(), i));
        }
    }
    let (_, _, idx) = best.unwrap();
    Ok(candidates.into_iter().nth(idx).unwrap())
}

/// One histogram bucket: a closed value interval and the row mass inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBucket {
    pub lo: f64,
    pub hi: f64,
    pub count: f64,
}

/// Equi-depth histogram with consecutive bucket intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    buckets: Vec<HistogramBucket>,
}

impl Histogram {
    /// Build from `(value, weight)` pairs; buckets hold roughly equal mass.
    pub fn equi_depth(mut pairs: Vec<(f64, f64)>, lambda: usize) -> Result<Self> {
        if lambda < 1 {
            return Err(Error::Config("histogram needs at least one bucket".into()));
        }
        if pairs.is_empty() {
            return Err(Error::Config("histogram needs at least one value".into()));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|(_, w)| w).sum();
        let n = pairs.len();
        let mut buckets = Vec::with_capacity(lambda);
        let mut idx = 0;
        let mut cum = 0.0;
        let mut lo = pairs[0].0;
        for f in 1..=lambda {
            let target = total * f as f64 / lambda as f64;
            let mut count = 0.0;
            while idx < n && (f == lambda || cum < target - 1e-12) {
                cum += pairs[idx].1;
                count += pairs[idx].1;
                idx += 1;
            }
            let hi = if f == lambda {
                pairs[n - 1].0
            } else if idx == 0 {
                lo
            } else {
                pairs[idx - 1].0.max(lo)
            };
            buckets.push(HistogramBucket { lo, hi, count });
            lo = hi;
        }
        debug_assert_eq!(idx, n);
        Ok(Histogram { buckets })
    }

    pub fn buckets(&self) -> &[HistogramBucket] {
        &self.buckets
    }

    pub fn total(&self) -> f64 {
        self.buckets.iter().map(|b| b.count).sum()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.buckets[0].lo, self.buckets[self.buckets.len() - 1].hi)
    }

    /// Merge several histograms into one whose buckets are the union
    /// segments of all boundaries; bucket mass is apportioned assuming
    /// uniform spread within each source bucket.
    pub fn merge(parts: &[&Histogram]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Config("cannot merge zero histograms".into()));
        }
        let mut boundaries: Vec<f64> = parts
            .iter()
            .flat_map(|h| h.buckets.iter().flat_map(|b| [b.lo, b.hi]))
            .collect();
        boundaries.sort_by(f64::total_cmp);
        boundaries.dedup();
        if boundaries.len() == 1 {
            let count = parts.iter().map(|h| h.total()).sum();
            return Ok(Histogram {
                buckets: vec![HistogramBucket { lo: boundaries[0], hi: boundaries[0], count }],
            });
        }
        let mut buckets: Vec<HistogramBucket> = boundaries
            .windows(2)
            .map(|w| HistogramBucket { lo: w[0], hi: w[1], count: 0.0 })
            .collect();
        for hist in parts {
            for b in &hist.buckets {
                if b.hi > b.lo {
                    for seg in &mut buckets {
                        let overlap = (seg.hi.min(b.hi) - seg.lo.max(b.lo)).max(0.0);
                        seg.count += b.count * overlap / (b.hi - b.lo);
                    }
                } else {
                    // Point bucket: all mass goes to the first covering segment.
                    let seg = buckets
                        .iter_mut()
                        .find(|seg| seg.lo <= b.lo && b.lo <= seg.hi)
                        .expect("boundaries cover every bucket");
                    seg.count += b.count;
                }
            }
        }
        Ok(Histogram { buckets })
    }
}

/// Contiguous bucket run of a histogram: its mass fraction and the union of
/// its member intervals on the dependent attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct SubMbr {
    /// Inclusive bucket index range of the run.
    pub bucket_run: (usize, usize),
    /// Mass fraction of the run, `s.cnt / e.cnt`.
    pub beta: f64,
    /// Dependent-attribute interval covered by the run.
    pub interval: (f64, f64),
}

/// Select the sub-box pair used by sample-level pruning.
///
/// `s_x` is the shortest bucket prefix whose mass fraction exceeds
/// `1 - alpha`, greedily extended while adding the next bucket grows the
/// interval (as a fraction of the histogram span) by less than it grows the
/// mass. `s_y` is the first prefix whose mass fraction exceeds
/// `(1 - alpha) / beta_x`.
pub fn select_sub_mbr_pair(
    hist_x: &Histogram,
    hist_y: &Histogram,
    alpha: f64,
) -> Result<(SubMbr, SubMbr)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let s_x = select_sub_mbr(hist_x, 1.0 - alpha, true)?;
    let bound_y = (1.0 - alpha) / s_x.beta;
    let s_y = select_sub_mbr(hist_y, bound_y, false)?;
    Ok((s_x, s_y))
}

/// Shortest prefix bucket run whose mass fraction exceeds `bound`; with
/// `extend`, greedily grown while the interval grows slower than the mass.
pub fn select_sub_mbr(hist: &Histogram, bound: f64, extend: bool) -> Result<SubMbr> {
    let buckets = hist.buckets();
    if buckets.is_empty() {
        return Err(Error::Config("histogram has no buckets".into()));
    }
    let total = hist.total();
    if !(total > 0.0) {
        return Err(Error::Config("histogram has zero total mass".into()));
    }
    let (span_lo, span_hi) = hist.span();
    let span = (span_hi - span_lo).max(f64::MIN_POSITIVE);

    let mut end = buckets.len() - 1;
    let mut mass = 0.0;
    for (f, b) in buckets.iter().enumerate() {
        mass += b.count;
        if mass / total > bound {
            end = f;
            break;
        }
    }
    let mut beta = buckets[..=end].iter().map(|b| b.count).sum::<f64>() / total;

    if extend {
        while end + 1 < buckets.len() {
            let next = &buckets[end + 1];
            let delta_span = (next.hi - buckets[end].hi) / span;
            let delta_beta = next.count / total;
            // Unit-free form of delta_interval / delta_beta < 1.
            if delta_span < delta_beta {
                end += 1;
                beta += delta_beta;
            } else {
                break;
            }
        }
    }

    Ok(SubMbr {
        bucket_run: (0, end),
        beta,
        interval: (buckets[0].lo, buckets[end].hi),
    })
}

#[derive(Debug, Clone)]
pub enum NodePayload {
    Internal(Vec<usize>),
    Leaf(usize),
}

/// Tree node: bounding box over the key attributes, dependent-attribute
/// histogram aggregated from all descendant rows.
#[derive(Debug, Clone)]
pub struct IndexNode {
    pub bbox: Mbr,
    pub payload: NodePayload,
    pub histogram: Histogram,
    pub count: usize,
}

impl IndexNode {
    /// Dependent-attribute interval covered by this node's rows.
    pub fn dependent_interval(&self) -> (f64, f64) {
        self.histogram.span()
    }
}

/// Nodes touched by a query, with their aggregated dependent-attribute
/// summary; enough to bound an imputation result without reading any row.
#[derive(Debug, Clone)]
pub struct Frontier {
    pub node_ids: Vec<usize>,
    pub bbox: Option<Mbr>,
    pub histogram: Option<Histogram>,
    pub dependent_interval: Option<(f64, f64)>,
}

/// Row ids matching a range query plus the leaf frontier that was touched.
#[derive(Debug, Clone)]
pub struct RangeQueryResult {
    pub row_ids: Vec<usize>,
    pub frontier: Frontier,
}

/// Cluster-bulk-loaded spatial tree over the determinant attributes of one
/// dependent attribute, with per-node dependent-attribute histograms.
#[derive(Debug, Clone)]
pub struct ImputationIndex {
    dependent: usize,
    key_attrs: Vec<usize>,
    clusters: Vec<Cluster>,
    nodes: Vec<IndexNode>,
    root: usize,
    lambda: usize,
}

const TREE_FANOUT: usize = 8;

impl ImputationIndex {
    /// Build the index for dependent attribute `dependent` over key
    /// attributes `key_attrs` from a chosen clustering.
    pub fn build(
        repo: &Repository,
        key_attrs: &[usize],
        dependent: usize,
        lambda: usize,
        clustering: Clustering,
    ) -> Result<Self> {
        if lambda < 1 {
            return Err(Error::Config("bucket count must be at least 1".into()));
        }
        if repo.is_empty() {
            return Err(Error::Config("cannot index an empty repository".into()));
        }
        if key_attrs.is_empty() || key_attrs.contains(&dependent) {
            return Err(Error::Schema(
                "key attributes must be nonempty and exclude the dependent attribute".into(),
            ));
        }
        let clusters = clustering.clusters;
        let mut nodes: Vec<IndexNode> = Vec::new();
        let mut level: Vec<usize> = Vec::with_capacity(clusters.len());
        for (cid, cluster) in clusters.iter().enumerate() {
            let values: Vec<(f64, f64)> =
                cluster.rows.iter().map(|&id| (repo.row(id)[dependent], 1.0)).collect();
            nodes.push(IndexNode {
                bbox: cluster.bbox.clone(),
                payload: NodePayload::Leaf(cid),
                histogram: Histogram::equi_depth(values, lambda)?,
                count: cluster.rows.len(),
            });
            level.push(cid);
        }

        // Pack each level with STR over node-box centers until a single root
        // remains.
        while level.len() > 1 {
            let mut entries: Vec<(usize, Vec<f64>)> = level
                .iter()
                .map(|&nid| {
                    let b = &nodes[nid].bbox;
                    let center: Vec<f64> =
                        (0..b.dim()).map(|k| (b.lo(k) + b.hi(k)) / 2.0).collect();
                    (nid, center)
                })
                .collect();
            let mut groups: Vec<Vec<usize>> = Vec::new();
            str_group_nodes(&mut entries, 0, key_attrs.len(), TREE_FANOUT, &mut groups);
            let mut next_level = Vec::with_capacity(groups.len());
            for group in groups {
                let mut bbox = nodes[group[0]].bbox.clone();
                let mut count = 0;
                for &nid in &group {
                    bbox.expand(&nodes[nid].bbox);
                    count += nodes[nid].count;
                }
                let mut values = Vec::with_capacity(count);
                for &nid in &group {
                    collect_dependent_values(&nodes, &clusters, repo, dependent, nid, &mut values);
                }
                let histogram = Histogram::equi_depth(values, lambda)?;
                let id = nodes.len();
                nodes.push(IndexNode { bbox, payload: NodePayload::Internal(group), histogram, count });
                next_level.push(id);
            }
            level = next_level;
        }

        let root = level[0];
        Ok(ImputationIndex {
            dependent,
            key_attrs: key_attrs.to_vec(),
            clusters,
            nodes,
            root,
            lambda,
        })
    }

    pub fn dependent(&self) -> usize {
        self.dependent
    }

    pub fn key_attrs(&self) -> &[usize] {
        &self.key_attrs
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn nodes(&self) -> &[IndexNode] {
        &self.nodes
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Descend to the leaf nodes intersecting `range` without scanning any
    /// cluster member row.
    pub fn frontier_query(&self, range: &QueryRange) -> Frontier {
        let mut node_ids = Vec::new();
        let mut stack = vec![self.root];
        while let Some(nid) = stack.pop() {
            let node = &self.nodes[nid];
            if !range.intersects_keyed_box(&node.bbox, &self.key_attrs) {
                continue;
            }
            match &node.payload {
                NodePayload::Internal(children) => stack.extend(children),
                NodePayload::Leaf(_) => node_ids.push(nid),
            }
        }
        node_ids.sort_unstable();
        self.frontier_summary(node_ids)
    }

    fn frontier_summary(&self, node_ids: Vec<usize>) -> Frontier {
        if node_ids.is_empty() {
            return Frontier { node_ids, bbox: None, histogram: None, dependent_interval: None };
        }
        let mut bbox = self.nodes[node_ids[0]].bbox.clone();
        for &nid in &node_ids[1..] {
            bbox.expand(&self.nodes[nid].bbox);
        }
        let hists: Vec<&Histogram> = node_ids.iter().map(|&nid| &self.nodes[nid].histogram).collect();
        let histogram = Histogram::merge(&hists).expect("frontier is nonempty");
        let dependent_interval = node_ids
            .iter()
            .map(|&nid| self.nodes[nid].dependent_interval())
            .reduce(|(alo, ahi), (blo, bhi)| (alo.min(blo), ahi.max(bhi)));
        Frontier { node_ids, bbox: Some(bbox), histogram: Some(histogram), dependent_interval }
    }

    /// Exact count of rows inside an interval conjunction. Nodes fully
    /// inside every constrained interval contribute their count without a
    /// row scan; only boundary clusters are scanned.
    pub fn count_in_box(&self, repo: &Repository, range: &QueryRange) -> usize {
        let mut constrained: Vec<(usize, f64, f64)> = Vec::new();
        for &(attr, lo, hi) in range.intervals() {
            match self.key_attrs.iter().position(|&k| k == attr) {
                Some(axis) => constrained.push((axis, lo, hi)),
                // An attribute outside the key set leaves node boxes
                // unbounded there; fall back to a full scan for it.
                None => return repo
                    .rows()
                    .iter()
                    .filter(|row| range.contains_row(row))
                    .count(),
            }
        }
        let mut count = 0;
        let mut stack = vec![self.root];
        while let Some(nid) = stack.pop() {
            let node = &self.nodes[nid];
            let disjoint = constrained
                .iter()
                .any(|&(axis, lo, hi)| node.bbox.hi(axis) < lo || hi < node.bbox.lo(axis));
            if disjoint {
                continue;
            }
            let inside = constrained
                .iter()
                .all(|&(axis, lo, hi)| lo <= node.bbox.lo(axis) && node.bbox.hi(axis) <= hi);
            if inside {
                count += node.count;
                continue;
            }
            match &node.payload {
                NodePayload::Internal(children) => stack.extend(children),
                NodePayload::Leaf(cid) => {
                    count += self.clusters[*cid]
                        .rows
                        .iter()
                        .filter(|&&rid| range.contains_row(repo.row(rid)))
                        .count();
                }
            }
        }
        count
    }

    /// Early-exit check that at least one row matches `range`.
    pub fn has_match(&self, repo: &Repository, range: &QueryRange) -> bool {
        let mut stack = vec![self.root];
        while let Some(nid) = stack.pop() {
            let node = &self.nodes[nid];
            if !range.intersects_keyed_box(&node.bbox, &self.key_attrs) {
                continue;
            }
            match &node.payload {
                NodePayload::Internal(children) => stack.extend(children),
                NodePayload::Leaf(cid) => {
                    if self.clusters[*cid]
                        .rows
                        .iter()
                        .any(|&rid| range.contains_row(repo.row(rid)))
                    {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Rows whose constrained attributes fall inside `range`, plus the leaf
    /// frontier touched on the way down.
    pub fn range_query(&self, repo: &Repository, range: &QueryRange) -> RangeQueryResult {
        let frontier = self.frontier_query(range);
        let mut row_ids = Vec::new();
        for &nid in &frontier.node_ids {
            let NodePayload::Leaf(cid) = self.nodes[nid].payload else {
                unreachable!("frontier nodes are leaves");
            };
            for &rid in &self.clusters[cid].rows {
                if range.contains_row(repo.row(rid)) {
                    row_ids.push(rid);
                }
            }
        }
        row_ids.sort_unstable();
        RangeQueryResult { row_ids, frontier }
    }
}

fn str_group_nodes(
    entries: &mut [(usize, Vec<f64>)],
    depth: usize,
    dims: usize,
    capacity: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if entries.is_empty() {
        return;
    }
    entries.sort_by(|a, b| a.1[depth].total_cmp(&b.1[depth]).then(a.0.cmp(&b.0)));
    if depth + 1 == dims {
        let chunks = entries.len().div_ceil(capacity);
        for chunk in balanced_parts(entries, chunks) {
            out.push(chunk.iter().map(|(id, _)| *id).collect());
        }
        return;
    }
    let groups = entries.len().div_ceil(capacity);
    let remaining = (dims - depth) as f64;
    let slabs = (groups as f64).powf(1.0 / remaining).ceil() as usize;
    let slabs = slabs.clamp(1, entries.len());
    let mut rest = entries;
    for size in balanced_sizes(rest.len(), slabs) {
        let (slab, tail) = rest.split_at_mut(size);
        str_group_nodes(slab, depth + 1, dims, capacity, out);
        rest = tail;
    }
}

fn collect_dependent_values(
    nodes: &[IndexNode],
    clusters: &[Cluster],
    repo: &Repository,
    dependent: usize,
    nid: usize,
    out: &mut Vec<(f64, f64)>,
) {
    match &nodes[nid].payload {
        NodePayload::Leaf(cid) => {
            out.extend(clusters[*cid].rows.iter().map(|&rid| (repo.row(rid)[dependent], 1.0)));
        }
        NodePayload::Internal(children) => {
            for &child in children {
                collect_dependent_values(nodes, clusters, repo, dependent, child, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn schema(names: &[&str]) -> AttributeSchema {
        AttributeSchema::new(names.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn small_repo() -> Repository {
        // 8 rows over (A, B, C); C is the dependent attribute.
        let rows = vec![
            vec![0.10, 0.15, 0.05],
            vec![0.20, 0.25, 0.15],
            vec![0.30, 0.35, 0.25],
            vec![0.40, 0.45, 0.35],
            vec![0.60, 0.55, 0.55],
            vec![0.70, 0.65, 0.65],
            vec![0.80, 0.75, 0.75],
            vec![0.90, 0.85, 0.95],
        ];
        Repository::new(schema(&["A", "B", "C"]), rows).unwrap()
    }

    fn build_small_index(lambda: usize) -> (Repository, ImputationIndex) {
        let repo = small_repo();
        let clustering = Clustering::str_packing(&repo, &[0, 1], 8).unwrap();
        let index = ImputationIndex::build(&repo, &[0, 1], 2, lambda, clustering).unwrap();
        (repo, index)
    }

    #[test]
    fn equi_depth_buckets_on_eight_rows() {
        let (_, index) = build_small_index(4);
        let root = &index.nodes()[index.root()];
        assert_eq!(root.count, 8);
        let buckets = root.histogram.buckets();
        assert_eq!(buckets.len(), 4);
        for b in buckets {
            assert_eq!(b.count, 2.0);
        }
        assert_eq!(root.histogram.span(), (0.05, 0.95));
    }

    #[test]
    fn single_bucket_histogram_spans_everything() {
        let (_, index) = build_small_index(1);
        let root = &index.nodes()[index.root()];
        let buckets = root.histogram.buckets();
        assert_eq!(buckets.len(), 1);
        assert_eq!(buckets[0].count, 8.0);
        assert_eq!((buckets[0].lo, buckets[0].hi), (0.05, 0.95));
    }

    #[test]
    fn zero_lambda_is_rejected() {
        let repo = small_repo();
        let clustering = Clustering::str_packing(&repo, &[0, 1], 8).unwrap();
        assert!(matches!(
            ImputationIndex::build(&repo, &[0, 1], 2, 0, clustering),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tree_keyed_on_determinants_histograms_on_dependent() {
        // Two rules A -> C and B -> C give key attributes (A, B).
        let (_, index) = build_small_index(4);
        assert_eq!(index.key_attrs(), &[0, 1]);
        assert_eq!(index.dependent(), 2);
        let root = &index.nodes()[index.root()];
        assert_eq!(root.bbox.dim(), 2);
        assert_eq!(root.bbox.interval(0), (0.10, 0.90));
        assert_eq!(root.bbox.interval(1), (0.15, 0.85));
    }

    #[test]
    fn range_query_whole_domain_returns_everything() {
        let (repo, index) = build_small_index(4);
        let range = QueryRange::new(vec![(0, 0.0, 1.0), (1, 0.0, 1.0)]);
        let result = index.range_query(&repo, &range);
        assert_eq!(result.row_ids, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn range_query_disjoint_from_root_is_empty() {
        let (repo, index) = build_small_index(4);
        let range = QueryRange::new(vec![(0, 0.95, 0.99)]);
        let result = index.range_query(&repo, &range);
        assert!(result.row_ids.is_empty());
        assert!(result.frontier.node_ids.is_empty());
        assert!(result.frontier.histogram.is_none());
    }

    #[test]
    fn range_query_matches_linear_scan_on_fixture() {
        let (repo, index) = build_small_index(4);
        let range = QueryRange::new(vec![(0, 0.25, 0.65), (1, 0.30, 0.60)]);
        let result = index.range_query(&repo, &range);
        let expect: Vec<usize> =
            (0..repo.len()).filter(|&i| range.contains_row(repo.row(i))).collect();
        assert_eq!(result.row_ids, expect);
        assert_eq!(result.row_ids.len(), 3);
    }

    #[test]
    fn range_query_matches_linear_scan_randomized() {
        let mut rng = StdRng::seed_from_u64(99);
        let rows: Vec<Vec<f64>> =
            (0..600).map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let repo = Repository::new(schema(&["A", "B", "C"]), rows).unwrap();
        let clustering = Clustering::str_packing(&repo, &[0, 1], 16).unwrap();
        let index = ImputationIndex::build(&repo, &[0, 1], 2, 5, clustering).unwrap();
        for _ in 0..300 {
            let mut intervals = Vec::new();
            for attr in [0usize, 1] {
                if rng.gen_bool(0.8) {
                    let c: f64 = rng.gen_range(0.0..1.0);
                    let h: f64 = rng.gen_range(0.01..0.4);
                    intervals.push((attr, c - h, c + h));
                }
            }
            if intervals.is_empty() {
                intervals.push((0, 0.2, 0.8));
            }
            let range = QueryRange::new(intervals);
            let got = index.range_query(&repo, &range).row_ids;
            let expect: Vec<usize> =
                (0..repo.len()).filter(|&i| range.contains_row(repo.row(i))).collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn node_histogram_invariants_hold_everywhere() {
        let mut rng = StdRng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> =
            (0..500).map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let repo = Repository::new(schema(&["A", "B", "C"]), rows).unwrap();
        let clustering = Clustering::str_packing(&repo, &[0, 1], 16).unwrap();
        let index = ImputationIndex::build(&repo, &[0, 1], 2, 7, clustering).unwrap();
        for node in index.nodes() {
            assert!((node.histogram.total() - node.count as f64).abs() < 1e-9);
            let buckets = node.histogram.buckets();
            for w in buckets.windows(2) {
                assert_eq!(w[0].hi, w[1].lo, "bucket intervals must be consecutive");
            }
            // Interval union spans the node's dependent values exactly.
            let mut values = Vec::new();
            collect_node_rows(&index, &repo, node, &mut values);
            assert_eq!(values.len(), node.count);
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = node.histogram.span();
            assert_eq!((lo, hi), (min, max));
        }
    }

    fn collect_node_rows(
        index: &ImputationIndex,
        repo: &Repository,
        node: &IndexNode,
        out: &mut Vec<f64>,
    ) {
        match &node.payload {
            NodePayload::Leaf(cid) => {
                out.extend(
                    index.clusters()[*cid]
                        .rows
                        .iter()
                        .map(|&rid| repo.row(rid)[index.dependent()]),
                );
            }
            NodePayload::Internal(children) => {
                for &c in children {
                    collect_node_rows(index, repo, &index.nodes()[c], out);
                }
            }
        }
    }

    #[test]
    fn cluster_sizes_respect_bounds() {
        let mut rng = StdRng::seed_from_u64(17);
        let rows: Vec<Vec<f64>> =
            (0..1000).map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let repo = Repository::new(schema(&["A", "B", "C"]), rows).unwrap();
        for capacity in [16usize, 32, 64] {
            let clustering = Clustering::str_packing(&repo, &[0, 1], capacity).unwrap();
            let total: usize = clustering.clusters.iter().map(|c| c.rows.len()).sum();
            assert_eq!(total, repo.len());
            for cluster in &clustering.clusters {
                assert!(cluster.rows.len() <= capacity);
                assert!(cluster.rows.len() >= capacity / 4);
            }
        }
    }

    #[test]
    fn select_clusters_prefers_contained_queries() {
        // Two point groups far apart; candidate A separates them, candidate B
        // lumps everything into one cluster so queries only half-cover it.
        let mut rows = Vec::new();
        for i in 0..8 {
            rows.push(vec![0.1 + 0.001 * i as f64, 0.5]);
        }
        for i in 0..8 {
            rows.push(vec![0.9 - 0.001 * i as f64, 0.5]);
        }
        let repo = Repository::new(schema(&["A", "B"]), rows).unwrap();
        let separated = Clustering {
            key_attrs: vec![0],
            clusters: vec![
                Cluster {
                    rows: (0..8).collect(),
                    bbox: Mbr::new(vec![0.1], vec![0.107]).unwrap(),
                },
                Cluster {
                    rows: (8..16).collect(),
                    bbox: Mbr::new(vec![0.893], vec![0.9]).unwrap(),
                },
            ],
            capacity: 8,
        };
        let lumped = Clustering {
            key_attrs: vec![0],
            clusters: vec![Cluster {
                rows: (0..16).collect(),
                bbox: Mbr::new(vec![0.1], vec![0.9]).unwrap(),
            }],
            capacity: 16,
        };
        let queries = vec![
            QueryRange::new(vec![(0, 0.05, 0.15)]),
            QueryRange::new(vec![(0, 0.85, 0.95)]),
        ];
        let chosen =
            select_clusters(&repo, vec![separated.clone(), lumped], &queries).unwrap();
        assert_eq!(chosen.clusters.len(), 2);

        // A query disjoint from all clusters contributes nothing: with only
        // such queries every candidate scores zero and the tie breaks toward
        // fewer clusters.
        let far = vec![QueryRange::new(vec![(0, 0.4, 0.45)])];
        let lumped2 = Clustering {
            key_attrs: vec![0],
            clusters: vec![Cluster {
                rows: (0..16).collect(),
                bbox: Mbr::new(vec![0.1], vec![0.9]).unwrap(),
            }],
            capacity: 16,
        };
        let chosen = select_clusters(&repo, vec![separated, lumped2], &far).unwrap();
        assert_eq!(chosen.clusters.len(), 1);
    }

    #[test]
    fn select_clusters_single_candidate_passes_through() {
        let repo = small_repo();
        let clustering = Clustering::str_packing(&repo, &[0, 1], 4).unwrap();
        let n = clustering.clusters.len();
        let chosen = select_clusters(&repo, vec![clustering], &[]).unwrap();
        assert_eq!(chosen.clusters.len(), n);
        assert!(matches!(
            select_clusters(&repo, vec![], &[]),
            Err(Error::Config(_))
        ));
    }

    fn hist(bounds: &[f64], counts: &[f64]) -> Histogram {
        let buckets = counts
            .iter()
            .enumerate()
            .map(|(i, &count)| HistogramBucket { lo: bounds[i], hi: bounds[i + 1], count })
            .collect();
        Histogram { buckets }
    }

    #[test]
    fn sub_mbr_prefix_stops_at_mass_bound() {
        // Narrow third bucket: the extension rule adds it.
        let h = hist(&[0.0, 0.4, 0.7, 0.75, 1.0], &[40.0, 30.0, 20.0, 10.0]);
        let (s_x, s_y) = select_sub_mbr_pair(&h, &h, 0.5).unwrap();
        // Prefix {40} has 0.4 <= 0.5, prefix {40,30} has 0.7 > 0.5.
        // Bucket 3: delta span 0.05 < delta beta 0.2, so extend; bucket 4:
        // delta span 0.25 >= delta beta 0.1, stop.
        assert_eq!(s_x.bucket_run, (0, 2));
        assert!((s_x.beta - 0.9).abs() < 1e-12);
        assert_eq!(s_x.interval, (0.0, 0.75));
        // (1 - alpha) / beta_x = 0.5 / 0.9 = 0.555..; prefix {40,30} = 0.7 works.
        assert_eq!(s_y.bucket_run, (0, 1));
        assert!((s_y.beta - 0.7).abs() < 1e-12);

        // Wide third bucket: the extension rule rejects it.
        let h = hist(&[0.0, 0.1, 0.2, 0.6, 1.0], &[40.0, 30.0, 20.0, 10.0]);
        let (s_x, _) = select_sub_mbr_pair(&h, &h, 0.5).unwrap();
        assert_eq!(s_x.bucket_run, (0, 1));
        assert!((s_x.beta - 0.7).abs() < 1e-12);
        assert_eq!(s_x.interval, (0.0, 0.2));
    }

    #[test]
    fn sub_mbr_threshold_collapse_takes_first_bucket() {
        let h = hist(&[0.0, 0.25, 0.5, 0.75, 1.0], &[25.0, 25.0, 25.0, 25.0]);
        let (s_x, _) = select_sub_mbr_pair(&h, &h, 0.99).unwrap();
        // 1 - alpha = 0.01; the first bucket's 25% mass already exceeds it,
        // and uniform buckets never extend (delta ratio equals 1 exactly).
        assert_eq!(s_x.bucket_run, (0, 0));
        assert!((s_x.beta - 0.25).abs() < 1e-12);
    }

    #[test]
    fn sub_mbr_uniform_never_extends() {
        let h = hist(&[0.0, 0.25, 0.5, 0.75, 1.0], &[25.0, 25.0, 25.0, 25.0]);
        let (s_x, s_y) = select_sub_mbr_pair(&h, &h, 0.5).unwrap();
        assert_eq!(s_x.bucket_run, (0, 2));
        assert!((s_x.beta - 0.75).abs() < 1e-12);
        // Applicability condition of the sample-level lemma.
        assert!(s_x.beta > 0.5);
        assert!(s_x.beta * s_y.beta > 0.5);
    }

    #[test]
    fn sub_mbr_always_satisfies_applicability() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..300 {
            let n = rng.gen_range(1..12);
            let mut bounds: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.0..1.0)).collect();
            bounds.sort_by(f64::total_cmp);
            let counts: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..50.0) + 0.01).collect();
            let h = hist(&bounds, &counts);
            let alpha = rng.gen_range(0.05..0.95);
            let (s_x, s_y) = select_sub_mbr_pair(&h, &h, alpha).unwrap();
            assert!(s_x.beta > 1.0 - alpha);
            assert!(s_x.beta * s_y.beta > 1.0 - alpha);
            assert!(s_x.beta <= 1.0 + 1e-12 && s_y.beta <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn merged_histogram_preserves_mass_and_span() {
        let a = hist(&[0.0, 0.2, 0.4], &[10.0, 10.0]);
        let b = hist(&[0.3, 0.5, 0.9], &[6.0, 6.0]);
        let merged = Histogram::merge(&[&a, &b]).unwrap();
        assert!((merged.total() - 32.0).abs() < 1e-9);
        assert_eq!(merged.span(), (0.0, 0.9));
        for w in merged.buckets().windows(2) {
            assert_eq!(w[0].hi, w[1].lo);
        }
    }
}
