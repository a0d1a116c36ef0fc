//! Hierarchical tree index with 1-Lipschitz certification, instantiated as a
//! vantage-point tree.
//!
//! Every non-root node carries a certificate `(v, a, b)`: `v` is the parent's
//! vantage point and `[a, b]` bounds `d(v, x)` over the node's block. Because
//! `x ↦ d(v, x)` is 1-Lipschitz, a query centre with `d(v, centre)` outside
//! `(a - ε, b + ε)` cannot have an ε-neighbour in the block and the subtree is
//! skipped.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{validate_metric, Measure, MetricError, Point, Violation};
use crate::rng::{self, Rng};
use crate::scalar::{cmp, Scalar};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("measure violates the metric axioms: {0:?}")]
    NotAMetric(String),
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("k = {k} but only {available} points differ from the centre")]
    KTooLarge { k: usize, available: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("empty block")]
    EmptyBlock,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("index dump rejected: {0}")]
    Dump(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type Sampler<S> = Arc<dyn Fn(&mut Rng) -> Point<S> + Send + Sync>;

/// Query domain, measure, query distribution and dataset.
#[derive(Clone)]
pub struct Workload<S: Scalar> {
    measure: Measure<S>,
    dataset: Vec<Point<S>>,
    sampler: Option<Sampler<S>>,
}

impl<S: Scalar> Workload<S> {
    pub fn new(measure: Measure<S>, dataset: Vec<Point<S>>) -> Result<Self, IndexError> {
        if dataset.is_empty() {
            return Err(IndexError::EmptyDataset);
        }
        for x in &dataset {
            measure.check_point(x)?;
        }
        Ok(Workload { measure, dataset, sampler: None })
    }

    /// Attaches the query distribution.
    pub fn with_sampler(mut self, sampler: impl Fn(&mut Rng) -> Point<S> + Send + Sync + 'static) -> Self {
        self.sampler = Some(Arc::new(sampler));
        self
    }

    pub fn measure(&self) -> &Measure<S> {
        &self.measure
    }

    pub fn dataset(&self) -> &[Point<S>] {
        &self.dataset
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn sampler(&self) -> Option<&Sampler<S>> {
        self.sampler.as_ref()
    }

    /// `count` queries from the sampler; query `i` uses stream `i`.
    pub fn sample_queries(&self, count: usize, seed: u64) -> Option<Vec<Point<S>>> {
        let sampler = self.sampler.as_ref()?;
        Some((0..count).map(|i| sampler(&mut rng::stream(seed, "workload-query", i as u64))).collect())
    }

    /// Same workload with another measure over the same dataset.
    pub fn with_measure(&self, measure: Measure<S>) -> Result<Self, IndexError> {
        for x in &self.dataset {
            measure.check_point(x)?;
        }
        Ok(Workload { measure, dataset: self.dataset.clone(), sampler: self.sampler.clone() })
    }

    /// Ids with `ρ(x, centre) < eps`, by exhaustive scan.
    pub fn linear_range(&self, centre: &Point<S>, eps: S) -> Result<Vec<usize>, IndexError> {
        let mut out = Vec::new();
        for (id, x) in self.dataset.iter().enumerate() {
            if self.measure.eval(x, centre)? < eps {
                out.push(id);
            }
        }
        Ok(out)
    }

    /// k nearest points different from the centre, ties by ascending id.
    pub fn linear_knn(&self, centre: &Point<S>, k: usize) -> Result<Vec<usize>, IndexError> {
        let mut all = Vec::new();
        for (id, x) in self.dataset.iter().enumerate() {
            if x != centre {
                all.push((self.measure.eval(x, centre)?, id));
            }
        }
        if k > all.len() {
            return Err(IndexError::KTooLarge { k, available: all.len() });
        }
        all.sort_by(|a, b| cmp(a.0, b.0).then(a.1.cmp(&b.1)));
        Ok(all.into_iter().take(k).map(|(_, id)| id).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VantagePolicy {
    /// Among 8 random candidates, the one with the largest mean distance to a
    /// random reference sample of the block.
    MaxSpread,
    Random,
    /// Lowest id in the block.
    First,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VpConfig {
    pub leaf_capacity: usize,
    pub branching: usize,
    pub policy: VantagePolicy,
    pub seed: u64,
}

impl Default for VpConfig {
    fn default() -> Self {
        VpConfig { leaf_capacity: 8, branching: 2, policy: VantagePolicy::MaxSpread, seed: 0 }
    }
}

const VANTAGE_CANDIDATES: usize = 8;
const BUILD_AUDIT_SAMPLE: usize = 12;

/// Certification function of a node and its range over the node's block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Certifier {
    /// Distance from a dataset point.
    Vantage(usize),
    /// Distance from the block itself; exact but expensive, for oracles only.
    ExactSet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeCertificate<S> {
    pub certifier: Certifier,
    pub lower: S,
    pub upper: S,
}

impl<S: Scalar> NodeCertificate<S> {
    /// True when `value ∉ (lower - eps, upper + eps)`, widened by the
    /// comparison tolerance so float rounding in the triangle inequality can
    /// never cause a false dismissal.
    #[inline]
    pub fn excludes(&self, value: S, eps: S) -> bool {
        let slack = S::tol(self.upper.abs() + eps + value.abs());
        value <= self.lower - eps - slack || value >= self.upper + eps + slack
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node<S> {
    pub block: Vec<usize>,
    pub certificate: Option<NodeCertificate<S>>,
    pub vantage: Option<usize>,
    pub children: Vec<usize>,
}

impl<S> Node<S> {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RangeStats {
    pub nodes_visited: usize,
    pub nodes_pruned: usize,
    pub distance_evaluations: usize,
    /// Ids of pruned nodes, in pruning order.
    pub pruned: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct KnnStats {
    pub rounds: usize,
    pub distance_evaluations: usize,
    pub nodes_pruned: usize,
}

pub struct VpTree<S: Scalar> {
    measure: Measure<S>,
    points: Vec<Point<S>>,
    nodes: Vec<Node<S>>,
    config: VpConfig,
    probe: usize,
}

impl<S: Scalar> VpTree<S> {
    pub fn build(workload: &Workload<S>, config: VpConfig) -> Result<Self, IndexError> {
        if config.leaf_capacity == 0 {
            return Err(IndexError::Config("leaf capacity must be positive".into()));
        }
        if config.branching < 2 {
            return Err(IndexError::Config("branching must be at least 2".into()));
        }
        let measure = workload.measure().clone();
        let points = workload.dataset().to_vec();
        let n = points.len();

        if n >= 3 {
            let mut r = rng::stream(config.seed, "vp-audit", 0);
            let mut ids: Vec<usize> = (0..n).collect();
            ids.shuffle(&mut r);
            let sample: Vec<Point<S>> = ids.iter().take(BUILD_AUDIT_SAMPLE).map(|&i| points[i].clone()).collect();
            let report = validate_metric(&measure, &sample, true)?;
            if let Some(v) = report.violations.first() {
                let witness = match v {
                    Violation::Triangle { x, y, z, direct, detour } => {
                        format!("triangle on dataset ids ({}, {}, {}): {direct} > {detour}", ids[*x], ids[*y], ids[*z])
                    }
                    other => format!("{other:?}"),
                };
                return Err(IndexError::NotAMetric(witness));
            }
        }

        let mut tree = VpTree { measure, points, nodes: Vec::new(), config, probe: 0 };
        tree.probe = rng::stream(config.seed, "vp-probe", 0).gen_index(n);
        tree.nodes.push(Node { block: (0..n).collect(), certificate: None, vantage: None, children: Vec::new() });
        let mut pending = vec![0usize];
        while let Some(t) = pending.pop() {
            if tree.nodes[t].block.len() <= config.leaf_capacity {
                continue;
            }
            let mut r = rng::stream(config.seed, "vp-build", t as u64);
            let v = tree.choose_vantage(&tree.nodes[t].block, &mut r)?;
            let mut by_dist = Vec::with_capacity(tree.nodes[t].block.len());
            for &id in &tree.nodes[t].block {
                by_dist.push((tree.measure.eval(&tree.points[v], &tree.points[id])?, id));
            }
            by_dist.sort_by(|a, b| cmp(a.0, b.0).then(a.1.cmp(&b.1)));
            let len = by_dist.len();
            let b = config.branching.min(len);
            for g in 0..b {
                let chunk = &by_dist[g * len / b..(g + 1) * len / b];
                if chunk.is_empty() {
                    continue;
                }
                let cert = NodeCertificate { certifier: Certifier::Vantage(v), lower: chunk[0].0, upper: chunk[chunk.len() - 1].0 };
                let child = tree.nodes.len();
                tree.nodes.push(Node { block: chunk.iter().map(|&(_, id)| id).collect(), certificate: Some(cert), vantage: None, children: Vec::new() });
                tree.nodes[t].children.push(child);
                pending.push(child);
            }
            tree.nodes[t].vantage = Some(v);
        }
        Ok(tree)
    }

    fn choose_vantage(&self, block: &[usize], r: &mut Rng) -> Result<usize, IndexError> {
        Ok(match self.config.policy {
            VantagePolicy::First => *block.iter().min().expect("nonempty block"),
            VantagePolicy::Random => block[r.gen_index(block.len())],
            VantagePolicy::MaxSpread => {
                let candidates: Vec<usize> = block.choose_multiple(r, VANTAGE_CANDIDATES).copied().collect();
                let reference: Vec<usize> = block.choose_multiple(r, VANTAGE_CANDIDATES).copied().collect();
                let mut best = (S::neg_infinity(), usize::MAX);
                for &c in &candidates {
                    let mut spread = S::zero();
                    for &q in &reference {
                        spread = spread + self.measure.eval(&self.points[c], &self.points[q])?;
                    }
                    if spread > best.0 || (spread == best.0 && c < best.1) {
                        best = (spread, c);
                    }
                }
                best.1
            }
        })
    }

    pub fn measure(&self) -> &Measure<S> {
        &self.measure
    }

    pub fn points(&self) -> &[Point<S>] {
        &self.points
    }

    pub fn nodes(&self) -> &[Node<S>] {
        &self.nodes
    }

    pub fn config(&self) -> VpConfig {
        self.config
    }

    pub fn height(&self) -> usize {
        fn depth<S>(nodes: &[Node<S>], t: usize) -> usize {
            1 + nodes[t].children.iter().map(|&c| depth(nodes, c)).max().unwrap_or(0)
        }
        depth(&self.nodes, 0)
    }

    /// Ids with `ρ(x, centre) < eps`, ascending.
    pub fn range_query(&self, centre: &Point<S>, eps: S) -> Result<(Vec<usize>, RangeStats), IndexError> {
        if !(eps > S::zero()) {
            return Err(IndexError::NonPositiveEpsilon(eps.as_f64()));
        }
        self.measure.check_point(centre)?;
        let mut stats = RangeStats::default();
        let mut hits = Vec::new();
        self.collect(centre, eps, &mut hits, &mut stats)?;
        let mut ids: Vec<usize> = hits.into_iter().map(|(_, id)| id).collect();
        ids.sort_unstable();
        Ok((ids, stats))
    }

    fn collect(&self, centre: &Point<S>, eps: S, hits: &mut Vec<(S, usize)>, stats: &mut RangeStats) -> Result<(), IndexError> {
        let mut stack = vec![0usize];
        while let Some(t) = stack.pop() {
            stats.nodes_visited += 1;
            let node = &self.nodes[t];
            match node.vantage {
                None => {
                    for &id in &node.block {
                        let d = self.measure.eval(&self.points[id], centre)?;
                        stats.distance_evaluations += 1;
                        if d < eps {
                            hits.push((d, id));
                        }
                    }
                }
                Some(v) => {
                    let dv = self.measure.eval(&self.points[v], centre)?;
                    stats.distance_evaluations += 1;
                    for &c in node.children.iter().rev() {
                        let cert = self.nodes[c].certificate.as_ref().expect("child nodes are certified");
                        if cert.excludes(dv, eps) {
                            stats.nodes_pruned += 1;
                            stats.pruned.push(c);
                        } else {
                            stack.push(c);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// The k points of `X ∖ {centre}` closest to the centre, ties by ascending
    /// id. Runs range queries with a doubling radius until at least k hits
    /// come back, then a final query at the k-th distance.
    pub fn knn_query(&self, centre: &Point<S>, k: usize) -> Result<(Vec<usize>, KnnStats), IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        self.measure.check_point(centre)?;
        let available = self.points.iter().filter(|p| *p != centre).count();
        if k > available {
            return Err(IndexError::KTooLarge { k, available });
        }
        let n = self.points.len();
        let probe = (0..n).map(|o| (self.probe + o) % n).find(|&i| &self.points[i] != centre).expect("available > 0");

        let mut stats = KnnStats::default();
        let round = |radius: S, stats: &mut KnnStats| -> Result<Vec<(S, usize)>, IndexError> {
            let mut rs = RangeStats::default();
            let mut hits = Vec::new();
            self.collect(centre, radius, &mut hits, &mut rs)?;
            stats.rounds += 1;
            stats.distance_evaluations += rs.distance_evaluations;
            stats.nodes_pruned += rs.nodes_pruned;
            hits.retain(|&(_, id)| &self.points[id] != centre);
            hits.sort_by(|a, b| cmp(a.0, b.0).then(a.1.cmp(&b.1)));
            Ok(hits)
        };

        let mut radius = self.measure.eval(&self.points[probe], centre)?;
        stats.distance_evaluations += 1;
        if !(radius > S::zero()) {
            radius = S::one();
        }
        let kth = loop {
            let hits = round(radius, &mut stats)?;
            if hits.len() >= k {
                break hits[k - 1].0;
            }
            radius = radius + radius;
            if !radius.is_finite() {
                return Err(IndexError::Config("k-NN radius overflowed".into()));
            }
        };
        let just_above = kth + kth.abs() * S::epsilon() * S::lit(2.0) + S::min_positive_value();
        let mut hits = round(just_above, &mut stats)?;
        hits.truncate(k);
        Ok((hits.into_iter().map(|(_, id)| id).collect(), stats))
    }

    /// `min_{a ∈ block} ρ(x, a)` for a node's block.
    pub fn exact_set_distance(&self, node: usize, x: &Point<S>) -> Result<S, IndexError> {
        exact_set_distance(&self.measure, &self.points, &self.nodes[node].block, x)
    }

    /// Pruned nodes (from `stats`) whose block actually meets the open
    /// ε-ball around `centre`. Empty for a sound index.
    pub fn audit_pruning(&self, centre: &Point<S>, eps: S, stats: &RangeStats) -> Result<Vec<usize>, IndexError> {
        let mut bad = Vec::new();
        for &t in &stats.pruned {
            if self.exact_set_distance(t, centre)? < eps {
                bad.push(t);
            }
        }
        Ok(bad)
    }

    /// Checks the structural invariants: the root block is the dataset,
    /// children partition their parent, leaves respect the capacity and
    /// every certificate bounds its block exactly as stored.
    pub fn audit(&self) -> Result<(), String> {
        let n = self.points.len();
        let mut root = self.nodes[0].block.clone();
        root.sort_unstable();
        if root != (0..n).collect::<Vec<_>>() {
            return Err("root block is not the whole dataset".into());
        }
        for (t, node) in self.nodes.iter().enumerate() {
            if node.is_leaf() {
                if node.block.len() > self.config.leaf_capacity {
                    return Err(format!("leaf {t} over capacity"));
                }
                continue;
            }
            let v = node.vantage.ok_or_else(|| format!("internal node {t} without vantage"))?;
            let mut union: Vec<usize> = node.children.iter().flat_map(|&c| self.nodes[c].block.iter().copied()).collect();
            union.sort_unstable();
            let mut block = node.block.clone();
            block.sort_unstable();
            if union != block {
                return Err(format!("children of node {t} do not partition its block"));
            }
            for &c in &node.children {
                let cert = self.nodes[c].certificate.ok_or_else(|| format!("child {c} without certificate"))?;
                if cert.certifier != Certifier::Vantage(v) {
                    return Err(format!("child {c} certified by the wrong vantage"));
                }
                for &id in &self.nodes[c].block {
                    let d = self.measure.eval(&self.points[v], &self.points[id]).map_err(|e| e.to_string())?;
                    if d < cert.lower || d > cert.upper {
                        return Err(format!("point {id} at {d} outside [{}, {}] in node {c}", cert.lower, cert.upper));
                    }
                }
            }
        }
        Ok(())
    }

    /// Structured-text dump of the tree (the dataset itself is not included).
    pub fn to_json(&self) -> String {
        let dump = TreeDump {
            format: DUMP_FORMAT.into(),
            version: DUMP_VERSION,
            measure: self.measure.name(),
            points: self.points.len(),
            config: self.config,
            probe: self.probe,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDump {
                    block: n.block.clone(),
                    vantage: n.vantage,
                    children: n.children.clone(),
                    bounds: n.certificate.map(|c| {
                        let Certifier::Vantage(v) = c.certifier else { unreachable!("trees only store vantage certificates") };
                        BoundsDump { vantage: v, lower: c.lower.as_f64(), upper: c.upper.as_f64() }
                    }),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&dump).expect("dump serializes")
    }

    /// Restores a tree over `workload`'s dataset from [`VpTree::to_json`].
    pub fn from_json(json: &str, workload: &Workload<S>) -> Result<Self, IndexError> {
        let bad = |m: String| IndexError::Dump(m);
        let dump: TreeDump = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
        if dump.format != DUMP_FORMAT || dump.version != DUMP_VERSION {
            return Err(bad(format!("unsupported format {} v{}", dump.format, dump.version)));
        }
        if dump.measure != workload.measure().name() {
            return Err(bad(format!("index built for {}, workload uses {}", dump.measure, workload.measure().name())));
        }
        let n = workload.len();
        if dump.points != n || dump.probe >= n || dump.nodes.is_empty() {
            return Err(bad(format!("index covers {} points, dataset has {n}", dump.points)));
        }
        let m = dump.nodes.len();
        let mut nodes = Vec::with_capacity(m);
        for (t, nd) in dump.nodes.into_iter().enumerate() {
            if nd.block.iter().any(|&id| id >= n) || nd.children.iter().any(|&c| c >= m || c <= t) || nd.vantage.is_some_and(|v| v >= n) {
                return Err(bad(format!("node {t} references out-of-range ids")));
            }
            if nd.vantage.is_some() == nd.children.is_empty() {
                return Err(bad(format!("node {t}: vantage and children disagree")));
            }
            let certificate = match nd.bounds {
                Some(b) if b.vantage < n => Some(NodeCertificate { certifier: Certifier::Vantage(b.vantage), lower: S::lit(b.lower), upper: S::lit(b.upper) }),
                Some(_) => return Err(bad(format!("node {t}: bad vantage"))),
                None if t == 0 => None,
                None => return Err(bad(format!("node {t}: missing bounds"))),
            };
            nodes.push(Node { block: nd.block, certificate, vantage: nd.vantage, children: nd.children });
        }
        let tree = VpTree { measure: workload.measure().clone(), points: workload.dataset().to_vec(), nodes, config: dump.config, probe: dump.probe };
        tree.audit().map_err(bad)?;
        Ok(tree)
    }
}

/// `min_{a ∈ block} ρ(x, points[a])`.
pub fn exact_set_distance<S: Scalar>(measure: &Measure<S>, points: &[Point<S>], block: &[usize], x: &Point<S>) -> Result<S, IndexError> {
    if block.is_empty() {
        return Err(IndexError::EmptyBlock);
    }
    let mut best = S::infinity();
    for &a in block {
        best = best.min(measure.eval(x, &points[a])?);
    }
    Ok(best)
}

const DUMP_FORMAT: &str = "simgeom-vptree";
const DUMP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TreeDump {
    format: String,
    version: u32,
    measure: String,
    points: usize,
    config: VpConfig,
    probe: usize,
    nodes: Vec<NodeDump>,
}

#[derive(Serialize, Deserialize)]
struct NodeDump {
    block: Vec<usize>,
    vantage: Option<usize>,
    children: Vec<usize>,
    bounds: Option<BoundsDump>,
}

#[derive(Serialize, Deserialize)]
struct BoundsDump {
    vantage: usize,
    lower: f64,
    upper: f64,
}

trait GenIndex {
    fn gen_index(&mut self, n: usize) -> usize;
}

impl GenIndex for Rng {
    fn gen_index(&mut self, n: usize) -> usize {
        rand::Rng::gen_range(self, 0..n)
    }
}
