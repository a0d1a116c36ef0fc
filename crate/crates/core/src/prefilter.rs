//! Replace-the-distance pipeline: answer an ε-range query under a cheaper
//! measure `d` at radius `δ(ε)`, then verify every candidate under the true
//! measure and discard the false hits.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::index::{IndexError, VpConfig, VpTree, Workload};
use crate::metric::{metric_transform, Measure, MeasureKind, MetricError, Point, TransformFamily, TransformFn};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum PrefilterError {
    #[error("modulus fails on a sampled pair: ρ = {rho}, d = {d}, bound {bound}")]
    UnsoundModulus { rho: f64, d: f64, bound: f64 },
    #[error("invalid modulus: {0}")]
    InvalidModulus(String),
    #[error("workload has no query sampler")]
    NoSampler,
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// `δ(ε) = slope · ε + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Modulus<S> {
    pub slope: S,
    pub offset: S,
}

impl<S: Scalar> Modulus<S> {
    pub fn identity() -> Self {
        Modulus { slope: S::one(), offset: S::zero() }
    }

    pub fn delta(&self, eps: S) -> S {
        self.slope * eps + self.offset
    }

    /// Pairwise form of the guarantee: `ρ < ε ⇒ d < δ(ε)` for every ε is
    /// `d ≤ slope · ρ + offset` (strict when the slope is zero).
    fn admits(&self, rho: S, d: S) -> bool {
        let bound = self.slope * rho + self.offset;
        if self.slope > S::zero() {
            S::approx_le(d, bound)
        } else {
            d < bound
        }
    }
}

/// Cheaper measure `d` with a modulus relating it to the true measure.
#[derive(Clone, Debug)]
pub struct ApproxMeasure<S: Scalar> {
    measure: Measure<S>,
    modulus: Modulus<S>,
}

impl<S: Scalar> ApproxMeasure<S> {
    pub fn new(measure: Measure<S>, modulus: Modulus<S>) -> Result<Self, PrefilterError> {
        if !(modulus.slope >= S::zero() && modulus.offset >= S::zero()) {
            return Err(PrefilterError::InvalidModulus(format!("slope {} and offset {} must be nonnegative", modulus.slope, modulus.offset)));
        }
        Ok(ApproxMeasure { measure, modulus })
    }

    /// The true measure itself with `δ = ε`.
    pub fn exact(measure: Measure<S>) -> Self {
        ApproxMeasure { measure, modulus: Modulus::identity() }
    }

    pub fn measure(&self) -> &Measure<S> {
        &self.measure
    }

    pub fn modulus(&self) -> Modulus<S> {
        self.modulus
    }

    pub fn delta(&self, eps: S) -> S {
        self.modulus.delta(eps)
    }
}

/// Projection onto a coordinate subset (0-based). The projected distance never
/// exceeds the full one, so `δ(ε) = ε`.
pub fn project_measure<S: Scalar>(base: &Measure<S>, coords: &[usize]) -> Result<ApproxMeasure<S>, PrefilterError> {
    if !matches!(base.kind(), MeasureKind::Euclidean { .. } | MeasureKind::L1 { .. }) {
        return Err(MetricError::InvalidProjection(format!("{} is not a coordinate measure", base.name())).into());
    }
    Ok(ApproxMeasure { measure: base.project(coords)?, modulus: Modulus::identity() })
}

/// `d = F(ρ)` with the modulus read off a tangent line of `F`: `F(t) ≤ t`
/// for the families with `F'(0) = 1`, and `t^p ≤ p·t + 1 - p` for powers.
pub fn transformed_approx<S: Scalar>(base: &Measure<S>, transform: TransformFn<S>, max_observed: S) -> Result<ApproxMeasure<S>, PrefilterError> {
    let measure = metric_transform(base, transform, max_observed)?;
    let modulus = match transform.family() {
        TransformFamily::Power(p) => Modulus { slope: p, offset: S::one() - p },
        _ => Modulus::identity(),
    };
    Ok(ApproxMeasure { measure, modulus })
}

pub const AUDIT_PAIRS: usize = 10_000;
pub const AUDIT_ALL_PAIRS_UP_TO: usize = 200;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub sampled_pairs: usize,
    pub dataset_pairs: usize,
}

/// Screens the modulus on sampled pairs from the query distribution (or the
/// dataset when there is no sampler) plus every dataset pair for small
/// datasets. Fails with the first witness.
pub fn audit_modulus<S: Scalar>(workload: &Workload<S>, approx: &ApproxMeasure<S>, seed: u64) -> Result<AuditReport, PrefilterError> {
    let rho = workload.measure();
    let d = approx.measure();
    let check = |x: &Point<S>, y: &Point<S>| -> Result<(), PrefilterError> {
        let (r, a) = (rho.eval(x, y)?, d.eval(x, y)?);
        if approx.modulus.admits(r, a) {
            Ok(())
        } else {
            Err(PrefilterError::UnsoundModulus { rho: r.as_f64(), d: a.as_f64(), bound: approx.modulus.delta(r).as_f64() })
        }
    };
    let data = workload.dataset();
    let mut report = AuditReport::default();
    let mut r = rng::stream(seed, "modulus-audit", 0);
    for _ in 0..AUDIT_PAIRS {
        match workload.sampler() {
            Some(sampler) => check(&sampler(&mut r), &sampler(&mut r))?,
            None => {
                let i = rand::Rng::gen_range(&mut r, 0..data.len());
                let j = rand::Rng::gen_range(&mut r, 0..data.len());
                check(&data[i], &data[j])?
            }
        }
        report.sampled_pairs += 1;
    }
    if data.len() <= AUDIT_ALL_PAIRS_UP_TO {
        for i in 0..data.len() {
            for j in i + 1..data.len() {
                check(&data[i], &data[j])?;
                report.dataset_pairs += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PipelineStats {
    pub epsilon: f64,
    pub delta: f64,
    pub candidates: usize,
    pub verified: usize,
    pub false_hits: usize,
    pub d_evaluations: usize,
    pub rho_evaluations: usize,
    /// Candidates came from an index over `d` rather than a linear scan.
    pub used_index: bool,
}

impl PipelineStats {
    pub fn false_hit_rate(&self) -> f64 {
        self.false_hits as f64 / self.candidates.max(1) as f64
    }
}

/// Audited prefilter over a workload.
pub struct Prefilter<S: Scalar> {
    workload: Workload<S>,
    approx: ApproxMeasure<S>,
    index: Option<VpTree<S>>,
    audit: AuditReport,
}

impl<S: Scalar> Prefilter<S> {
    /// Runs the modulus audit; an unsound approximation is refused.
    pub fn new(workload: Workload<S>, approx: ApproxMeasure<S>, seed: u64) -> Result<Self, PrefilterError> {
        let audit = audit_modulus(&workload, &approx, seed)?;
        Ok(Prefilter { workload, approx, index: None, audit })
    }

    /// Builds a vantage-point tree over `d`; candidate generation uses it
    /// from then on.
    pub fn with_index(mut self, config: VpConfig) -> Result<Self, PrefilterError> {
        let w = self.workload.with_measure(self.approx.measure.clone())?;
        self.index = Some(VpTree::build(&w, config)?);
        Ok(self)
    }

    pub fn workload(&self) -> &Workload<S> {
        &self.workload
    }

    pub fn approx(&self) -> &ApproxMeasure<S> {
        &self.approx
    }

    pub fn audit(&self) -> &AuditReport {
        &self.audit
    }

    /// Exact ε-range query under the true measure, via candidates under `d`.
    pub fn filtered_range_query(&self, centre: &Point<S>, eps: S) -> Result<(Vec<usize>, PipelineStats), PrefilterError> {
        if !(eps > S::zero()) {
            return Err(IndexError::NonPositiveEpsilon(eps.as_f64()).into());
        }
        let delta = self.approx.delta(eps);
        let mut stats = PipelineStats { epsilon: eps.as_f64(), delta: delta.as_f64(), ..Default::default() };
        let candidates = match &self.index {
            Some(tree) => {
                let (ids, rs) = tree.range_query(centre, delta)?;
                stats.d_evaluations = rs.distance_evaluations;
                stats.used_index = true;
                ids
            }
            None => {
                let d = self.approx.measure();
                let mut ids = Vec::new();
                for (id, x) in self.workload.dataset().iter().enumerate() {
                    if d.eval(x, centre)? < delta {
                        ids.push(id);
                    }
                }
                stats.d_evaluations = self.workload.len();
                ids
            }
        };
        stats.candidates = candidates.len();
        let rho = self.workload.measure();
        let mut result = Vec::with_capacity(candidates.len());
        for id in candidates {
            stats.rho_evaluations += 1;
            if rho.eval(&self.workload.dataset()[id], centre)? < eps {
                result.push(id);
            }
        }
        stats.verified = result.len();
        stats.false_hits = stats.candidates - stats.verified;
        Ok((result, stats))
    }

    /// False-hit rates over `query_count` queries drawn from the workload's
    /// query distribution. Deterministic under `seed`.
    pub fn false_hit_profile(&self, eps: S, query_count: usize, seed: u64) -> Result<FalseHitProfile, PrefilterError> {
        let queries = self.workload.sample_queries(query_count, seed).ok_or(PrefilterError::NoSampler)?;
        self.profile(&queries, eps)
    }

    /// False-hit rates over an explicit query list.
    pub fn profile(&self, queries: &[Point<S>], eps: S) -> Result<FalseHitProfile, PrefilterError> {
        let n = self.workload.len() as f64;
        let records = queries
            .par_iter()
            .enumerate()
            .map(|(query, q)| {
                let (_, s) = self.filtered_range_query(q, eps)?;
                Ok(QueryRecord {
                    query,
                    epsilon: s.epsilon,
                    delta: s.delta,
                    candidates: s.candidates,
                    false_hits: s.false_hits,
                    rate: s.false_hit_rate(),
                    candidate_fraction: s.candidates as f64 / n,
                })
            })
            .collect::<Result<Vec<_>, PrefilterError>>()?;
        Ok(FalseHitProfile::from_records(records))
    }
}

/// One row of an experiment report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryRecord {
    pub query: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub candidates: usize,
    pub false_hits: usize,
    pub rate: f64,
    /// Candidates as a fraction of the dataset.
    pub candidate_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FalseHitProfile {
    pub records: Vec<QueryRecord>,
    pub mean_rate: f64,
    pub worst_rate: f64,
    /// Query achieving `worst_rate` (lowest index on ties).
    pub worst_query: Option<usize>,
    pub worst_candidate_fraction: f64,
}

impl FalseHitProfile {
    fn from_records(records: Vec<QueryRecord>) -> Self {
        let mut worst: Option<&QueryRecord> = None;
        for r in &records {
            if worst.is_none_or(|w| r.rate > w.rate) {
                worst = Some(r);
            }
        }
        let mean_rate = if records.is_empty() { 0.0 } else { records.iter().map(|r| r.rate).sum::<f64>() / records.len() as f64 };
        FalseHitProfile {
            mean_rate,
            worst_rate: worst.map_or(0.0, |w| w.rate),
            worst_query: worst.map(|w| w.query),
            worst_candidate_fraction: records.iter().map(|r| r.candidate_fraction).fold(0.0, f64::max),
            records,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cube(n: usize, dim: usize, seed: u64) -> Workload<f64> {
        let mut r = rng::stream(seed, "cube", 0);
        let pts = (0..n).map(|_| Point::Coords((0..dim).map(|_| r.gen()).collect())).collect();
        Workload::new(Measure::euclidean(dim), pts)
            .unwrap()
            .with_sampler(move |r| Point::Coords((0..dim).map(|_| r.gen()).collect()))
    }

    #[test]
    fn projection_examples() {
        let e = Measure::<f64>::euclidean(2);
        let full = project_measure(&e, &[0, 1]).unwrap();
        let (a, b) = (Point::Coords(vec![0.3, 0.1]), Point::Coords(vec![0.9, -2.0]));
        assert_eq!(full.measure().eval(&a, &b).unwrap(), e.eval(&a, &b).unwrap());
        let first = project_measure(&e, &[0]).unwrap();
        assert_eq!(first.measure().eval(&Point::Coords(vec![0.0, 0.0]), &Point::Coords(vec![0.0, 5.0])).unwrap(), 0.0);
        assert_eq!(first.delta(0.3), 0.3);
        assert!(project_measure(&e, &[]).is_err());
        assert!(project_measure(&Measure::<f64>::hamming(), &[0]).is_err());
    }

    #[test]
    fn projection_contracts_in_dimension_20() {
        let e = Measure::<f64>::euclidean(20);
        let d = project_measure(&e, &[0, 3, 7]).unwrap();
        let mut r = rng::stream(2, "contract", 0);
        for _ in 0..10_000 {
            let x = Point::Coords((0..20).map(|_| r.gen_range(-1.0..1.0)).collect());
            let y = Point::Coords((0..20).map(|_| r.gen_range(-1.0..1.0)).collect());
            assert!(d.measure().eval(&x, &y).unwrap() <= e.eval(&x, &y).unwrap());
        }
    }

    #[test]
    fn exact_approx_has_no_false_hits() {
        let w = cube(300, 3, 1);
        let p = Prefilter::new(w.clone(), ApproxMeasure::exact(w.measure().clone()), 0).unwrap();
        let prof = p.false_hit_profile(0.2, 50, 3).unwrap();
        assert!(prof.records.iter().all(|r| r.rate == 0.0));
        assert_eq!(prof.worst_rate, 0.0);
    }

    #[test]
    fn filtered_queries_match_linear_scan_with_and_without_index() {
        let w = cube(400, 5, 2);
        let approx = project_measure(w.measure(), &[1]).unwrap();
        let linear = Prefilter::new(w.clone(), approx.clone(), 0).unwrap();
        let indexed = Prefilter::new(w.clone(), approx, 0).unwrap().with_index(VpConfig { leaf_capacity: 4, ..Default::default() }).unwrap();
        let mut r = rng::stream(9, "q", 0);
        for _ in 0..100 {
            let q = Point::Coords((0..5).map(|_| r.gen()).collect());
            let eps = r.gen_range(0.05..0.5);
            let truth = w.linear_range(&q, eps).unwrap();
            let (a, sa) = linear.filtered_range_query(&q, eps).unwrap();
            let (b, sb) = indexed.filtered_range_query(&q, eps).unwrap();
            assert_eq!(a, truth);
            assert_eq!(b, truth);
            assert_eq!(sa.candidates, sa.verified + sa.false_hits);
            assert_eq!((sa.candidates, sa.false_hits), (sb.candidates, sb.false_hits));
            assert!(!sa.used_index && sb.used_index);
        }
    }

    #[test]
    fn transformed_moduli_are_sound() {
        let w = cube(150, 4, 4);
        for f in [TransformFn::power(0.5).unwrap(), TransformFn::log1p(), TransformFn::bounded(), TransformFn::cap(0.4).unwrap()] {
            let approx = transformed_approx(w.measure(), f, 3.0).unwrap();
            let p = Prefilter::new(w.clone(), approx, 1).unwrap();
            assert_eq!(p.audit().dataset_pairs, 150 * 149 / 2);
            let q = Point::Coords(vec![0.5; 4]);
            assert_eq!(p.filtered_range_query(&q, 0.3).unwrap().0, w.linear_range(&q, 0.3).unwrap());
        }
    }

    #[test]
    fn unsound_modulus_refused() {
        let w = cube(50, 3, 5);
        let doubled = Measure::custom("2x", |x: &Point<f64>, y: &Point<f64>| 2.0 * Measure::euclidean(3).eval(x, y).unwrap());
        let approx = ApproxMeasure::new(doubled, Modulus::identity()).unwrap();
        assert!(matches!(Prefilter::new(w, approx, 0), Err(PrefilterError::UnsoundModulus { .. })));
        assert!(ApproxMeasure::new(Measure::<f64>::euclidean(1), Modulus { slope: -1.0, offset: 0.0 }).is_err());
    }

    #[test]
    fn false_hits_grow_with_dimension() {
        let rate = |dim: usize| {
            let w = cube(2000, dim, 6);
            let p = Prefilter::new(w.clone(), project_measure(w.measure(), &[0]).unwrap(), 0).unwrap();
            p.false_hit_profile(0.1, 200, 8).unwrap().mean_rate
        };
        let (low, high) = (rate(2), rate(20));
        assert!(high > low, "{low} vs {high}");
        assert!(high > 0.99);
    }

    #[test]
    fn single_point_dataset_rates() {
        let w = Workload::new(Measure::euclidean(2), vec![Point::Coords(vec![0.5, 0.5])])
            .unwrap()
            .with_sampler(|r| Point::Coords(vec![r.gen(), r.gen()]));
        let p = Prefilter::new(w.clone(), project_measure(w.measure(), &[0]).unwrap(), 0).unwrap();
        let prof = p.false_hit_profile(0.2, 100, 1).unwrap();
        assert!(prof.records.iter().all(|r| r.rate == 0.0 || r.rate == 1.0));
        assert!(prof.records.iter().any(|r| r.rate == 1.0));
    }

    #[test]
    fn profile_is_deterministic() {
        let w = cube(500, 10, 7);
        let p = Prefilter::new(w.clone(), project_measure(w.measure(), &[2]).unwrap(), 0).unwrap();
        assert_eq!(p.false_hit_profile(0.3, 64, 5).unwrap(), p.false_hit_profile(0.3, 64, 5).unwrap());
    }
}
