//! Points, dissimilarity measures and metric transforms.
//!
//! A [`Measure`] is an immutable, cheaply clonable description of a distance
//! on one kind of [`Point`]. Evaluation is pure; measures may be shared
//! freely across threads.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::histogram::{self, GroundSpace, Histogram, HistogramError, QuadraticForm};
use crate::scalar::Scalar;

/// An element of a query domain.
#[derive(Clone, Debug, PartialEq)]
pub enum Point<S: Scalar> {
    /// Fixed-arity tuple of reals.
    Coords(Vec<S>),
    /// String over a finite alphabet.
    Symbols(String),
    /// Histogram over a finite ground space.
    Histogram(Histogram<S>),
}

impl<S: Scalar> Point<S> {
    pub fn coords(&self) -> Option<&[S]> {
        match self {
            Point::Coords(c) => Some(c),
            _ => None,
        }
    }

    pub fn symbols(&self) -> Option<&str> {
        match self {
            Point::Symbols(s) => Some(s),
            _ => None,
        }
    }

    pub fn histogram(&self) -> Option<&Histogram<S>> {
        match self {
            Point::Histogram(h) => Some(h),
            _ => None,
        }
    }

    fn describe(&self) -> String {
        match self {
            Point::Coords(c) => format!("coordinate tuple of arity {}", c.len()),
            Point::Symbols(s) => format!("string of length {}", s.chars().count()),
            Point::Histogram(h) => format!("histogram over {} bins", h.len()),
        }
    }
}

impl<S: Scalar> From<Vec<S>> for Point<S> {
    fn from(v: Vec<S>) -> Self {
        Point::Coords(v)
    }
}

impl<S: Scalar> From<&str> for Point<S> {
    fn from(s: &str) -> Self {
        Point::Symbols(s.to_owned())
    }
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("point incompatible with {measure}: {detail}")]
    DomainMismatch { measure: String, detail: String },
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("metric validation needs at least 3 sample points, got {0}")]
    SampleTooSmall(usize),
    #[error("projection needs a nonempty set of valid coordinates: {0}")]
    InvalidProjection(String),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
}

/// Symbol set for string domains.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet(BTreeSet<char>);

impl Alphabet {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Self {
        Alphabet(symbols.into_iter().collect())
    }

    pub fn contains(&self, c: char) -> bool {
        self.0.contains(&c)
    }

    pub fn symbols(&self) -> impl Iterator<Item = char> + '_ {
        self.0.iter().copied()
    }
}

/// Costs for the edit distance. Insertion and deletion share one cost so the
/// distance stays symmetric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EditCosts<S> {
    pub indel: S,
    pub substitution: S,
}

impl<S: Scalar> Default for EditCosts<S> {
    fn default() -> Self {
        EditCosts { indel: S::one(), substitution: S::one() }
    }
}

type DistanceFn<S> = Arc<dyn Fn(&Point<S>, &Point<S>) -> S + Send + Sync>;

#[derive(Clone)]
pub enum MeasureKind<S: Scalar> {
    Euclidean { arity: usize },
    L1 { arity: usize },
    Hamming { alphabet: Option<Alphabet> },
    Edit { alphabet: Option<Alphabet>, costs: EditCosts<S> },
    Kantorovich(Arc<GroundSpace<S>>),
    Quadratic(Arc<QuadraticForm<S>>),
    Transformed { base: Box<Measure<S>>, transform: TransformFn<S> },
    /// Distance of the base coordinate measure restricted to `coords` (0-based).
    Projected { base: Box<Measure<S>>, coords: Vec<usize> },
    /// Arbitrary user function. Only the metric validator vouches for it.
    Custom { name: String, f: DistanceFn<S> },
}

/// A named, evaluable dissimilarity measure.
#[derive(Clone)]
pub struct Measure<S: Scalar> {
    kind: MeasureKind<S>,
    pseudo: bool,
}

impl<S: Scalar> fmt::Debug for Measure<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Measure").field("name", &self.name()).field("pseudo", &self.pseudo).finish()
    }
}

impl<S: Scalar> fmt::Display for Measure<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl<S: Scalar> Measure<S> {
    pub fn euclidean(arity: usize) -> Self {
        Self::from_kind(MeasureKind::Euclidean { arity })
    }

    pub fn l1(arity: usize) -> Self {
        Self::from_kind(MeasureKind::L1 { arity })
    }

    pub fn hamming() -> Self {
        Self::from_kind(MeasureKind::Hamming { alphabet: None })
    }

    pub fn edit() -> Self {
        Self::from_kind(MeasureKind::Edit { alphabet: None, costs: EditCosts::default() })
    }

    pub fn edit_with_costs(costs: EditCosts<S>) -> Self {
        Self::from_kind(MeasureKind::Edit { alphabet: None, costs })
    }

    pub fn kantorovich(ground: Arc<GroundSpace<S>>) -> Self {
        Self::from_kind(MeasureKind::Kantorovich(ground))
    }

    /// Quadratic distances are pseudometrics in general.
    pub fn quadratic(form: Arc<QuadraticForm<S>>) -> Self {
        Self::from_kind(MeasureKind::Quadratic(form)).pseudo(true)
    }

    pub fn custom(name: impl Into<String>, f: impl Fn(&Point<S>, &Point<S>) -> S + Send + Sync + 'static) -> Self {
        Self::from_kind(MeasureKind::Custom { name: name.into(), f: Arc::new(f) })
    }

    /// Restricts string measures to an alphabet.
    pub fn with_alphabet(mut self, alphabet: Alphabet) -> Self {
        match &mut self.kind {
            MeasureKind::Hamming { alphabet: a } | MeasureKind::Edit { alphabet: a, .. } => *a = Some(alphabet),
            _ => {}
        }
        self
    }

    /// Declares the measure a pseudometric.
    pub fn pseudo(mut self, pseudo: bool) -> Self {
        self.pseudo = pseudo;
        self
    }

    fn from_kind(kind: MeasureKind<S>) -> Self {
        Measure { kind, pseudo: false }
    }

    pub fn kind(&self) -> &MeasureKind<S> {
        &self.kind
    }

    pub fn is_pseudo(&self) -> bool {
        self.pseudo
    }

    /// Integer-valued measures are compared exactly.
    pub fn is_integer_valued(&self) -> bool {
        match &self.kind {
            MeasureKind::Hamming { .. } => true,
            MeasureKind::Edit { costs, .. } => costs.indel.fract() == S::zero() && costs.substitution.fract() == S::zero(),
            _ => false,
        }
    }

    /// Arity of coordinate measures.
    pub fn arity(&self) -> Option<usize> {
        match &self.kind {
            MeasureKind::Euclidean { arity } | MeasureKind::L1 { arity } => Some(*arity),
            MeasureKind::Transformed { base, .. } | MeasureKind::Projected { base, .. } => base.arity(),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            MeasureKind::Euclidean { arity } => format!("euclidean({arity})"),
            MeasureKind::L1 { arity } => format!("l1({arity})"),
            MeasureKind::Hamming { .. } => "hamming".into(),
            MeasureKind::Edit { .. } => "edit".into(),
            MeasureKind::Kantorovich(g) => format!("kantorovich({})", g.id()),
            MeasureKind::Quadratic(q) => format!("quadratic({})", q.dim()),
            MeasureKind::Transformed { base, transform } => format!("{transform}∘{}", base.name()),
            MeasureKind::Projected { base, coords } => format!("{}|{:?}", base.name(), coords),
            MeasureKind::Custom { name, .. } => name.clone(),
        }
    }

    fn mismatch(&self, detail: impl Into<String>) -> MetricError {
        MetricError::DomainMismatch { measure: self.name(), detail: detail.into() }
    }

    /// Checks that `x` belongs to the measure's domain.
    pub fn check_point(&self, x: &Point<S>) -> Result<(), MetricError> {
        match (&self.kind, x) {
            (MeasureKind::Euclidean { arity } | MeasureKind::L1 { arity }, Point::Coords(c)) => {
                if c.len() == *arity {
                    Ok(())
                } else {
                    Err(self.mismatch(format!("expected arity {arity}, got {}", c.len())))
                }
            }
            (MeasureKind::Hamming { alphabet } | MeasureKind::Edit { alphabet, .. }, Point::Symbols(s)) => {
                match alphabet {
                    Some(a) => match s.chars().find(|&c| !a.contains(c)) {
                        Some(c) => Err(self.mismatch(format!("symbol {c:?} outside the alphabet"))),
                        None => Ok(()),
                    },
                    None => Ok(()),
                }
            }
            (MeasureKind::Kantorovich(g), Point::Histogram(h)) => {
                if h.len() == g.len() {
                    Ok(())
                } else {
                    Err(self.mismatch(format!("expected {} bins, got {}", g.len(), h.len())))
                }
            }
            (MeasureKind::Quadratic(q), Point::Histogram(h)) => {
                if h.len() == q.dim() {
                    Ok(())
                } else {
                    Err(self.mismatch(format!("expected {} bins, got {}", q.dim(), h.len())))
                }
            }
            (MeasureKind::Transformed { base, .. } | MeasureKind::Projected { base, .. }, _) => base.check_point(x),
            (MeasureKind::Custom { .. }, _) => Ok(()),
            _ => Err(self.mismatch(x.describe())),
        }
    }

    /// Evaluates the measure. Deterministic and symmetric.
    pub fn eval(&self, x: &Point<S>, y: &Point<S>) -> Result<S, MetricError> {
        self.check_point(x)?;
        self.check_point(y)?;
        self.eval_unchecked(x, y)
    }

    fn eval_unchecked(&self, x: &Point<S>, y: &Point<S>) -> Result<S, MetricError> {
        Ok(match (&self.kind, x, y) {
            (MeasureKind::Euclidean { .. }, Point::Coords(a), Point::Coords(b)) => euclidean(a.iter().zip(b)),
            (MeasureKind::L1 { .. }, Point::Coords(a), Point::Coords(b)) => a.iter().zip(b).map(|(&p, &q)| (p - q).abs()).sum(),
            (MeasureKind::Hamming { .. }, Point::Symbols(a), Point::Symbols(b)) => {
                let (la, lb) = (a.chars().count(), b.chars().count());
                if la != lb {
                    return Err(self.mismatch(format!("hamming needs equal lengths, got {la} and {lb}")));
                }
                S::from_usize_lossy(a.chars().zip(b.chars()).filter(|(p, q)| p != q).count())
            }
            (MeasureKind::Edit { costs, .. }, Point::Symbols(a), Point::Symbols(b)) => edit_distance(a, b, *costs),
            (MeasureKind::Kantorovich(g), Point::Histogram(a), Point::Histogram(b)) => histogram::kantorovich(a, b, g)?.distance,
            (MeasureKind::Quadratic(q), Point::Histogram(a), Point::Histogram(b)) => histogram::quadratic_distance(a, b, q)?,
            (MeasureKind::Transformed { base, transform }, _, _) => transform.apply(base.eval_unchecked(x, y)?),
            (MeasureKind::Projected { base, coords }, Point::Coords(a), Point::Coords(b)) => {
                let pairs = coords.iter().map(|&i| (&a[i], &b[i]));
                match base.kind {
                    MeasureKind::Euclidean { .. } => euclidean(pairs),
                    MeasureKind::L1 { .. } => pairs.map(|(&p, &q)| (p - q).abs()).sum(),
                    _ => return Err(self.mismatch("projection of a non-coordinate measure")),
                }
            }
            (MeasureKind::Custom { f, .. }, _, _) => f(x, y),
            _ => return Err(self.mismatch(format!("{} vs {}", x.describe(), y.describe()))),
        })
    }

    /// Restriction of a coordinate measure to a subset of coordinates (0-based).
    pub fn project(&self, coords: &[usize]) -> Result<Measure<S>, MetricError> {
        let arity = match self.kind {
            MeasureKind::Euclidean { arity } | MeasureKind::L1 { arity } => arity,
            _ => return Err(MetricError::InvalidProjection(format!("{} is not a coordinate measure", self.name()))),
        };
        if coords.is_empty() {
            return Err(MetricError::InvalidProjection("empty coordinate set".into()));
        }
        if let Some(&bad) = coords.iter().find(|&&c| c >= arity) {
            return Err(MetricError::InvalidProjection(format!("coordinate {bad} out of range for arity {arity}")));
        }
        let mut coords = coords.to_vec();
        coords.sort_unstable();
        coords.dedup();
        // A proper projection identifies distinct points.
        let pseudo = self.pseudo || coords.len() < arity;
        Ok(Measure { kind: MeasureKind::Projected { base: Box::new(self.clone()), coords }, pseudo })
    }
}

fn euclidean<'a, S: Scalar>(pairs: impl Iterator<Item = (&'a S, &'a S)>) -> S {
    pairs.map(|(&p, &q)| (p - q) * (p - q)).sum::<S>().sqrt()
}

/// Weighted Levenshtein distance.
pub fn edit_distance<S: Scalar>(a: &str, b: &str, costs: EditCosts<S>) -> S {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<S> = (0..=b.len()).map(|j| costs.indel * S::from_usize_lossy(j)).collect();
    let mut cur = vec![S::zero(); b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = costs.indel * S::from_usize_lossy(i + 1);
        for (j, &cb) in b.iter().enumerate() {
            let sub = if ca == cb { S::zero() } else { costs.substitution };
            cur[j + 1] = (prev[j] + sub).min(prev[j + 1] + costs.indel).min(cur[j] + costs.indel);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Concave nondecreasing `F` with `F(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransformFamily<S> {
    Identity,
    /// `t^p`, `0 < p <= 1`.
    Power(S),
    Log1p,
    /// `t / (1 + t)`.
    Bounded,
    /// `min(t, c)`, `c > 0`.
    Cap(S),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformFn<S> {
    family: TransformFamily<S>,
}

impl<S: Scalar> TransformFn<S> {
    pub fn identity() -> Self {
        TransformFn { family: TransformFamily::Identity }
    }

    pub fn power(p: S) -> Result<Self, MetricError> {
        if !(p > S::zero() && p <= S::one()) {
            return Err(MetricError::InvalidTransform(format!("power exponent {p} outside (0, 1]")));
        }
        Ok(TransformFn { family: TransformFamily::Power(p) })
    }

    pub fn log1p() -> Self {
        TransformFn { family: TransformFamily::Log1p }
    }

    pub fn bounded() -> Self {
        TransformFn { family: TransformFamily::Bounded }
    }

    pub fn cap(c: S) -> Result<Self, MetricError> {
        if !(c > S::zero() && c.is_finite()) {
            return Err(MetricError::InvalidTransform(format!("cap {c} must be positive and finite")));
        }
        Ok(TransformFn { family: TransformFamily::Cap(c) })
    }

    pub fn family(&self) -> TransformFamily<S> {
        self.family
    }

    pub fn apply(&self, t: S) -> S {
        match self.family {
            TransformFamily::Identity => t,
            TransformFamily::Power(p) => {
                if t == S::zero() {
                    S::zero()
                } else {
                    t.powf(p)
                }
            }
            TransformFamily::Log1p => t.ln_1p(),
            TransformFamily::Bounded => t / (S::one() + t),
            TransformFamily::Cap(c) => t.min(c),
        }
    }

    /// Parses `identity`, `power:P`, `log1p`, `bounded` or `cap:C`.
    pub fn parse(text: &str) -> Result<Self, MetricError> {
        let (name, arg) = match text.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (text.trim(), None),
        };
        let param = |what: &str| -> Result<S, MetricError> {
            let raw = arg.ok_or_else(|| MetricError::InvalidTransform(format!("{what} needs a parameter")))?;
            raw.parse::<f64>()
                .map(S::lit)
                .map_err(|_| MetricError::InvalidTransform(format!("bad {what} parameter {raw:?}")))
        };
        match name {
            "identity" => Ok(Self::identity()),
            "power" => Self::power(param("power")?),
            "log1p" => Ok(Self::log1p()),
            "bounded" => Ok(Self::bounded()),
            "cap" => Self::cap(param("cap")?),
            other => Err(MetricError::InvalidTransform(format!("unknown transform {other:?}"))),
        }
    }
}

impl<S: Scalar> fmt::Display for TransformFn<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            TransformFamily::Identity => f.write_str("identity"),
            TransformFamily::Power(p) => write!(f, "power:{p}"),
            TransformFamily::Log1p => f.write_str("log1p"),
            TransformFamily::Bounded => f.write_str("bounded"),
            TransformFamily::Cap(c) => write!(f, "cap:{c}"),
        }
    }
}

pub const TRANSFORM_GRID_POINTS: usize = 1024;

/// Checks `F(0) = 0`, monotonicity and midpoint concavity on a geometric grid
/// over `[0, 10 * max_observed]`.
pub fn check_transform_grid<S: Scalar>(f: impl Fn(S) -> S, max_observed: S) -> Result<(), MetricError> {
    let top = S::lit(10.0) * if max_observed > S::zero() { max_observed } else { S::one() };
    let bottom = top * S::lit(1e-6);
    let ratio = (top / bottom).powf(S::one() / S::from_usize_lossy(TRANSFORM_GRID_POINTS - 2));
    let mut grid = Vec::with_capacity(TRANSFORM_GRID_POINTS);
    grid.push(S::zero());
    let mut g = bottom;
    for _ in 1..TRANSFORM_GRID_POINTS {
        grid.push(g.min(top));
        g = g * ratio;
    }
    let values: Vec<S> = grid.iter().map(|&t| f(t)).collect();
    if !S::approx_eq(values[0], S::zero()) {
        return Err(MetricError::InvalidTransform(format!("F(0) = {} is not zero", values[0])));
    }
    let concave_at = |a: S, fa: S, b: S, fb: S| {
        let mid = f((a + b) / S::lit(2.0));
        S::approx_le((fa + fb) / S::lit(2.0), mid)
    };
    for i in 1..grid.len() {
        let (a, b) = (grid[i - 1], grid[i]);
        if !S::approx_le(values[i - 1], values[i]) {
            return Err(MetricError::InvalidTransform(format!("decreasing between {a} and {b}")));
        }
        if !concave_at(a, values[i - 1], b, values[i]) || !concave_at(S::zero(), values[0], b, values[i]) {
            return Err(MetricError::InvalidTransform(format!("not concave near {b}")));
        }
    }
    Ok(())
}

/// Returns `F(ρ)`. The transform is grid-checked against `max_observed`, the
/// largest distance the caller expects to feed it.
pub fn metric_transform<S: Scalar>(base: &Measure<S>, transform: TransformFn<S>, max_observed: S) -> Result<Measure<S>, MetricError> {
    check_transform_grid(|t| transform.apply(t), max_observed)?;
    Ok(Measure {
        kind: MeasureKind::Transformed { base: Box::new(base.clone()), transform },
        pseudo: base.pseudo,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation<S> {
    Negative { i: usize, j: usize, value: S },
    Asymmetric { i: usize, j: usize, forward: S, backward: S },
    NonzeroDiagonal { i: usize, value: S },
    /// `d(x, y) = 0` with `x != y` on a measure not declared pseudo.
    Indiscernible { i: usize, j: usize },
    /// `d(x, z) > d(x, y) + d(y, z)`.
    Triangle { x: usize, y: usize, z: usize, direct: S, detour: S },
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport<S> {
    pub violations: Vec<Violation<S>>,
    pub pairs_checked: usize,
    pub triples_checked: usize,
}

impl<S> ValidationReport<S> {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first_triangle(&self) -> Option<&Violation<S>> {
        self.violations.iter().find(|v| matches!(v, Violation::Triangle { .. }))
    }
}

/// Checks the metric axioms on every pair and triple of `sample`.
pub fn validate_metric<S: Scalar>(measure: &Measure<S>, sample: &[Point<S>], pseudo_allowed: bool) -> Result<ValidationReport<S>, MetricError> {
    if sample.len() < 3 {
        return Err(MetricError::SampleTooSmall(sample.len()));
    }
    let n = sample.len();
    let exact = measure.is_integer_valued();
    let le = |a: S, b: S| if exact { a <= b } else { S::approx_le(a, b) };
    let eq = |a: S, b: S| if exact { a == b } else { S::approx_eq(a, b) };

    let mut d = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = measure.eval(&sample[i], &sample[j])?;
        }
    }
    let mut report = ValidationReport { violations: Vec::new(), pairs_checked: n * n, triples_checked: n * n * n };
    for i in 0..n {
        if !eq(d[i * n + i], S::zero()) {
            report.violations.push(Violation::NonzeroDiagonal { i, value: d[i * n + i] });
        }
        for j in 0..n {
            let v = d[i * n + j];
            if v < S::zero() {
                report.violations.push(Violation::Negative { i, j, value: v });
            }
            if i < j {
                if !eq(v, d[j * n + i]) {
                    report.violations.push(Violation::Asymmetric { i, j, forward: v, backward: d[j * n + i] });
                }
                if !pseudo_allowed && eq(v, S::zero()) && sample[i] != sample[j] {
                    report.violations.push(Violation::Indiscernible { i, j });
                }
            }
        }
    }
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                let direct = d[x * n + z];
                let detour = d[x * n + y] + d[y * n + z];
                if !le(direct, detour) {
                    report.violations.push(Violation::Triangle { x, y, z, direct, detour });
                }
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub enum LipschitzOutcome<S> {
    Pass,
    /// First pair with `|f(x) - f(y)| > ρ(x, y)`.
    Violated { pair: usize, variation: S, distance: S },
}

impl<S> LipschitzOutcome<S> {
    pub fn passed(&self) -> bool {
        matches!(self, LipschitzOutcome::Pass)
    }
}

/// Tests `|f(x) - f(y)| <= ρ(x, y)` on the given pairs.
pub fn check_one_lipschitz<S: Scalar>(
    f: impl Fn(&Point<S>) -> S,
    measure: &Measure<S>,
    pairs: &[(Point<S>, Point<S>)],
) -> Result<LipschitzOutcome<S>, MetricError> {
    for (pair, (x, y)) in pairs.iter().enumerate() {
        let distance = measure.eval(x, y)?;
        let variation = (f(x) - f(y)).abs();
        if !S::approx_le(variation, distance) {
            return Ok(LipschitzOutcome::Violated { pair, variation, distance });
        }
    }
    Ok(LipschitzOutcome::Pass)
}
