//! Empirical geometry of probability metric spaces: concentration functions,
//! median concentration of 1-Lipschitz functions, covering numbers and the
//! blow-up of cheap-distance balls.
//!
//! `α(ε) = 1 − inf { μ(O_ε(A)) : μ(A) ≥ ½ }` where `O_ε(A)` is the open
//! ε-neighbourhood, with `α(0) = ½`.

use std::cmp::Ordering;
use std::collections::VecDeque;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::index::Sampler;
use crate::metric::{Measure, MetricError, Point};
use crate::prefilter::ApproxMeasure;
use crate::rng;
use crate::scalar::{cmp, Scalar};

#[derive(Debug, Error)]
pub enum ConcentrationError {
    #[error("space is empty")]
    Empty,
    #[error("weights must be nonnegative and sum to 1 (sum {0})")]
    BadWeights(f64),
    #[error("distance table is not a {n}×{n} symmetric nonnegative table with zero diagonal")]
    BadTable { n: usize },
    #[error("grid must be nonempty, positive and strictly increasing")]
    BadGrid,
    #[error("exact enumeration needs a finite space of at most {limit} points, got {got:?}")]
    TooLarge { limit: usize, got: Option<usize> },
    #[error("function is not 1-Lipschitz: |f({i}) − f({j})| = {variation} > {distance}")]
    NotLipschitz { i: usize, j: usize, variation: f64, distance: f64 },
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("hypothesis fails: {0}")]
    Hypothesis(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub const EXACT_LIMIT: usize = 24;
pub const DEFAULT_GRID_STEPS: usize = 32;
const HALF_TOL: f64 = 1e-12;

/// Finite metric space with a probability measure, stored as a distance table.
#[derive(Clone, Debug)]
pub struct FiniteSpace<S: Scalar> {
    points: Option<Vec<Point<S>>>,
    weights: Vec<S>,
    dist: Vec<S>,
}

impl<S: Scalar> FiniteSpace<S> {
    pub fn new(points: Vec<Point<S>>, weights: Vec<S>, measure: &Measure<S>) -> Result<Self, ConcentrationError> {
        let n = points.len();
        if n == 0 {
            return Err(ConcentrationError::Empty);
        }
        if weights.len() != n {
            return Err(ConcentrationError::Config(format!("{} weights for {n} points", weights.len())));
        }
        check_weights(&weights)?;
        let rows = (0..n)
            .into_par_iter()
            .map(|i| points.iter().map(|y| measure.eval(&points[i], y)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let dist = rows.concat();
        Ok(FiniteSpace { points: Some(points), weights, dist })
    }

    /// Normalized counting measure.
    pub fn uniform(points: Vec<Point<S>>, measure: &Measure<S>) -> Result<Self, ConcentrationError> {
        let w = uniform_weights(points.len());
        Self::new(points, w, measure)
    }

    pub fn from_table(dist: Vec<S>, weights: Vec<S>) -> Result<Self, ConcentrationError> {
        let n = weights.len();
        if n == 0 {
            return Err(ConcentrationError::Empty);
        }
        let ok = dist.len() == n * n
            && (0..n).all(|i| dist[i * n + i] == S::zero() && (0..n).all(|j| dist[i * n + j] >= S::zero() && dist[i * n + j] == dist[j * n + i]));
        if !ok {
            return Err(ConcentrationError::BadTable { n });
        }
        check_weights(&weights)?;
        Ok(FiniteSpace { points: None, weights, dist })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> Option<&[Point<S>]> {
        self.points.as_deref()
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn dist(&self, i: usize, j: usize) -> S {
        self.dist[i * self.len() + j]
    }

    pub fn diameter(&self) -> S {
        self.dist.iter().copied().fold(S::zero(), S::max)
    }

    /// Sum of weights over `keep`, in index order.
    fn mass_where(&self, keep: impl Fn(usize) -> bool) -> S {
        (0..self.len()).filter(|&i| keep(i)).map(|i| self.weights[i]).sum()
    }

    /// Mass outside `mask`.
    fn outside_mask(&self, mask: u32) -> S {
        self.mass_where(|i| mask >> i & 1 == 0)
    }
}

fn uniform_weights<S: Scalar>(n: usize) -> Vec<S> {
    vec![S::one() / S::from_usize_lossy(n.max(1)); n]
}

fn check_weights<S: Scalar>(w: &[S]) -> Result<(), ConcentrationError> {
    let sum: S = w.iter().copied().sum();
    if w.iter().any(|&x| !(x >= S::zero())) || (sum - S::one()).abs() > S::lit(1e-9) {
        return Err(ConcentrationError::BadWeights(sum.as_f64()));
    }
    Ok(())
}

/// The uniform Hamming cube `{0,1}^n`, points stored as bit strings.
pub fn hamming_cube<S: Scalar>(n: u32) -> FiniteSpace<S> {
    let size = 1usize << n;
    let points = (0..size).map(|x| Point::Symbols(bit_string(x, n))).collect();
    let dist = (0..size).flat_map(|x| (0..size).map(move |y| S::from_usize_lossy((x ^ y).count_ones() as usize))).collect();
    FiniteSpace { points: Some(points), weights: uniform_weights(size), dist }
}

fn bit_string(x: usize, n: u32) -> String {
    (0..n).map(|b| if x >> b & 1 == 1 { '1' } else { '0' }).collect()
}

#[derive(Clone)]
pub enum ProbabilityMetricSpace<S: Scalar> {
    Finite(FiniteSpace<S>),
    Sampled { sampler: Sampler<S>, measure: Measure<S> },
}

impl<S: Scalar> ProbabilityMetricSpace<S> {
    pub fn sampled(measure: Measure<S>, sampler: impl Fn(&mut rng::Rng) -> Point<S> + Send + Sync + 'static) -> Self {
        ProbabilityMetricSpace::Sampled { sampler: std::sync::Arc::new(sampler), measure }
    }

    /// The space itself when finite, else `m` i.i.d. draws under the
    /// normalized counting measure.
    pub fn empirical(&self, m: usize, seed: u64) -> Result<FiniteSpace<S>, ConcentrationError> {
        match self {
            ProbabilityMetricSpace::Finite(f) => Ok(f.clone()),
            ProbabilityMetricSpace::Sampled { sampler, measure } => {
                let pts = draw(sampler, m, seed, "space-sample");
                FiniteSpace::uniform(pts, measure)
            }
        }
    }

    pub fn finite_len(&self) -> Option<usize> {
        match self {
            ProbabilityMetricSpace::Finite(f) => Some(f.len()),
            ProbabilityMetricSpace::Sampled { .. } => None,
        }
    }
}

fn draw<S: Scalar>(sampler: &Sampler<S>, m: usize, seed: u64, label: &str) -> Vec<Point<S>> {
    let mut r = rng::stream(seed, label, 0);
    (0..m).map(|_| sampler(&mut r)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactEnumeration,
    BallFamily,
    LipschitzFamily,
    /// Exact values on a Hamming cube from the vertex-isoperimetric extremal sets.
    Isoperimetric,
}

impl Method {
    pub fn is_exact(self) -> bool {
        matches!(self, Method::ExactEnumeration | Method::Isoperimetric)
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact-enumeration" | "exact" => Some(Method::ExactEnumeration),
            "ball-family" | "ball" => Some(Method::BallFamily),
            "lipschitz-family" | "lipschitz" => Some(Method::LipschitzFamily),
            "isoperimetric" => Some(Method::Isoperimetric),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SampleSizes {
    /// Points in the (possibly empirical) space the estimate ran on.
    pub points: usize,
    /// Sets examined: all admissible subsets for exact methods, family members otherwise.
    pub sets: usize,
}

/// Family methods give lower bounds on α; exact methods give α itself.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationEstimate {
    pub method: Method,
    pub seed: u64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub sample_sizes: SampleSizes,
}

impl ConcentrationEstimate {
    /// α at `eps`, read from the largest grid point not above it. Since α is
    /// nonincreasing, this never understates α(eps) for exact estimates.
    pub fn alpha_at(&self, eps: f64) -> f64 {
        match self.grid.iter().rposition(|&g| g <= eps) {
            Some(i) => self.values[i],
            None => 0.5,
        }
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0])
    }
}

#[derive(Clone, Debug)]
pub struct ConcentrationConfig {
    pub method: Method,
    /// Centres for the family methods; `None` means every point when there
    /// are at most 256, else 64 sampled ones.
    pub centres: Option<usize>,
    /// Draws used to build an empirical space from a sampled one.
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig { method: Method::LipschitzFamily, centres: None, sample_size: 1000, seed: 0 }
    }
}

/// `steps` geometric points spanning `[diameter/100, diameter]`.
pub fn default_grid(diameter: f64, steps: usize) -> Vec<f64> {
    let lo = diameter / 100.0;
    if steps <= 1 {
        return vec![diameter];
    }
    (0..steps).map(|i| lo * 100f64.powf(i as f64 / (steps - 1) as f64)).collect()
}

fn check_grid(grid: &[f64]) -> Result<(), ConcentrationError> {
    if grid.is_empty() || !(grid[0] > 0.0) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ConcentrationError::BadGrid);
    }
    Ok(())
}

pub fn estimate_concentration<S: Scalar>(
    space: &ProbabilityMetricSpace<S>,
    grid: &[f64],
    config: &ConcentrationConfig,
) -> Result<ConcentrationEstimate, ConcentrationError> {
    check_grid(grid)?;
    let (values, sizes) = match config.method {
        Method::ExactEnumeration => {
            let f = match space {
                ProbabilityMetricSpace::Finite(f) if f.len() <= EXACT_LIMIT => f,
                _ => return Err(ConcentrationError::TooLarge { limit: EXACT_LIMIT, got: space.finite_len() }),
            };
            exact_alpha(f, grid)
        }
        Method::BallFamily | Method::LipschitzFamily => {
            let f = space.empirical(config.sample_size, config.seed)?;
            family_alpha(&f, grid, config)
        }
        Method::Isoperimetric => return Err(ConcentrationError::Config("use hamming_cube_concentration for the isoperimetric method".into())),
    };
    let est = ConcentrationEstimate { method: config.method, seed: config.seed, grid: grid.to_vec(), values, sample_sizes: sizes };
    assert!(est.is_nonincreasing(), "concentration estimate increased along the grid");
    Ok(est)
}

/// α is read as the mass left outside the neighbourhood, which is exactly
/// zero when the neighbourhood is the whole space.
fn alpha_from_outside<S: Scalar>(outside: S) -> f64 {
    outside.as_f64().clamp(0.0, 0.5)
}

fn is_half<S: Scalar>(mass: S) -> bool {
    mass.as_f64() >= 0.5 - HALF_TOL
}

/// Branch and bound over subsets, one search per grid point.
fn exact_alpha<S: Scalar>(space: &FiniteSpace<S>, grid: &[f64]) -> (Vec<f64>, SampleSizes) {
    let n = space.len();
    let results: Vec<(f64, usize)> = grid
        .par_iter()
        .map(|&eps| {
            let e = S::lit(eps);
            let nb: Vec<u32> = (0..n).map(|i| (0..n).filter(|&j| space.dist(i, j) < e).fold(0u32, |m, j| m | 1 << j)).collect();
            let mut suffix = vec![S::zero(); n + 1];
            for i in (0..n).rev() {
                suffix[i] = suffix[i + 1] + space.weights[i];
            }
            let mut search = ExactSearch { space, nb: &nb, suffix: &suffix, best: S::lit(-1.0), visited: 0 };
            search.dfs(0, S::zero(), 0);
            (alpha_from_outside(search.best), search.visited)
        })
        .collect();
    let sets = results.iter().map(|r| r.1).max().unwrap_or(0);
    (results.into_iter().map(|r| r.0).collect(), SampleSizes { points: n, sets })
}

struct ExactSearch<'a, S: Scalar> {
    space: &'a FiniteSpace<S>,
    nb: &'a [u32],
    suffix: &'a [S],
    best: S,
    visited: usize,
}

impl<S: Scalar> ExactSearch<'_, S> {
    fn dfs(&mut self, i: usize, set_mass: S, nbhd: u32) {
        if is_half(set_mass) {
            self.visited += 1;
            let m = self.space.outside_mask(nbhd);
            if m > self.best {
                self.best = m;
            }
            return;
        }
        if i == self.space.len() || !is_half(set_mass + self.suffix[i]) {
            return;
        }
        if self.space.outside_mask(nbhd) <= self.best {
            return;
        }
        self.dfs(i + 1, set_mass + self.space.weights[i], nbhd | self.nb[i]);
        self.dfs(i + 1, set_mass, nbhd);
    }
}

/// Lower weighted median: the smallest value whose cumulative weight reaches ½.
pub fn lower_median<S: Scalar>(values: &[S], weights: &[S]) -> S {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp(values[a], values[b]).then(a.cmp(&b)));
    let mut acc = S::zero();
    for &i in &order {
        acc = acc + weights[i];
        if is_half(acc) {
            return values[i];
        }
    }
    values[*order.last().expect("nonempty")]
}

fn family_alpha<S: Scalar>(space: &FiniteSpace<S>, grid: &[f64], config: &ConcentrationConfig) -> (Vec<f64>, SampleSizes) {
    let n = space.len();
    let centres: Vec<usize> = match config.centres {
        Some(c) if c < n => sorted_sample(n, c, config.seed),
        Some(_) => (0..n).collect(),
        None if n <= 256 => (0..n).collect(),
        None => sorted_sample(n, 64, config.seed),
    };
    let mut probes: Vec<Vec<S>> = centres.iter().map(|&c| (0..n).map(|j| space.dist(c, j)).collect()).collect();
    let mut sets: Vec<Vec<bool>> = probes.iter().map(|f| sublevel(f, &space.weights)).collect();
    if config.method == Method::LipschitzFamily {
        if let Some(arity) = space.points().and_then(|p| p[0].coords().map(<[S]>::len)) {
            let pts = space.points().expect("checked");
            for k in 0..arity {
                probes.push(pts.iter().map(|p| p.coords().map_or(S::zero(), |c| c[k])).collect());
            }
        }
        // Coordinate probes are 1-Lipschitz only for coordinate measures, so
        // keep just the ones that pass on this space.
        probes.retain(|f| (0..n).all(|i| (0..n).all(|j| S::approx_le((f[i] - f[j]).abs(), space.dist(i, j)))));
        sets = probes.iter().flat_map(|f| [sublevel(f, &space.weights), superlevel(f, &space.weights)]).collect();
    }
    let grid_s: Vec<S> = grid.iter().map(|&g| S::lit(g)).collect();
    let masses: Vec<Vec<S>> = sets.par_iter().map(|a| neighbourhood_masses(space, a, &grid_s)).collect();
    let values = (0..grid.len())
        .map(|g| {
            let m = masses.iter().map(|m| m[g]).fold(S::zero(), S::max);
            alpha_from_outside(m)
        })
        .collect();
    (values, SampleSizes { points: n, sets: sets.len() })
}

fn sorted_sample(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, "concentration-centres", 0);
    let mut v = sample_indices(&mut r, n, k).into_vec();
    v.sort_unstable();
    v
}

fn sublevel<S: Scalar>(f: &[S], w: &[S]) -> Vec<bool> {
    let m = lower_median(f, w);
    f.iter().map(|&v| v <= m).collect()
}

fn superlevel<S: Scalar>(f: &[S], w: &[S]) -> Vec<bool> {
    let m = lower_median(f, w);
    f.iter().map(|&v| v >= m).collect()
}

/// `μ(Ω \ O_ε(A))` for every grid point.
fn neighbourhood_masses<S: Scalar>(space: &FiniteSpace<S>, a: &[bool], grid: &[S]) -> Vec<S> {
    let n = space.len();
    let members: Vec<usize> = (0..n).filter(|&i| a[i]).collect();
    let to_set: Vec<S> = (0..n).map(|x| members.iter().map(|&m| space.dist(x, m)).fold(S::infinity(), S::min)).collect();
    grid.iter().map(|&e| space.mass_where(|x| !(to_set[x] < e))).collect()
}

/// Exact α on the uniform cube `{0,1}^n` with the Hamming metric. An initial
/// segment of the simplicial order has the smallest r-neighbourhoods among all
/// sets of its size, so the extremal set of size `2^(n−1)` gives α directly.
pub fn hamming_cube_concentration(n: u32, grid: &[f64]) -> Result<ConcentrationEstimate, ConcentrationError> {
    check_grid(grid)?;
    if n == 0 || n > 24 {
        return Err(ConcentrationError::Config(format!("cube dimension {n} outside 1..=24")));
    }
    let size = 1usize << n;
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&x, &y| simplicial_cmp(x, y));
    let mut depth = vec![u32::MAX; size];
    let mut queue = VecDeque::new();
    for &x in &order[..size / 2] {
        depth[x] = 0;
        queue.push_back(x);
    }
    while let Some(x) = queue.pop_front() {
        for b in 0..n {
            let y = x ^ (1 << b);
            if depth[y] == u32::MAX {
                depth[y] = depth[x] + 1;
                queue.push_back(y);
            }
        }
    }
    let mut at_depth = vec![0usize; n as usize + 1];
    for &d in &depth {
        at_depth[d as usize] += 1;
    }
    let values = grid
        .iter()
        .map(|&eps| {
            let inside: usize = at_depth.iter().enumerate().filter(|&(d, _)| (d as f64) < eps).map(|(_, c)| c).sum();
            (1.0 - inside as f64 / size as f64).clamp(0.0, 0.5)
        })
        .collect();
    Ok(ConcentrationEstimate {
        method: Method::Isoperimetric,
        seed: 0,
        grid: grid.to_vec(),
        values,
        sample_sizes: SampleSizes { points: size, sets: 1 },
    })
}

fn simplicial_cmp(x: usize, y: usize) -> Ordering {
    x.count_ones().cmp(&y.count_ones()).then_with(|| {
        if x == y {
            Ordering::Equal
        } else if x >> (x ^ y).trailing_zeros() & 1 == 1 {
            Ordering::Less
        } else {
            Ordering::Greater
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MedianCheck {
    pub median: f64,
    pub epsilon: f64,
    /// `μ({x : |f(x) − M| < ε})`.
    pub mass: f64,
    /// `1 − 2α(ε)`.
    pub bound: f64,
    pub satisfied: bool,
    /// Whether `satisfied` is a guarantee (exact α) or only a comparison.
    pub asserted: bool,
}

/// Pair budget for the Lipschitz screen; larger spaces are sampled.
const LIPSCHITZ_ALL_PAIRS_UP_TO: usize = 2048;

pub fn median_concentration_check<S: Scalar>(
    space: &FiniteSpace<S>,
    f: impl Fn(usize) -> S,
    eps: S,
    alpha: &ConcentrationEstimate,
) -> Result<MedianCheck, ConcentrationError> {
    if !(eps > S::zero()) {
        return Err(ConcentrationError::NonPositiveEpsilon(eps.as_f64()));
    }
    let n = space.len();
    let values: Vec<S> = (0..n).map(f).collect();
    let lip = |i: usize, j: usize| -> Result<(), ConcentrationError> {
        let v = (values[i] - values[j]).abs();
        if S::approx_le(v, space.dist(i, j)) {
            Ok(())
        } else {
            Err(ConcentrationError::NotLipschitz { i, j, variation: v.as_f64(), distance: space.dist(i, j).as_f64() })
        }
    };
    if n <= LIPSCHITZ_ALL_PAIRS_UP_TO {
        for i in 0..n {
            for j in i + 1..n {
                lip(i, j)?;
            }
        }
    } else {
        let mut r = rng::stream(0, "median-lipschitz", 0);
        for _ in 0..10_000 {
            lip(r.gen_range(0..n), r.gen_range(0..n))?;
        }
    }
    let m = lower_median(&values, &space.weights);
    let mass = space.mass_where(|i| (values[i] - m).abs() < eps).as_f64();
    let bound = 1.0 - 2.0 * alpha.alpha_at(eps.as_f64());
    Ok(MedianCheck {
        median: m.as_f64(),
        epsilon: eps.as_f64(),
        mass,
        bound,
        satisfied: mass >= bound - HALF_TOL,
        asserted: alpha.method.is_exact(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverMethod {
    GreedyUpper,
    ExactSmall,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverReport {
    pub epsilon: f64,
    pub n: usize,
    pub entropy: f64,
    pub method: CoverMethod,
    pub centres: Vec<usize>,
}

impl CoverReport {
    fn new(eps: f64, centres: Vec<usize>, method: CoverMethod) -> Self {
        CoverReport { epsilon: eps, n: centres.len(), entropy: (centres.len() as f64).log2(), method, centres }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverSummary {
    pub greedy: CoverReport,
    pub exact: Option<CoverReport>,
}

impl CoverSummary {
    pub fn best(&self) -> &CoverReport {
        self.exact.as_ref().unwrap_or(&self.greedy)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CoverConfig {
    /// Largest point count for the exact search (at most 128).
    pub exact_limit: usize,
}

impl Default for CoverConfig {
    fn default() -> Self {
        CoverConfig { exact_limit: 20 }
    }
}

/// Covering number with open ε-balls centred at points of the space.
pub fn covering_number<S: Scalar>(space: &FiniteSpace<S>, eps: S, config: CoverConfig) -> Result<CoverSummary, ConcentrationError> {
    if !(eps > S::zero()) {
        return Err(ConcentrationError::NonPositiveEpsilon(eps.as_f64()));
    }
    if config.exact_limit > 128 {
        return Err(ConcentrationError::Config("exact cover limit is 128 points".into()));
    }
    let greedy = greedy_cover(space, eps);
    let exact = (space.len() <= config.exact_limit).then(|| exact_cover(space, eps, greedy.len()));
    let e = eps.as_f64();
    Ok(CoverSummary {
        greedy: CoverReport::new(e, greedy, CoverMethod::GreedyUpper),
        exact: exact.map(|c| CoverReport::new(e, c, CoverMethod::ExactSmall)),
    })
}

/// Farthest-point insertion from point 0 until every point is strictly
/// within ε of a centre.
pub fn greedy_cover<S: Scalar>(space: &FiniteSpace<S>, eps: S) -> Vec<usize> {
    let n = space.len();
    let mut centres = vec![0];
    let mut gap: Vec<S> = (0..n).map(|j| space.dist(0, j)).collect();
    loop {
        let (far, d) = gap.iter().enumerate().fold((0, S::zero()), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        if d < eps {
            return centres;
        }
        centres.push(far);
        for (j, g) in gap.iter_mut().enumerate() {
            *g = g.min(space.dist(far, j));
        }
    }
}

/// Iterative deepening on the cover size: branch on the centres that cover
/// the lowest uncovered point.
fn exact_cover<S: Scalar>(space: &FiniteSpace<S>, eps: S, upper: usize) -> Vec<usize> {
    let n = space.len();
    let ball: Vec<u128> = (0..n).map(|i| (0..n).filter(|&j| space.dist(i, j) < eps).fold(0u128, |m, j| m | 1 << j)).collect();
    let full: u128 = if n == 128 { u128::MAX } else { (1u128 << n) - 1 };
    fn search(ball: &[u128], full: u128, covered: u128, left: usize, chosen: &mut Vec<usize>) -> bool {
        if covered == full {
            return true;
        }
        if left == 0 {
            return false;
        }
        let target = (!covered & full).trailing_zeros() as usize;
        for c in 0..ball.len() {
            if ball[c] >> target & 1 == 1 {
                chosen.push(c);
                if search(ball, full, covered | ball[c], left - 1, chosen) {
                    return true;
                }
                chosen.pop();
            }
        }
        false
    }
    for size in 1..upper {
        let mut chosen = Vec::new();
        if search(&ball, full, 0, size, &mut chosen) {
            chosen.sort_unstable();
            return chosen;
        }
    }
    greedy_cover(space, eps)
}

#[derive(Clone, Debug)]
pub struct BlowupConfig {
    /// Draws from the query distribution used as the measure.
    pub samples: usize,
    /// Candidate query points `x*`.
    pub queries: usize,
    /// Sample size for the cover of `(Ω, d)` and for `α̂` of `(Ω, ρ)`.
    pub geometry_sample: usize,
    pub hypothesis_pairs: usize,
    pub seed: u64,
}

impl Default for BlowupConfig {
    fn default() -> Self {
        BlowupConfig { samples: 100_000, queries: 100, geometry_sample: 1000, hypothesis_pairs: 10_000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlowupReport {
    pub epsilon: f64,
    pub delta: f64,
    pub samples: usize,
    pub queries: usize,
    /// Query with the largest `μ(O_δ)` under `d`.
    pub worst_query: usize,
    pub worst_mass_d: f64,
    /// `μ(O_ε)` under `ρ` at the worst query.
    pub mass_rho_at_worst: f64,
    pub mean_mass_d: f64,
    pub mean_mass_rho: f64,
    /// Cover of `(Ω, d)` at ε/3, greedy on an empirical sample.
    pub cover: CoverReport,
    /// Lower-bound estimate of α for `(Ω, ρ)` at ε/3.
    pub alpha: ConcentrationEstimate,
}

/// Measures how much of the query domain a δ-ball under `d` captures, next
/// to the true ε-ball under `ρ`. Requires `ρ < ε/3 ⇒ d < δ/3`, checked via
/// the modulus and on sampled pairs.
pub fn blowup_experiment<S: Scalar>(
    sampler: &Sampler<S>,
    rho: &Measure<S>,
    approx: &ApproxMeasure<S>,
    eps: S,
    delta: S,
    config: &BlowupConfig,
) -> Result<BlowupReport, ConcentrationError> {
    if !(eps > S::zero()) {
        return Err(ConcentrationError::NonPositiveEpsilon(eps.as_f64()));
    }
    let three = S::lit(3.0);
    let (e3, d3) = (eps / three, delta / three);
    if !S::approx_le(approx.delta(e3), d3) {
        return Err(ConcentrationError::Hypothesis(format!("modulus gives δ(ε/3) = {} > δ/3 = {}", approx.delta(e3), d3)));
    }
    let mut r = rng::stream(config.seed, "blowup-hypothesis", 0);
    for _ in 0..config.hypothesis_pairs {
        let (x, y) = (sampler(&mut r), sampler(&mut r));
        let (a, b) = (rho.eval(&x, &y)?, approx.measure().eval(&x, &y)?);
        if a < e3 && !(b < d3) {
            return Err(ConcentrationError::Hypothesis(format!("ρ = {a} < ε/3 but d = {b} ≥ δ/3")));
        }
    }
    let omega = draw(sampler, config.samples, config.seed, "blowup-measure");
    let queries = draw(sampler, config.queries, config.seed, "blowup-queries");
    let d = approx.measure();
    let masses = queries
        .par_iter()
        .map(|q| {
            let (mut in_d, mut in_rho) = (0usize, 0usize);
            for x in &omega {
                in_d += usize::from(d.eval(q, x)? < delta);
                in_rho += usize::from(rho.eval(q, x)? < eps);
            }
            let m = omega.len().max(1) as f64;
            Ok((in_d as f64 / m, in_rho as f64 / m))
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    let mut worst = 0;
    for (i, m) in masses.iter().enumerate() {
        if m.0 > masses[worst].0 {
            worst = i;
        }
    }
    let q = masses.len().max(1) as f64;
    let geo = draw(sampler, config.geometry_sample, config.seed, "blowup-geometry");
    let cover_space = FiniteSpace::uniform(geo.clone(), d)?;
    let cover = CoverReport::new(e3.as_f64(), greedy_cover(&cover_space, e3), CoverMethod::GreedyUpper);
    let rho_space = ProbabilityMetricSpace::Finite(FiniteSpace::uniform(geo, rho)?);
    let alpha = estimate_concentration(&rho_space, &[e3.as_f64()], &ConcentrationConfig { seed: config.seed, ..Default::default() })?;
    Ok(BlowupReport {
        epsilon: eps.as_f64(),
        delta: delta.as_f64(),
        samples: omega.len(),
        queries: queries.len(),
        worst_query: worst,
        worst_mass_d: masses.get(worst).map_or(0.0, |m| m.0),
        mass_rho_at_worst: masses.get(worst).map_or(0.0, |m| m.1),
        mean_mass_d: masses.iter().map(|m| m.0).sum::<f64>() / q,
        mean_mass_rho: masses.iter().map(|m| m.1).sum::<f64>() / q,
        cover,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefilter::project_measure;
    use std::sync::Arc;

    fn line(xs: &[f64]) -> FiniteSpace<f64> {
        FiniteSpace::uniform(xs.iter().map(|&x| Point::Coords(vec![x])).collect(), &Measure::euclidean(1)).unwrap()
    }

    fn exact(space: &FiniteSpace<f64>, grid: &[f64]) -> ConcentrationEstimate {
        let cfg = ConcentrationConfig { method: Method::ExactEnumeration, ..Default::default() };
        estimate_concentration(&ProbabilityMetricSpace::Finite(space.clone()), grid, &cfg).unwrap()
    }

    #[test]
    fn two_point_space() {
        let s = line(&[0.0, 1.0]);
        assert_eq!(exact(&s, &[0.5]).values, vec![0.5]);
        assert_eq!(exact(&s, &[1.5]).values, vec![0.0]);
    }

    #[test]
    fn beyond_diameter_is_zero() {
        let s = line(&[0.0, 0.3, 0.5, 2.0]);
        let e = exact(&s, &[0.1, 1.0, 2.01]);
        assert_eq!(e.values[2], 0.0);
        assert!(e.is_nonincreasing());
        assert_eq!(e.alpha_at(0.05), 0.5);
        assert_eq!(e.alpha_at(1.5), e.values[1]);
    }

    #[test]
    fn exact_rejects_large_and_sampled() {
        let s = line(&(0..25).map(f64::from).collect::<Vec<_>>());
        let cfg = ConcentrationConfig { method: Method::ExactEnumeration, ..Default::default() };
        assert!(matches!(
            estimate_concentration(&ProbabilityMetricSpace::Finite(s), &[1.0], &cfg),
            Err(ConcentrationError::TooLarge { got: Some(25), .. })
        ));
        let sp = ProbabilityMetricSpace::sampled(Measure::<f64>::euclidean(1), |r| Point::Coords(vec![r.gen()]));
        assert!(estimate_concentration(&sp, &[1.0], &cfg).is_err());
    }

    #[test]
    fn bad_grids_and_weights() {
        let sp = ProbabilityMetricSpace::Finite(line(&[0.0, 1.0]));
        for g in [vec![], vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.5]] {
            assert!(matches!(estimate_concentration(&sp, &g, &ConcentrationConfig::default()), Err(ConcentrationError::BadGrid)));
        }
        assert!(FiniteSpace::from_table(vec![0.0, 1.0, 1.0, 0.0], vec![0.3, 0.3]).is_err());
        assert!(FiniteSpace::from_table(vec![0.0, 1.0, 2.0, 0.0], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn hamming_cube_isoperimetric_matches_enumeration() {
        let cube = hamming_cube::<f64>(4);
        let grid = [0.5, 1.0, 1.5, 2.0, 2.5, 3.5, 4.5];
        let iso = hamming_cube_concentration(4, &grid).unwrap();
        assert_eq!(iso.values, exact(&cube, &grid).values);
        assert_eq!(iso.alpha_at(1.5), 1.0 - 14.0 / 16.0);
    }

    #[test]
    fn simplicial_segment_is_a_ball() {
        let mut order: Vec<usize> = (0..8).collect();
        order.sort_by(|&x, &y| simplicial_cmp(x, y));
        assert_eq!(&order[..4], &[0, 1, 2, 4]);
    }

    #[test]
    fn median_examples() {
        let cube = hamming_cube::<f64>(10);
        let grid: Vec<f64> = (1..=10).map(f64::from).collect();
        let alpha = hamming_cube_concentration(10, &grid).unwrap();
        let f = |i: usize| i.count_ones() as f64;
        let c = median_concentration_check(&cube, f, 2.0, &alpha).unwrap();
        assert_eq!(c.median, 5.0);
        assert_eq!(c.mass, (210.0 + 252.0 + 210.0) / 1024.0);
        assert!(c.satisfied && c.asserted);
        let constant = median_concentration_check(&cube, |_| 3.0, 0.5, &alpha).unwrap();
        assert_eq!(constant.mass, 1.0);
        assert!(matches!(
            median_concentration_check(&cube, |i| 2.0 * f(i), 1.0, &alpha),
            Err(ConcentrationError::NotLipschitz { .. })
        ));
    }

    #[test]
    fn lower_median_ties() {
        assert_eq!(lower_median(&[1.0, 2.0, 3.0, 4.0], &[0.25; 4]), 2.0);
        assert_eq!(lower_median(&[4.0, 1.0, 1.0], &[0.2, 0.3, 0.5]), 1.0);
    }

    #[test]
    fn cover_examples() {
        let table = (0..16).map(|k| if k / 4 == k % 4 { 0.0 } else { 1.0 }).collect();
        let simplex = FiniteSpace::from_table(table, vec![0.25; 4]).unwrap();
        let c = covering_number(&simplex, 0.5, CoverConfig::default()).unwrap();
        assert_eq!(c.best().n, 4);
        assert_eq!(covering_number(&simplex, 1.5, CoverConfig::default()).unwrap().best().n, 1);

        let grid = line(&(0..=100).map(|i| i as f64 / 100.0).collect::<Vec<_>>());
        let c = covering_number(&grid, 0.26, CoverConfig { exact_limit: 128 }).unwrap();
        let e = c.exact.unwrap();
        assert_eq!(e.n, 2);
        assert_eq!(e.entropy, 1.0);
        assert!(c.greedy.n >= e.n);
        assert!(covering_number(&grid, 0.26, CoverConfig::default()).unwrap().exact.is_none());
    }

    #[test]
    fn greedy_cover_is_valid() {
        let mut r = rng::stream(3, "t", 0);
        let s = FiniteSpace::uniform((0..300).map(|_| Point::Coords(vec![r.gen(), r.gen()])).collect(), &Measure::euclidean(2)).unwrap();
        for eps in [0.05, 0.2, 0.7] {
            let c = greedy_cover(&s, eps);
            assert!((0..300).all(|x| c.iter().any(|&z| s.dist(x, z) < eps)));
        }
    }

    #[test]
    fn families_are_lower_bounds_on_small_spaces() {
        for seed in 0..8 {
            let mut r = rng::stream(seed, "small", 0);
            let n = r.gen_range(2..=12);
            let pts: Vec<_> = (0..n).map(|_| Point::Coords(vec![r.gen(), r.gen()])).collect();
            let w: Vec<f64> = (0..n).map(|_| r.gen_range(0.1..1.0)).collect();
            let total: f64 = w.iter().sum();
            let s = FiniteSpace::new(pts, w.iter().map(|x| x / total).collect(), &Measure::euclidean(2)).unwrap();
            let grid = default_grid(s.diameter(), 12);
            let ex = exact(&s, &grid);
            for method in [Method::BallFamily, Method::LipschitzFamily] {
                let cfg = ConcentrationConfig { method, ..Default::default() };
                let fam = estimate_concentration(&ProbabilityMetricSpace::Finite(s.clone()), &grid, &cfg).unwrap();
                assert!(fam.values.iter().zip(&ex.values).all(|(f, e)| f <= e), "{fam:?} {ex:?}");
            }
        }
    }

    #[test]
    fn estimates_are_deterministic() {
        let sp = ProbabilityMetricSpace::sampled(Measure::<f64>::euclidean(5), |r| Point::Coords((0..5).map(|_| r.gen()).collect()));
        let cfg = ConcentrationConfig { sample_size: 300, seed: 4, ..Default::default() };
        let grid = default_grid(2.0, 8);
        assert_eq!(estimate_concentration(&sp, &grid, &cfg).unwrap(), estimate_concentration(&sp, &grid, &cfg).unwrap());
    }

    #[test]
    fn blowup_identity_and_projection() {
        let dim = 20;
        let sampler: Sampler<f64> = Arc::new(move |r| Point::Coords((0..dim).map(|_| r.gen()).collect()));
        let rho = Measure::euclidean(dim);
        let cfg = BlowupConfig { samples: 20_000, queries: 20, geometry_sample: 200, hypothesis_pairs: 1000, seed: 1 };
        let same = blowup_experiment(&sampler, &rho, &ApproxMeasure::exact(rho.clone()), 0.5, 0.5, &cfg).unwrap();
        assert_eq!(same.worst_mass_d, same.mass_rho_at_worst);
        let proj = project_measure(&rho, &[0]).unwrap();
        let b = blowup_experiment(&sampler, &rho, &proj, 0.1, 0.1, &cfg).unwrap();
        assert!(b.worst_mass_d > 0.15 && b.worst_mass_d <= 0.2 + 0.02, "{b:?}");
        assert_eq!(b.mass_rho_at_worst, 0.0);
        assert!(blowup_experiment(&sampler, &rho, &proj, 0.3, 0.1, &cfg).is_err());
    }
}
