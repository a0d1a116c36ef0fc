//! Distances on the convex hull of a finite metric ground space.
//!
//! The Kantorovich distance is solved exactly as an uncapacitated min-cost
//! transshipment on the complete graph over the ground space. The solver
//! returns node potentials alongside the plan; the potentials are 1-Lipschitz
//! on the ground space and their pairing with `mu1 - mu2` equals the primal
//! cost, so every call carries its own optimality certificate.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum HistogramError {
    #[error("histogram weights must be nonnegative and finite (bin {bin} = {value})")]
    NegativeWeight { bin: usize, value: f64 },
    #[error("histogram weights sum to {sum}, expected 1")]
    BadTotal { sum: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("ground space distance table: {0}")]
    InvalidGround(String),
    #[error("map is expansive on ground pair ({i}, {j}): image distance {image} > ground distance {ground}")]
    Expansive { i: usize, j: usize, image: f64, ground: f64 },
    #[error("quadratic form: {0}")]
    InvalidForm(String),
    #[error("ground space is not embeddable after the square-root transform: Gram eigenvalue {eigenvalue}")]
    NotEmbeddable { eigenvalue: f64 },
    #[error("transport solver left an infeasible plan (residual {0})")]
    Infeasible(f64),
    #[error("malformed histogram record: {0}")]
    Record(String),
}

/// Finite metric space `C = {c_1, .., c_n}` given by its distance table.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundSpace<S> {
    id: String,
    n: usize,
    dist: Vec<S>,
    coords: Option<Vec<Vec<S>>>,
}

impl<S: Scalar> GroundSpace<S> {
    /// Ground space with Euclidean distances between the given coordinates.
    pub fn from_coords(id: impl Into<String>, coords: Vec<Vec<S>>) -> Result<Self, HistogramError> {
        let n = coords.len();
        if n == 0 {
            return Err(HistogramError::InvalidGround("empty ground space".into()));
        }
        if let Some(c) = coords.iter().find(|c| c.len() != coords[0].len()) {
            return Err(HistogramError::DimensionMismatch(coords[0].len(), c.len()));
        }
        let mut dist = vec![S::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = coords[i].iter().zip(&coords[j]).map(|(&a, &b)| (a - b) * (a - b)).sum::<S>().sqrt();
            }
        }
        Ok(GroundSpace { id: id.into(), n, dist, coords: Some(coords) })
    }

    /// Ground space from a row-major `n x n` table; checked for zero diagonal,
    /// symmetry and the triangle inequality.
    pub fn from_table(id: impl Into<String>, n: usize, dist: Vec<S>) -> Result<Self, HistogramError> {
        if n == 0 || dist.len() != n * n {
            return Err(HistogramError::InvalidGround(format!("expected {} entries for n = {n}", n * n)));
        }
        for i in 0..n {
            if dist[i * n + i] != S::zero() {
                return Err(HistogramError::InvalidGround(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let d = dist[i * n + j];
                if !(d >= S::zero()) || !d.is_finite() {
                    return Err(HistogramError::InvalidGround(format!("bad distance at ({i}, {j})")));
                }
                if !S::approx_eq(d, dist[j * n + i]) {
                    return Err(HistogramError::InvalidGround(format!("asymmetric at ({i}, {j})")));
                }
                for k in 0..n {
                    if !S::approx_le(dist[i * n + k], d + dist[j * n + k]) {
                        return Err(HistogramError::InvalidGround(format!("triangle inequality fails on ({i}, {j}, {k})")));
                    }
                }
            }
        }
        Ok(GroundSpace { id: id.into(), n, dist, coords: None })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> S {
        self.dist[i * self.n + j]
    }

    pub fn coords(&self) -> Option<&[Vec<S>]> {
        self.coords.as_deref()
    }

    pub fn max_distance(&self) -> S {
        self.dist.iter().copied().fold(S::zero(), S::max)
    }

    fn check(&self, h: &Histogram<S>) -> Result<(), HistogramError> {
        if h.len() != self.n {
            return Err(HistogramError::DimensionMismatch(self.n, h.len()));
        }
        Ok(())
    }
}

/// Probability vector over a ground space.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram<S> {
    weights: Vec<S>,
}

pub const FILE_RENORMALIZE_TOL: f64 = 1e-6;

impl<S: Scalar> Histogram<S> {
    /// Weights must be nonnegative and sum to one within tolerance.
    pub fn new(weights: Vec<S>) -> Result<Self, HistogramError> {
        let sum = Self::check_weights(&weights)?;
        if !S::approx_eq(sum, S::one()) {
            return Err(HistogramError::BadTotal { sum: sum.as_f64() });
        }
        Ok(Histogram { weights })
    }

    /// Loader rule: totals within [`FILE_RENORMALIZE_TOL`] of one are
    /// renormalized, anything further off is rejected.
    pub fn renormalized(weights: Vec<S>) -> Result<Self, HistogramError> {
        let sum = Self::check_weights(&weights)?;
        if (sum - S::one()).abs() > S::lit(FILE_RENORMALIZE_TOL) {
            return Err(HistogramError::BadTotal { sum: sum.as_f64() });
        }
        Ok(Histogram { weights: weights.into_iter().map(|w| w / sum).collect() })
    }

    fn check_weights(weights: &[S]) -> Result<S, HistogramError> {
        if let Some((bin, &w)) = weights.iter().enumerate().find(|(_, w)| !(**w >= S::zero()) || !w.is_finite()) {
            return Err(HistogramError::NegativeWeight { bin, value: w.as_f64() });
        }
        Ok(weights.iter().copied().sum())
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        let mut weights = vec![S::zero(); n];
        weights[at] = S::one();
        Histogram { weights }
    }

    pub fn uniform(n: usize) -> Self {
        Histogram { weights: vec![S::one() / S::from_usize_lossy(n); n] }
    }

    /// Bin counts divided by their total.
    pub fn from_counts(counts: &[usize]) -> Self {
        let total = S::from_usize_lossy(counts.iter().sum());
        Histogram { weights: counts.iter().map(|&c| S::from_usize_lossy(c) / total).collect() }
    }

    /// `t * a + (1 - t) * b`.
    pub fn mix(t: S, a: &Self, b: &Self) -> Result<Self, HistogramError> {
        if a.len() != b.len() {
            return Err(HistogramError::DimensionMismatch(a.len(), b.len()));
        }
        let weights = a.weights.iter().zip(&b.weights).map(|(&x, &y)| t * x + (S::one() - t) * y).collect();
        Ok(Histogram { weights })
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Nonnegative flows `λ_ij` from bin `i` to bin `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan<S> {
    n: usize,
    flows: Vec<S>,
}

impl<S: Scalar> TransportPlan<S> {
    pub fn flow(&self, i: usize, j: usize) -> S {
        self.flows[i * self.n + j]
    }

    /// Arcs carrying positive flow as `(from, to, amount)`.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize, S)> + '_ {
        let n = self.n;
        self.flows.iter().enumerate().filter(|(_, f)| **f > S::zero()).map(move |(k, &f)| (k / n, k % n, f))
    }

    pub fn is_empty(&self) -> bool {
        self.arcs().next().is_none()
    }

    /// Outflow minus inflow at bin `i`.
    pub fn divergence(&self, i: usize) -> S {
        (0..self.n).map(|j| self.flow(i, j) - self.flow(j, i)).sum()
    }

    pub fn cost(&self, ground: &GroundSpace<S>) -> S {
        self.arcs().map(|(i, j, f)| f * ground.dist(i, j)).sum()
    }
}

/// Solution of the transport problem with its dual certificate.
#[derive(Clone, Debug)]
pub struct Transport<S> {
    pub distance: S,
    pub plan: TransportPlan<S>,
    /// 1-Lipschitz potential on the ground space.
    pub potentials: Vec<S>,
}

impl<S: Scalar> Transport<S> {
    /// `Σ φ_i (mu1_i - mu2_i)`.
    pub fn dual_value(&self, mu1: &Histogram<S>, mu2: &Histogram<S>) -> S {
        self.potentials.iter().zip(mu1.weights.iter().zip(&mu2.weights)).map(|(&p, (&a, &b))| p * (a - b)).sum()
    }
}

/// Kantorovich distance between two histograms over `ground`.
pub fn kantorovich<S: Scalar>(mu1: &Histogram<S>, mu2: &Histogram<S>, ground: &GroundSpace<S>) -> Result<Transport<S>, HistogramError> {
    ground.check(mu1)?;
    ground.check(mu2)?;
    let n = ground.len();
    let noise = S::epsilon() * S::lit(8.0);
    let supply: Vec<S> = mu1.weights.iter().zip(&mu2.weights).map(|(&a, &b)| if (a - b).abs() <= noise { S::zero() } else { a - b }).collect();
    let mut solver = Transshipment::new(ground, &supply);
    solver.run();
    let Transshipment { flow, pi, .. } = solver;

    let plan = TransportPlan { n, flows: flow };
    let worst = (0..n).map(|i| (plan.divergence(i) - (mu1.weights[i] - mu2.weights[i])).abs()).fold(S::zero(), S::max);
    if worst > S::lit(1e-9) {
        return Err(HistogramError::Infeasible(worst.as_f64()));
    }
    let floor = pi[..n].iter().copied().fold(S::infinity(), S::min);
    let potentials = pi[..n].iter().map(|&p| -(p - floor)).collect();
    Ok(Transport { distance: plan.cost(ground), plan, potentials })
}

#[derive(Clone, Copy, PartialEq)]
enum Via {
    None,
    Source,
    Arc(usize),
}

/// Successive shortest paths with Johnson potentials on a dense residual
/// graph: ground nodes `0..n`, super source `n`, super sink `n + 1`.
struct Transshipment<'a, S> {
    ground: &'a GroundSpace<S>,
    n: usize,
    flow: Vec<S>,
    supply_left: Vec<S>,
    demand_left: Vec<S>,
    pi: Vec<S>,
}

impl<'a, S: Scalar> Transshipment<'a, S> {
    fn new(ground: &'a GroundSpace<S>, supply: &[S]) -> Self {
        let n = ground.len();
        Transshipment {
            ground,
            n,
            flow: vec![S::zero(); n * n],
            supply_left: supply.iter().map(|&b| b.max(S::zero())).collect(),
            demand_left: supply.iter().map(|&b| (-b).max(S::zero())).collect(),
            pi: vec![S::zero(); n + 2],
        }
    }

    fn run(&mut self) {
        let (n, sink) = (self.n, self.n + 1);
        let mut dist = vec![S::zero(); n + 2];
        let mut via = vec![Via::None; n + 2];
        let mut done = vec![false; n + 2];
        // Each augmentation zeroes a supply, a demand or a residual arc.
        for _ in 0..(n * n + 2 * n + 4) {
            dist.iter_mut().for_each(|d| *d = S::infinity());
            via.iter_mut().for_each(|v| *v = Via::None);
            done.iter_mut().for_each(|d| *d = false);
            for i in 0..n {
                if self.supply_left[i] > S::zero() {
                    dist[i] = (self.pi[n] - self.pi[i]).max(S::zero());
                    via[i] = Via::Source;
                }
            }
            loop {
                let mut u = usize::MAX;
                let mut best = S::infinity();
                for (v, &d) in dist.iter().enumerate() {
                    if !done[v] && d < best {
                        best = d;
                        u = v;
                    }
                }
                if u == usize::MAX || u == sink {
                    break;
                }
                done[u] = true;
                if self.demand_left[u] > S::zero() {
                    let reduced = (self.pi[u] - self.pi[sink]).max(S::zero());
                    if best + reduced < dist[sink] {
                        dist[sink] = best + reduced;
                        via[sink] = Via::Arc(u);
                    }
                }
                for v in 0..n {
                    if v == u || done[v] {
                        continue;
                    }
                    let cost = if self.flow[v * n + u] > S::zero() { -self.ground.dist(v, u) } else { self.ground.dist(u, v) };
                    let reduced = (cost + self.pi[u] - self.pi[v]).max(S::zero());
                    if best + reduced < dist[v] {
                        dist[v] = best + reduced;
                        via[v] = Via::Arc(u);
                    }
                }
            }
            if !dist[sink].is_finite() {
                return;
            }
            let cap = dist[sink];
            for v in 0..n + 2 {
                self.pi[v] = self.pi[v] + dist[v].min(cap);
            }

            // Bottleneck along the path.
            let Via::Arc(last) = via[sink] else { unreachable!() };
            let mut theta = self.demand_left[last];
            let mut v = last;
            while let Via::Arc(u) = via[v] {
                if self.flow[v * n + u] > S::zero() {
                    theta = theta.min(self.flow[v * n + u]);
                }
                v = u;
            }
            theta = theta.min(self.supply_left[v]);
            let first = v;

            let take = |x: &mut S| *x = if *x == theta { S::zero() } else { (*x - theta).max(S::zero()) };
            take(&mut self.demand_left[last]);
            take(&mut self.supply_left[first]);
            let mut v = last;
            while let Via::Arc(u) = via[v] {
                if self.flow[v * n + u] > S::zero() {
                    take(&mut self.flow[v * n + u]);
                } else {
                    self.flow[u * n + v] = self.flow[u * n + v] + theta;
                }
                v = u;
            }
        }
    }
}

/// Norm on the target of [`extend_map`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Norm {
    #[default]
    Euclidean,
    L1,
    Max,
}

impl Norm {
    pub fn of<S: Scalar>(&self, v: impl Iterator<Item = S>) -> S {
        match self {
            Norm::Euclidean => v.map(|x| x * x).sum::<S>().sqrt(),
            Norm::L1 => v.map(|x| x.abs()).sum(),
            Norm::Max => v.map(|x| x.abs()).fold(S::zero(), S::max),
        }
    }

    pub fn distance<S: Scalar>(&self, a: &[S], b: &[S]) -> S {
        self.of(a.iter().zip(b).map(|(&x, &y)| x - y))
    }
}

/// Affine extension `μ ↦ Σ μ_i f(c_i)` of a nonexpansive map on the ground
/// space. It is 1-Lipschitz from the Kantorovich distance to the target norm.
#[derive(Clone, Debug)]
pub struct AffineExtension<S> {
    images: Vec<Vec<S>>,
    norm: Norm,
}

impl<S: Scalar> AffineExtension<S> {
    pub fn apply(&self, h: &Histogram<S>) -> Result<Vec<S>, HistogramError> {
        if h.len() != self.images.len() {
            return Err(HistogramError::DimensionMismatch(self.images.len(), h.len()));
        }
        let dim = self.images[0].len();
        let mut out = vec![S::zero(); dim];
        for (&w, img) in h.weights.iter().zip(&self.images) {
            for (o, &x) in out.iter_mut().zip(img) {
                *o = *o + w * x;
            }
        }
        Ok(out)
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn images(&self) -> &[Vec<S>] {
        &self.images
    }
}

pub fn extend_map<S: Scalar>(images: Vec<Vec<S>>, ground: &GroundSpace<S>, norm: Norm) -> Result<AffineExtension<S>, HistogramError> {
    if images.len() != ground.len() {
        return Err(HistogramError::DimensionMismatch(ground.len(), images.len()));
    }
    if let Some(img) = images.iter().find(|i| i.len() != images[0].len()) {
        return Err(HistogramError::DimensionMismatch(images[0].len(), img.len()));
    }
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            let image = norm.distance(&images[i], &images[j]);
            let g = ground.dist(i, j);
            if !S::approx_le(image, g) {
                return Err(HistogramError::Expansive { i, j, image: image.as_f64(), ground: g.as_f64() });
            }
        }
    }
    Ok(AffineExtension { images, norm })
}

/// Symmetric matrix defining `d(x, y)² = (x - y) A (x - y)ᵀ`, positive
/// semidefinite on zero-sum vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm<S> {
    n: usize,
    a: Vec<S>,
}

pub const FORM_PSD_TOL: f64 = 1e-9;

impl<S: Scalar> QuadraticForm<S> {
    pub fn new(n: usize, a: Vec<S>) -> Result<Self, HistogramError> {
        if n == 0 || a.len() != n * n {
            return Err(HistogramError::InvalidForm(format!("expected {} entries for n = {n}", n * n)));
        }
        for i in 0..n {
            for j in 0..i {
                if !S::approx_eq(a[i * n + j], a[j * n + i]) {
                    return Err(HistogramError::InvalidForm(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        // Compress onto the zero-sum subspace: P A P with P = I - J/n.
        let m = DMatrix::from_fn(n, n, |i, j| a[i * n + j].as_f64());
        let p = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let projected = &p * m * &p;
        let projected = (&projected + projected.transpose()) * 0.5;
        let lowest = SymmetricEigen::new(projected).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if lowest < -FORM_PSD_TOL {
            return Err(HistogramError::InvalidForm(format!("negative on zero-sum vectors (eigenvalue {lowest})")));
        }
        Ok(QuadraticForm { n, a })
    }

    pub fn identity(n: usize) -> Self {
        let mut a = vec![S::zero(); n * n];
        for i in 0..n {
            a[i * n + i] = S::one();
        }
        QuadraticForm { n, a }
    }

    /// `a_ij = 1 - d_ij` with `d_ij` the ground distances divided by their
    /// maximum.
    pub fn qbic(ground: &GroundSpace<S>) -> Result<Self, HistogramError> {
        let n = ground.len();
        let max = ground.max_distance();
        let scale = if max > S::zero() { max } else { S::one() };
        let a = (0..n * n).map(|k| S::one() - ground.dist(k / n, k % n) / scale).collect();
        Self::new(n, a)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> S {
        self.a[i * self.n + j]
    }

    /// `v A vᵀ`.
    pub fn value(&self, v: &[S]) -> S {
        let n = self.n;
        (0..n).map(|i| v[i] * (0..n).map(|j| self.a[i * n + j] * v[j]).sum::<S>()).sum()
    }
}

pub fn quadratic_distance<S: Scalar>(mu1: &Histogram<S>, mu2: &Histogram<S>, form: &QuadraticForm<S>) -> Result<S, HistogramError> {
    if mu1.len() != form.dim() || mu2.len() != form.dim() {
        return Err(HistogramError::DimensionMismatch(form.dim(), if mu1.len() != form.dim() { mu1.len() } else { mu2.len() }));
    }
    let v: Vec<S> = mu1.weights.iter().zip(&mu2.weights).map(|(&a, &b)| a - b).collect();
    let q = form.value(&v);
    if q < -S::lit(FORM_PSD_TOL) {
        return Err(HistogramError::InvalidForm(format!("negative quadratic value {q}")));
    }
    Ok(q.max(S::zero()).sqrt())
}

pub const EMBED_CLIP_TOL: f64 = 1e-6;

/// Embeds the ground space in Euclidean space so that embedded distances are
/// `sqrt(ρ(c_i, c_j))`, using the Gram matrix `(1 - ρ_ij) / 2`. Every
/// embedded point has norm `sqrt(1/2)`. Distances must be at most 1.
pub fn embed_sqrt_transform<S: Scalar>(ground: &GroundSpace<S>) -> Result<Vec<Vec<S>>, HistogramError> {
    let n = ground.len();
    let max = ground.max_distance();
    if !S::approx_le(max, S::one()) {
        return Err(HistogramError::InvalidGround(format!("distances must be normalized to at most 1, found {max}")));
    }
    let gram = DMatrix::from_fn(n, n, |i, j| 0.5 * (1.0 - ground.dist(i, j).as_f64()));
    let eig = SymmetricEigen::new(gram);
    let lowest = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if lowest < -EMBED_CLIP_TOL {
        return Err(HistogramError::NotEmbeddable { eigenvalue: lowest });
    }
    let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.0).collect();
    Ok((0..n)
        .map(|i| keep.iter().map(|&k| S::lit(eig.eigenvectors[(i, k)] * eig.eigenvalues[k].sqrt())).collect())
        .collect())
}

/// Parses one histogram record: a ground-space id followed by the weights,
/// separated by whitespace or commas.
pub fn parse_histogram_record<S: Scalar>(line: &str) -> Result<(String, Histogram<S>), HistogramError> {
    let mut fields = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty());
    let id = fields.next().ok_or_else(|| HistogramError::Record("empty record".into()))?.to_owned();
    let weights = fields
        .enumerate()
        .map(|(col, f)| f.parse::<f64>().map(S::lit).map_err(|_| HistogramError::Record(format!("column {}: {f:?} is not a number", col + 2))))
        .collect::<Result<Vec<S>, _>>()?;
    if weights.is_empty() {
        return Err(HistogramError::Record("no weights".into()));
    }
    Ok((id, Histogram::renormalized(weights)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn line(points: &[f64]) -> GroundSpace<f64> {
        GroundSpace::from_coords("line", points.iter().map(|&x| vec![x]).collect()).unwrap()
    }

    fn h(w: &[f64]) -> Histogram<f64> {
        Histogram::new(w.to_vec()).unwrap()
    }

    #[test]
    fn equal_histograms_have_zero_cost_and_empty_plan() {
        let g = line(&[0.0, 1.0, 2.0]);
        let mu = h(&[0.2, 0.3, 0.5]);
        let t = kantorovich(&mu, &mu, &g).unwrap();
        assert_eq!(t.distance, 0.0);
        assert!(t.plan.is_empty());
    }

    #[test]
    fn point_masses_cost_their_distance() {
        let g = GroundSpace::from_table("pair", 2, vec![0.0, 0.7, 0.7, 0.0]).unwrap();
        let t = kantorovich(&Histogram::point_mass(2, 0), &Histogram::point_mass(2, 1), &g).unwrap();
        assert_eq!(t.distance, 0.7);
        assert_eq!(t.plan.arcs().collect::<Vec<_>>(), vec![(0, 1, 1.0)]);
    }

    #[test]
    fn split_mass_on_a_line() {
        let g = line(&[0.0, 1.0, 2.0]);
        let t = kantorovich(&Histogram::point_mass(3, 0), &h(&[0.0, 0.5, 0.5]), &g).unwrap();
        assert!((t.distance - 1.5).abs() < 1e-12);
        assert!((t.dual_value(&Histogram::point_mass(3, 0), &h(&[0.0, 0.5, 0.5])) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn certificate_is_lipschitz_and_tight() {
        let mut r = rng::stream(1, "hist-cert", 0);
        for _ in 0..50 {
            let n = r.gen_range(2..12);
            let g = GroundSpace::from_coords("rand", (0..n).map(|_| vec![r.gen::<f64>(), r.gen::<f64>()]).collect()).unwrap();
            let draw = |r: &mut rng::Rng| {
                let w: Vec<f64> = (0..n).map(|_| if r.gen_bool(0.3) { 0.0 } else { r.gen() }).collect();
                let s: f64 = w.iter().sum::<f64>().max(1e-12);
                Histogram::renormalized(w.iter().map(|x| x / s).collect()).unwrap_or_else(|_| Histogram::point_mass(n, 0))
            };
            let (a, b) = (draw(&mut r), draw(&mut r));
            let t = kantorovich(&a, &b, &g).unwrap();
            assert!((t.dual_value(&a, &b) - t.distance).abs() < 1e-9);
            for i in 0..n {
                assert!((t.plan.divergence(i) - (a.weights()[i] - b.weights()[i])).abs() < 1e-9);
                for j in 0..n {
                    assert!(t.potentials[i] - t.potentials[j] <= g.dist(i, j) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn dimension_and_weight_errors() {
        let g = line(&[0.0, 1.0]);
        assert!(matches!(kantorovich(&Histogram::point_mass(3, 0), &Histogram::point_mass(2, 0), &g), Err(HistogramError::DimensionMismatch(2, 3))));
        assert!(Histogram::new(vec![0.5, 0.6]).is_err());
        assert!(Histogram::new(vec![1.5, -0.5]).is_err());
        assert!(Histogram::renormalized(vec![0.5, 0.5 + 5e-7]).is_ok());
        assert!(Histogram::renormalized(vec![0.45, 0.45]).is_err());
        assert!(GroundSpace::from_table("bad", 3, vec![0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn extension_examples() {
        let g = line(&[0.0, 1.0, 3.0]);
        let ext = extend_map(vec![vec![0.0], vec![1.0], vec![3.0]], &g, Norm::Euclidean).unwrap();
        for i in 0..3 {
            assert_eq!(ext.apply(&Histogram::point_mass(3, i)).unwrap(), ext.images()[i]);
        }
        assert_eq!(ext.apply(&h(&[0.5, 0.0, 0.5])).unwrap(), vec![1.5]);
        let err = extend_map(vec![vec![0.0], vec![2.0], vec![3.0]], &g, Norm::Euclidean).unwrap_err();
        assert!(matches!(err, HistogramError::Expansive { i: 0, j: 1, .. }));
    }

    #[test]
    fn quadratic_examples() {
        let i3 = QuadraticForm::identity(3);
        let (a, b) = (h(&[0.2, 0.3, 0.5]), h(&[0.5, 0.5, 0.0]));
        let euclid = ((0.3f64).powi(2) + 0.2f64.powi(2) + 0.5f64.powi(2)).sqrt();
        assert!((quadratic_distance(&a, &b, &i3).unwrap() - euclid).abs() < 1e-15);
        assert_eq!(quadratic_distance(&a, &a, &i3).unwrap(), 0.0);
        assert!(QuadraticForm::new(2, vec![1.0, 2.0, 0.0, 1.0]).is_err());
        // Negative on (1, -1).
        assert!(QuadraticForm::new(2, vec![0.0, 1.0, 1.0, 0.0]).is_err());
        assert!(matches!(quadratic_distance(&a, &h(&[0.5, 0.5]), &i3), Err(HistogramError::DimensionMismatch(3, 2))));
    }

    #[test]
    fn sqrt_embedding_small_cases() {
        let pair = GroundSpace::from_table("pair", 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let e = embed_sqrt_transform(&pair).unwrap();
        assert!((Norm::Euclidean.distance::<f64>(&e[0], &e[1]) - 1.0).abs() < 1e-12);

        let tri = GroundSpace::from_coords("tri", vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]]).unwrap();
        let e = embed_sqrt_transform(&tri).unwrap();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!((Norm::Euclidean.distance::<f64>(&e[i], &e[j]) - 1.0).abs() < 1e-9);
            }
            assert!((Norm::Euclidean.of::<f64>(e[i].iter().copied()) - 0.5f64.sqrt()).abs() < 1e-9);
        }
        assert!(embed_sqrt_transform(&line(&[0.0, 2.0])).is_err());
    }

    #[test]
    fn non_negative_type_space_is_not_embeddable() {
        // K_{2,3} path metric with distances scaled into [0, 1]: its square
        // root is not Euclidean.
        let n = 5;
        let side = |i: usize| i < 2;
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d[i * n + j] = if side(i) == side(j) { 1.0 } else { 0.5 };
                }
            }
        }
        let g = GroundSpace::from_table("k23", n, d).unwrap();
        assert!(matches!(embed_sqrt_transform(&g), Err(HistogramError::NotEmbeddable { .. })));
    }

    #[test]
    fn record_parsing() {
        let (id, hist) = parse_histogram_record::<f64>("lattice:0.5 0.5, 0.5 0 0 0 0").unwrap();
        assert_eq!(id, "lattice:0.5");
        assert_eq!(hist.len(), 6);
        assert!(parse_histogram_record::<f64>("g 0.3 0.3 0.3").is_err());
        assert!(matches!(parse_histogram_record::<f64>("g 0.5 x"), Err(HistogramError::Record(_))));
    }
}
