//! Colour-histogram workload: the equilateral colour triangle, its
//! triangular lattice segmentation, uniformly random images, the histogram
//! map σ and the average-colour map, and the blow-up experiment for
//! average-colour prefiltering.

use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::histogram::{extend_map, AffineExtension, GroundSpace, Histogram, HistogramError, Norm};
use crate::index::{IndexError, Workload};
use crate::metric::{Measure, Point};
use crate::prefilter::{ApproxMeasure, Modulus};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ColourError {
    #[error("spacing must lie in (0, 1], got {0}")]
    SpacingOutOfRange(f64),
    #[error("1/spacing must be an integer so that the lattice contains the vertices, got spacing {0}")]
    SpacingNotReciprocal(f64),
    #[error("images have different lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("pixel {pixel} has colour id {id} outside the lattice of {size} points")]
    BadPixel { pixel: usize, id: usize, size: usize },
    #[error("an image needs at least one pixel")]
    ZeroPixels,
    #[error(transparent)]
    Histogram(#[from] HistogramError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Vertices R, G, B of the colour triangle with side 1.
pub fn vertices<S: Scalar>() -> [[S; 2]; 3] {
    let half = S::lit(0.5);
    [[S::zero(), S::zero()], [S::one(), S::zero()], [half, S::lit(3.0).sqrt() * half]]
}

pub fn centroid<S: Scalar>() -> [S; 2] {
    let v = vertices::<S>();
    let three = S::lit(3.0);
    [(v[0][0] + v[1][0] + v[2][0]) / three, (v[0][1] + v[1][1] + v[2][1]) / three]
}

pub const TRIANGLE_AREA: f64 = 0.433_012_701_892_219_3;

/// Finite colour palette: lattice points of the triangle at a given spacing.
#[derive(Clone, Debug)]
pub struct ColourLattice<S: Scalar> {
    spacing: S,
    ground: Arc<GroundSpace<S>>,
    average: AffineExtension<S>,
}

/// `(m+1)(m+2)/2` points `R + (i/m)(G−R) + (j/m)(B−R)` with `i + j ≤ m`,
/// `m = 1/spacing`, ordered by `j` then `i`.
pub fn build_lattice<S: Scalar>(spacing: S) -> Result<ColourLattice<S>, ColourError> {
    let h = spacing.as_f64();
    if !(h > 0.0 && h <= 1.0) {
        return Err(ColourError::SpacingOutOfRange(h));
    }
    let m = (1.0 / h).round();
    if (m * h - 1.0).abs() > 1e-9 {
        return Err(ColourError::SpacingNotReciprocal(h));
    }
    let m = m as usize;
    let [r, g, b] = vertices::<S>();
    let step = S::one() / S::from_usize_lossy(m);
    let mut coords = Vec::with_capacity((m + 1) * (m + 2) / 2);
    for j in 0..=m {
        for i in 0..=m - j {
            let (s, t) = (S::from_usize_lossy(i) * step, S::from_usize_lossy(j) * step);
            coords.push(vec![r[0] + s * (g[0] - r[0]) + t * (b[0] - r[0]), r[1] + s * (g[1] - r[1]) + t * (b[1] - r[1])]);
        }
    }
    let ground = GroundSpace::from_coords(format!("lattice:{h}"), coords.clone())?;
    let average = extend_map(coords, &ground, Norm::Euclidean)?;
    Ok(ColourLattice { spacing, ground: Arc::new(ground), average })
}

impl<S: Scalar> ColourLattice<S> {
    pub fn spacing(&self) -> S {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.ground.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ground.is_empty()
    }

    pub fn ground(&self) -> &Arc<GroundSpace<S>> {
        &self.ground
    }

    pub fn point(&self, id: usize) -> &[S] {
        &self.ground.coords().expect("lattice has coordinates")[id]
    }

    pub fn points(&self) -> &[Vec<S>] {
        self.ground.coords().expect("lattice has coordinates")
    }

    /// The affine extension of the inclusion of the palette into the plane.
    pub fn average_map(&self) -> &AffineExtension<S> {
        &self.average
    }
}

/// Picture function `{0, …, k−1} → palette`, as lattice point ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Image {
    pub pixels: Vec<usize>,
}

impl Image {
    pub fn new<S: Scalar>(pixels: Vec<usize>, lattice: &ColourLattice<S>) -> Result<Self, ColourError> {
        if pixels.is_empty() {
            return Err(ColourError::ZeroPixels);
        }
        if let Some((pixel, &id)) = pixels.iter().enumerate().find(|(_, &id)| id >= lattice.len()) {
            return Err(ColourError::BadPixel { pixel, id, size: lattice.len() });
        }
        Ok(Image { pixels })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Normalized sum metric `(1/k) Σ ρ(x_i, y_i)` on images.
pub fn image_metric<S: Scalar>(x: &Image, y: &Image, lattice: &ColourLattice<S>) -> Result<S, ColourError> {
    if x.len() != y.len() {
        return Err(ColourError::LengthMismatch(x.len(), y.len()));
    }
    let g = lattice.ground();
    let sum: S = x.pixels.iter().zip(&y.pixels).map(|(&a, &b)| g.dist(a, b)).sum();
    Ok(sum / S::from_usize_lossy(x.len().max(1)))
}

fn random_image<S: Scalar>(lattice: &ColourLattice<S>, k: usize, r: &mut rng::Rng) -> Image {
    Image { pixels: (0..k).map(|_| r.gen_range(0..lattice.len())).collect() }
}

/// Images with independent uniform pixels; image `i` uses its own stream.
pub fn sample_images<S: Scalar>(lattice: &ColourLattice<S>, k: usize, count: usize, seed: u64) -> Result<Vec<Image>, ColourError> {
    if k == 0 {
        return Err(ColourError::ZeroPixels);
    }
    Ok((0..count).into_par_iter().map(|i| random_image(lattice, k, &mut rng::stream(seed, "colour-image", i as u64))).collect())
}

/// σ: pixel frequencies.
pub fn histogram_map<S: Scalar>(x: &Image, lattice: &ColourLattice<S>) -> Histogram<S> {
    let mut counts = vec![0usize; lattice.len()];
    for &p in &x.pixels {
        counts[p] += 1;
    }
    Histogram::from_counts(&counts)
}

/// Barycentre `Σ λ_c · c` of a histogram over the palette.
pub fn average_colour<S: Scalar>(h: &Histogram<S>, lattice: &ColourLattice<S>) -> Result<[S; 2], ColourError> {
    let v = lattice.average_map().apply(h)?;
    Ok([v[0], v[1]])
}

/// Distance between average colours as a cheap stand-in for the
/// Kantorovich distance; the average-colour map is 1-Lipschitz, so `δ = ε`.
pub fn average_colour_measure<S: Scalar>(lattice: &ColourLattice<S>) -> ApproxMeasure<S> {
    let map = lattice.average_map().clone();
    let f = move |x: &Point<S>, y: &Point<S>| match (x.histogram(), y.histogram()) {
        (Some(a), Some(b)) => match (map.apply(a), map.apply(b)) {
            (Ok(p), Ok(q)) => Norm::Euclidean.distance(&p, &q),
            _ => S::nan(),
        },
        _ => S::nan(),
    };
    ApproxMeasure::new(Measure::custom("average-colour", f).pseudo(true), Modulus::identity()).expect("identity modulus")
}

/// Histograms of `size` random images under the Kantorovich distance, with
/// random-image histograms as the query distribution.
pub fn colour_workload<S: Scalar>(lattice: &ColourLattice<S>, k: usize, size: usize, seed: u64) -> Result<Workload<S>, ColourError> {
    let data = sample_images(lattice, k, size, seed)?.iter().map(|x| Point::Histogram(histogram_map(x, lattice))).collect();
    let sampling = lattice.clone();
    Ok(Workload::new(Measure::kantorovich(lattice.ground().clone()), data)?
        .with_sampler(move |r| Point::Histogram(histogram_map(&random_image(&sampling, k, r), &sampling))))
}

/// Area of the open disc of radius `eps` about the centroid that lies in
/// the triangle, as a fraction of the triangle's area. Exact: once the disc
/// crosses the sides, three circular segments are cut off, and they stay
/// disjoint until the disc swallows the triangle.
pub fn ball_area_ratio(eps: f64) -> f64 {
    let inradius = 3f64.sqrt() / 6.0;
    let circumradius = 3f64.sqrt() / 3.0;
    if eps <= 0.0 {
        return 0.0;
    }
    if eps >= circumradius {
        return 1.0;
    }
    let disc = std::f64::consts::PI * eps * eps;
    let cut = if eps > inradius {
        3.0 * (eps * eps * (inradius / eps).acos() - inradius * (eps * eps - inradius * inradius).sqrt())
    } else {
        0.0
    };
    (disc - cut) / TRIANGLE_AREA
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColourExperiment {
    pub k: usize,
    pub epsilon: f64,
    pub spacing: f64,
    pub sample_count: usize,
    pub seed: u64,
    /// Fraction of sampled images an ε-range average-colour prefilter centred
    /// at the centroid cannot exclude.
    pub measured_mass: f64,
    pub standard_error: f64,
    /// `1 − 2·exp(−ε²k/8)`.
    pub blowup_bound: f64,
    pub ball_area_ratio: f64,
    /// `½·exp(−ε²k/4)`.
    pub concentration_bound: f64,
}

/// Query centre: the uniform histogram, whose average colour is the
/// centroid. Images are generated in parallel from per-image streams and
/// never stored.
pub fn qbic_blowup_experiment<S: Scalar>(
    lattice: &ColourLattice<S>,
    k: usize,
    eps: S,
    samples: usize,
    seed: u64,
) -> Result<ColourExperiment, ColourError> {
    if k == 0 {
        return Err(ColourError::ZeroPixels);
    }
    let centre = average_colour(&Histogram::uniform(lattice.len()), lattice)?;
    let inside = (0..samples)
        .into_par_iter()
        .map(|i| {
            let x = random_image(lattice, k, &mut rng::stream(seed, "colour-image", i as u64));
            let a = average_colour(&histogram_map(&x, lattice), lattice)?;
            Ok::<_, ColourError>(usize::from(Norm::Euclidean.distance(&a, &centre) < eps))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let p = inside as f64 / samples.max(1) as f64;
    let (e, kf) = (eps.as_f64(), k as f64);
    Ok(ColourExperiment {
        k,
        epsilon: e,
        spacing: lattice.spacing().as_f64(),
        sample_count: samples,
        seed,
        measured_mass: p,
        standard_error: (p * (1.0 - p) / samples.max(1) as f64).sqrt(),
        blowup_bound: 1.0 - 2.0 * (-e * e * kf / 8.0).exp(),
        ball_area_ratio: ball_area_ratio(e),
        concentration_bound: 0.5 * (-e * e * kf / 4.0).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::kantorovich;

    fn lattice(h: f64) -> ColourLattice<f64> {
        build_lattice(h).unwrap()
    }

    #[test]
    fn lattice_sizes_and_vertices() {
        assert_eq!(lattice(1.0).len(), 3);
        assert_eq!(lattice(0.5).len(), 6);
        let l = lattice(0.1);
        assert_eq!(l.len(), 66);
        for v in vertices::<f64>() {
            assert!(l.points().iter().any(|p| (p[0] - v[0]).abs() < 1e-12 && (p[1] - v[1]).abs() < 1e-12));
        }
        let mut min = f64::INFINITY;
        for i in 0..l.len() {
            for j in i + 1..l.len() {
                min = min.min(l.ground().dist(i, j));
            }
        }
        assert!((min - 0.1).abs() < 1e-9);
    }

    #[test]
    fn lattice_inside_triangle() {
        for h in [1.0, 0.5, 0.25, 0.1, 0.05] {
            for p in lattice(h).points() {
                let t = p[1] / (3f64.sqrt() / 2.0);
                let s = p[0] - t / 2.0;
                for bary in [s, t, 1.0 - s - t] {
                    assert!((-1e-12..=1.0 + 1e-12).contains(&bary));
                }
            }
        }
    }

    #[test]
    fn lattice_errors() {
        assert!(matches!(build_lattice(1.5), Err(ColourError::SpacingOutOfRange(_))));
        assert!(matches!(build_lattice(0.0), Err(ColourError::SpacingOutOfRange(_))));
        assert!(matches!(build_lattice(0.3), Err(ColourError::SpacingNotReciprocal(_))));
    }

    #[test]
    fn image_metric_examples() {
        let l = lattice(1.0);
        let x = Image::new(vec![0, 1], &l).unwrap();
        let y = Image::new(vec![0, 2], &l).unwrap();
        assert_eq!(image_metric(&x, &x, &l).unwrap(), 0.0);
        assert!((image_metric(&x, &y, &l).unwrap() - 0.5).abs() < 1e-15);
        assert!(image_metric(&x, &Image::new(vec![0], &l).unwrap(), &l).is_err());
        assert!(matches!(Image::new(vec![3], &l), Err(ColourError::BadPixel { id: 3, .. })));
    }

    #[test]
    fn image_metric_axioms() {
        let l = lattice(0.25);
        let imgs = sample_images(&l, 7, 60, 1).unwrap();
        for a in &imgs[..20] {
            for b in &imgs[20..40] {
                let ab = image_metric(a, b, &l).unwrap();
                assert!(ab > 0.0 && ab == image_metric(b, a, &l).unwrap());
                for c in &imgs[40..] {
                    assert!(image_metric(a, c, &l).unwrap() <= ab + image_metric(b, c, &l).unwrap() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_sized() {
        let l = lattice(0.1);
        assert_eq!(sample_images(&l, 50, 5, 3).unwrap(), sample_images(&l, 50, 5, 3).unwrap());
        assert_ne!(sample_images(&l, 50, 5, 3).unwrap(), sample_images(&l, 50, 5, 4).unwrap());
        assert!(sample_images(&l, 10_000, 10, 0).unwrap().iter().all(|x| x.len() == 10_000));
        assert!(sample_images(&l, 0, 1, 0).is_err());
    }

    #[test]
    fn histogram_and_average_examples() {
        let l = lattice(0.5);
        let mono = Image::new(vec![4; 9], &l).unwrap();
        assert_eq!(histogram_map(&mono, &l), Histogram::point_mass(6, 4));
        let two = histogram_map(&Image::new(vec![1, 5], &l).unwrap(), &l);
        assert_eq!(two.weights()[1], 0.5);
        assert_eq!(two.weights()[5], 0.5);

        let l = lattice(1.0);
        assert_eq!(average_colour(&Histogram::point_mass(3, 0), &l).unwrap(), [0.0, 0.0]);
        let c = average_colour(&Histogram::uniform(3), &l).unwrap();
        let g = centroid::<f64>();
        assert!((c[0] - g[0]).abs() < 1e-15 && (c[1] - g[1]).abs() < 1e-15);
    }

    #[test]
    fn sigma_and_average_are_lipschitz() {
        let l = lattice(0.2);
        let imgs = sample_images(&l, 12, 80, 5).unwrap();
        for pair in imgs.chunks(2) {
            let (hx, hy) = (histogram_map(&pair[0], &l), histogram_map(&pair[1], &l));
            let k = kantorovich(&hx, &hy, l.ground()).unwrap().distance;
            assert!(k <= image_metric(&pair[0], &pair[1], &l).unwrap() + 1e-9);
            let (a, b) = (average_colour(&hx, &l).unwrap(), average_colour(&hy, &l).unwrap());
            assert!(Norm::Euclidean.distance(&a, &b) <= k + 1e-9);
        }
    }

    #[test]
    fn ball_area_ratio_closed_form() {
        let r = ball_area_ratio(0.1);
        assert!((r - std::f64::consts::PI * 0.01 / (3f64.sqrt() / 4.0)).abs() < 1e-15);
        assert!(r <= 0.073);
        assert_eq!(ball_area_ratio(0.6), 1.0);
        assert!((ball_area_ratio(3f64.sqrt() / 3.0 - 1e-9) - 1.0).abs() < 1e-6);
        let mut r = rng::stream(0, "area", 0);
        let eps = 0.4;
        let g = centroid::<f64>();
        let (mut hit, mut total) = (0usize, 0usize);
        while total < 400_000 {
            let (s, t): (f64, f64) = (r.gen(), r.gen());
            if s + t > 1.0 {
                continue;
            }
            total += 1;
            let p = [s + t / 2.0, t * 3f64.sqrt() / 2.0];
            hit += usize::from(((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt() < eps);
        }
        let mc = hit as f64 / total as f64;
        assert!((mc - ball_area_ratio(eps)).abs() < 4.0 * (mc * (1.0 - mc) / total as f64).sqrt());
    }

    #[test]
    fn experiment_limits() {
        let l = lattice(0.1);
        let big = qbic_blowup_experiment(&l, 10, 0.6, 200, 1).unwrap();
        assert_eq!(big.measured_mass, 1.0);
        let small = qbic_blowup_experiment(&l, 10, 0.05, 2000, 1).unwrap();
        assert!(small.measured_mass < 1.0);
        assert_eq!(small, qbic_blowup_experiment(&l, 10, 0.05, 2000, 1).unwrap());
    }

    #[test]
    fn average_colour_prefilter_is_exact() {
        let l = lattice(0.25);
        let w = colour_workload(&l, 20, 150, 2).unwrap();
        let p = crate::prefilter::Prefilter::new(w.clone(), average_colour_measure(&l), 0).unwrap();
        let q = Point::Histogram(Histogram::uniform(l.len()));
        for eps in [0.05, 0.1, 0.2] {
            let (ids, stats) = p.filtered_range_query(&q, eps).unwrap();
            assert_eq!(ids, w.linear_range(&q, eps).unwrap());
            assert!(stats.candidates >= ids.len());
        }
    }
}
