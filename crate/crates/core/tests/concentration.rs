mod common;

use std::sync::Arc;

use simgeom::concentration::{
    blowup_experiment, estimate_concentration, median_concentration_check, BlowupConfig, ConcentrationConfig, ProbabilityMetricSpace,
};
use simgeom::index::Sampler;
use simgeom::metric::{Measure, Point};
use simgeom::prefilter::project_measure;

fn cube_sampler(dim: usize) -> Sampler<f64> {
    Arc::new(move |r| common::random_coords(dim, r))
}

#[test]
fn first_coordinate_slab_on_the_cube() {
    let dim = 20;
    let space = ProbabilityMetricSpace::Sampled { sampler: cube_sampler(dim), measure: Measure::euclidean(dim) };
    let cfg = ConcentrationConfig { sample_size: 2000, seed: 1, ..Default::default() };
    let alpha = estimate_concentration(&space, &[0.1], &cfg).unwrap();
    let finite = space.empirical(cfg.sample_size, cfg.seed).unwrap();
    let pts = finite.points().unwrap().to_vec();
    let check = median_concentration_check(&finite, |i| pts[i].coords().unwrap()[0], 0.1, &alpha).unwrap();
    // Closed form: the slab (M − 0.1, M + 0.1) has mass 0.2 under the uniform law.
    let se = (0.2f64 * 0.8 / 2000.0).sqrt();
    assert!((check.mass - 0.2).abs() < 4.0 * se, "{check:?}");
    assert!(!check.asserted);
}

#[test]
fn projection_blowup_at_full_scale() {
    let dim = 20;
    let rho = Measure::euclidean(dim);
    let d = project_measure(&rho, &[0]).unwrap();
    let cfg = BlowupConfig { samples: 100_000, queries: 50, geometry_sample: 500, hypothesis_pairs: 10_000, seed: 2 };
    let b = blowup_experiment(&cube_sampler(dim), &rho, &d, 0.1, 0.1, &cfg).unwrap();
    let se = (0.2f64 * 0.8 / 1e5).sqrt();
    assert!(b.worst_mass_d <= 0.2 + 4.0 * se && b.worst_mass_d > 0.18, "{b:?}");
    assert_eq!(b.mass_rho_at_worst, 0.0);
    assert!(b.cover.n > 1);
    assert_eq!(b.alpha.grid, vec![0.1 / 3.0]);
}

#[test]
fn identical_metric_has_no_blowup() {
    let rho = Measure::l1(3);
    let approx = simgeom::prefilter::ApproxMeasure::exact(rho.clone());
    let cfg = BlowupConfig { samples: 5000, queries: 30, geometry_sample: 200, hypothesis_pairs: 2000, seed: 3 };
    let b = blowup_experiment(&cube_sampler(3), &rho, &approx, 0.4, 0.4, &cfg).unwrap();
    assert_eq!(b.worst_mass_d, b.mass_rho_at_worst);
    assert_eq!(b.mean_mass_d, b.mean_mass_rho);
}

#[test]
fn sampled_space_estimates_are_reproducible() {
    let space = ProbabilityMetricSpace::sampled(Measure::<f64>::euclidean(2), |r| Point::Coords(vec![rand::Rng::gen(r), rand::Rng::gen(r)]));
    let cfg = ConcentrationConfig { sample_size: 400, seed: 9, ..Default::default() };
    let grid = [0.05, 0.1, 0.2, 0.4, 0.8, 1.6];
    let a = estimate_concentration(&space, &grid, &cfg).unwrap();
    assert_eq!(a, estimate_concentration(&space, &grid, &cfg).unwrap());
    assert!(a.is_nonincreasing());
    assert_eq!(*a.values.last().unwrap(), 0.0);
}
