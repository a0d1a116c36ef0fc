//! Similarity search in metric spaces.
//!
//! - [`metric`]: points, dissimilarity measures, metric validation, metric transforms.
//! - [`histogram`]: Kantorovich and quadratic distances on histograms over a finite ground space.
//! - [`index`]: vantage-point tree with certified pruning, range and k-NN queries.
//! - [`prefilter`]: range queries answered through a cheaper distance plus verification.
//! - [`concentration`]: concentration functions, covering numbers, blow-up measurements.
//! - [`colour`]: the colour-triangle histogram workload.
//! - [`cli`]: the `simgeom` command-line front end.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f64` and `f32`);
//! the `*64` aliases below fix `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod colour;
pub mod concentration;
pub mod histogram;
pub mod index;
pub mod metric;
pub mod prefilter;
pub mod rng;
pub mod scalar;

pub type Point64 = metric::Point<f64>;
pub type Measure64 = metric::Measure<f64>;
pub type Histogram64 = histogram::Histogram<f64>;
pub type GroundSpace64 = histogram::GroundSpace<f64>;
pub type Workload64 = index::Workload<f64>;
pub type VpTree64 = index::VpTree<f64>;
pub type ApproxMeasure64 = prefilter::ApproxMeasure<f64>;
pub type Prefilter64 = prefilter::Prefilter<f64>;
pub type FiniteSpace64 = concentration::FiniteSpace<f64>;
pub type ColourLattice64 = colour::ColourLattice<f64>;
