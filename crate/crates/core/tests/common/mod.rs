//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use simgeom::histogram::{GroundSpace, Histogram};
use simgeom::metric::Point;
use simgeom::rng;

/// Kantorovich distance by enumerating every vertex of the dual polytope
/// `{f : f_i − f_j ≤ d_ij, f_0 = 0}`. A vertex has a spanning tree of tight
/// constraints, so all labelled trees (Prüfer sequences) times all edge
/// orientations are tried, and the best feasible objective is the optimum.
pub fn kantorovich_by_dual_vertices(ground: &GroundSpace<f64>, a: &[f64], b: &[f64]) -> f64 {
    let n = ground.len();
    if n == 1 {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    let trees = n.pow(n as u32 - 2);
    for code in 0..trees {
        let mut seq = Vec::with_capacity(n - 2);
        let mut c = code;
        for _ in 0..n - 2 {
            seq.push(c % n);
            c /= n;
        }
        let edges = prufer_decode(&seq, n);
        for orient in 0..1u32 << (n - 1) {
            let f = tree_potential(&edges, orient, n, ground);
            let feasible = (0..n).all(|i| (0..n).all(|j| f[i] - f[j] <= ground.dist(i, j) + 1e-12));
            if feasible {
                let v: f64 = (0..n).map(|i| f[i] * (a[i] - b[i])).sum();
                best = best.max(v);
            }
        }
    }
    best
}

fn prufer_decode(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &s in seq {
        let leaf = (0..n).find(|&i| degree[i] == 1).expect("a leaf exists");
        edges.push((leaf, s));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| degree[i] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

fn tree_potential(edges: &[(usize, usize)], orient: u32, n: usize, ground: &GroundSpace<f64>) -> Vec<f64> {
    let mut f = vec![f64::NAN; n];
    f[0] = 0.0;
    let mut changed = true;
    while changed {
        changed = false;
        for (e, &(u, v)) in edges.iter().enumerate() {
            let s = if orient >> e & 1 == 1 { 1.0 } else { -1.0 };
            if f[u].is_nan() && !f[v].is_nan() {
                f[u] = f[v] - s * ground.dist(u, v);
                changed = true;
            } else if f[v].is_nan() && !f[u].is_nan() {
                f[v] = f[u] + s * ground.dist(u, v);
                changed = true;
            }
        }
    }
    f
}

/// Random histogram, sometimes with empty bins.
pub fn random_histogram(n: usize, r: &mut rng::Rng) -> Histogram<f64> {
    let sparse = r.gen_bool(0.3);
    let mut w: Vec<f64> = (0..n).map(|_| if sparse && r.gen_bool(0.5) { 0.0 } else { -r.gen::<f64>().max(1e-300).ln() }).collect();
    if w.iter().all(|&x| x == 0.0) {
        w[r.gen_range(0..n)] = 1.0;
    }
    let s: f64 = w.iter().sum();
    Histogram::new(w.iter().map(|x| x / s).collect()).expect("normalized")
}

/// Ground spaces of every size up to `max_n`: random planar points, a
/// random graph metric, and the discrete metric.
pub fn small_ground_spaces(max_n: usize, seed: u64) -> Vec<GroundSpace<f64>> {
    let mut out = Vec::new();
    let mut r = rng::stream(seed, "grounds", 0);
    for n in 1..=max_n {
        let pts = (0..n).map(|_| vec![r.gen::<f64>(), r.gen::<f64>()]).collect();
        out.push(GroundSpace::from_coords(format!("plane{n}"), pts).unwrap());
        let mut d = vec![f64::INFINITY; n * n];
        for i in 0..n {
            d[i * n + i] = 0.0;
            for j in i + 1..n {
                let w = r.gen_range(0.1..2.0);
                d[i * n + j] = w;
                d[j * n + i] = w;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    d[i * n + j] = d[i * n + j].min(d[i * n + k] + d[k * n + j]);
                }
            }
        }
        out.push(GroundSpace::from_table(format!("graph{n}"), n, d).unwrap());
        let discrete = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { 1.0 }).collect();
        out.push(GroundSpace::from_table(format!("discrete{n}"), n, discrete).unwrap());
    }
    out
}

/// Exact α on the uniform cube `{0,1}^n` by trying every subset of size at
/// least `2^(n−1)`; only for `n ≤ 4`.
pub fn cube_alpha_brute_force(n: u32, eps: f64) -> f64 {
    let size = 1usize << n;
    assert!(size <= 16);
    let mut best = size;
    for set in 0u32..1 << size {
        if (set.count_ones() as usize) * 2 < size {
            continue;
        }
        let nbhd = (0..size).filter(|&x| (0..size).any(|a| set >> a & 1 == 1 && (((x ^ a).count_ones()) as f64) < eps)).count();
        best = best.min(nbhd);
    }
    (1.0 - best as f64 / size as f64).min(0.5)
}

pub fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

pub fn random_coords(dim: usize, r: &mut rng::Rng) -> Point<f64> {
    Point::Coords((0..dim).map(|_| r.gen()).collect())
}
