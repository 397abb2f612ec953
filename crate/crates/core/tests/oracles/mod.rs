//! Independent reference computations shared by the property tests and the
//! acceptance suite. Nothing here calls the code under test's own helpers
//! beyond the function being checked.

#![allow(dead_code)]

use geoloc_core::geometry::RegionMask;
use geoloc_core::losses::{
    center_loss, cross_entropy, deconstruction_from_logits, deconstruction_grad, deconstruction_loss, pearson_backward,
    pearson_correlation, ClassCenters,
};
use geoloc_core::nn::{for_each_param, Hab, Pass, PoolMethod, RegionPool};
use geoloc_core::{PartitionSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gradient entries smaller than this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-3;
pub const GRAD_TOL: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`, maximized over entries.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normals(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| (r.gen::<f64>() - 0.5) * 2.0 * scale).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// GeM over a random non-empty region, checked for the input and for `p`.
pub fn gem_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, c, h, w) = (2, 3, r.gen_range(2..6), r.gen_range(2..6));
    let x: Vec<f64> = (0..n * c * h * w).map(|_| r.gen_range(0.1..2.0)).collect();
    let mut cells: Vec<bool> = (0..h * w).map(|_| r.gen_bool(0.6)).collect();
    cells[r.gen_range(0..h * w)] = true;
    let mask = RegionMask::from_cells(h, w, cells).unwrap();
    let p = r.gen_range(1.0..6.0);
    let wts = normals(&mut r, n * c, 1.0);
    let loss = |x: &[f64], p: f64| {
        let t = Tensor::from_vec([n, c, h, w], x.to_vec()).unwrap();
        dot(
            RegionPool::new(PoolMethod::Gem)
                .forward(&t, &mask, p, false)
                .unwrap()
                .data(),
            &wts,
        )
    };
    let mut pool = RegionPool::new(PoolMethod::Gem);
    pool.forward(&Tensor::from_vec([n, c, h, w], x.clone()).unwrap(), &mask, p, true)
        .unwrap();
    let (dx, dp) = pool.backward(&Tensor::from_vec([n, c, 1, 1], wts.clone()).unwrap());
    let nx = numeric_grad(&x, |x| loss(x, p));
    let np = numeric_grad(&[p], |q| loss(&x, q[0]));
    max_rel_error(dx.data(), &nx).max(max_rel_error(&[dp], &np))
}

/// HAB in training mode, checked for the input and every parameter.
pub fn hab_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, c, h, w) = (2, r.gen_range(1..4), r.gen_range(4..8), r.gen_range(4..8));
    let mut hab = Hab::new(&mut r, PartitionSpec::new(0.5).unwrap());
    for_each_param(&mut hab, |_, p| {
        for v in p.value.iter_mut() {
            *v += (r.gen::<f64>() - 0.5) * 0.6;
        }
    });
    let x = normals(&mut r, n * c * h * w, 1.5);
    let wts = normals(&mut r, n * c * h * w, 1.0);
    let shape = [n, c, h, w];

    let forward = |hab: &mut Hab, x: &[f64]| {
        dot(
            hab.forward(&Tensor::from_vec(shape, x.to_vec()).unwrap(), Pass::TRAIN)
                .unwrap()
                .data(),
            &wts,
        )
    };
    for_each_param(&mut hab, |_, p| p.zero_grad());
    forward(&mut hab, &x);
    let dx = hab.backward(&Tensor::from_vec(shape, wts.clone()).unwrap());
    let mut worst = max_rel_error(dx.data(), &numeric_grad(&x, |x| forward(&mut hab.clone(), x)));

    let mut names = Vec::new();
    let mut analytic = Vec::new();
    for_each_param(&mut hab, |name, p| {
        names.push(name.to_string());
        analytic.push(p.grad.clone());
    });
    for (name, grad) in names.iter().zip(&analytic) {
        let mut values = Vec::new();
        for_each_param(&mut hab, |nm, p| {
            if nm == name {
                values = p.value.clone();
            }
        });
        let numeric = numeric_grad(&values, |v| {
            let mut probe = hab.clone();
            for_each_param(&mut probe, |nm, p| {
                if nm == name {
                    p.value.copy_from_slice(v);
                }
            });
            forward(&mut probe, &x)
        });
        worst = worst.max(max_rel_error(grad, &numeric));
    }
    worst
}

pub fn center_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, d, k) = (r.gen_range(2..9), r.gen_range(1..7), r.gen_range(1..5));
    let x = normals(&mut r, n * d, 2.0);
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
    let centers = ClassCenters::from_vec(k, d, normals(&mut r, k * d, 2.0)).unwrap();
    let gamma = r.gen_range(0.1..2.0);
    let g = center_loss(&x, &labels, &centers, gamma).unwrap().grad;
    max_rel_error(
        &g,
        &numeric_grad(&x, |x| center_loss(x, &labels, &centers, gamma).unwrap().value),
    )
}

pub fn cross_entropy_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, k) = (r.gen_range(1..9), r.gen_range(2..7));
    let logits = normals(&mut r, n * k, 4.0);
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
    let g = cross_entropy(&logits, k, &labels).unwrap().grad;
    max_rel_error(
        &g,
        &numeric_grad(&logits, |l| cross_entropy(l, k, &labels).unwrap().value),
    )
}

/// Deconstruction loss of the Pearson matrix, differentiated both with
/// respect to the stacked predictions and through the softmax to logits.
pub fn deconstruction_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (rows, k) = (r.gen_range(3..10), r.gen_range(2..6));
    let lambda = r.gen_range(0.05..1.0);
    let m: Vec<f64> = (0..rows * k).map(|_| r.gen_range(0.0..1.0)).collect();
    let of_matrix = |m: &[f64]| {
        let (s, _) = pearson_correlation(m, rows, k).unwrap();
        deconstruction_loss(s.values(), k, k, lambda).unwrap()
    };
    let (s, cache) = pearson_correlation(&m, rows, k).unwrap();
    let dm = pearson_backward(&cache, &deconstruction_grad(&s, lambda));
    let on_matrix = max_rel_error(&dm, &numeric_grad(&m, of_matrix));

    let logits = normals(&mut r, rows * k, 2.0);
    let g = deconstruction_from_logits(&logits, rows, k, lambda).unwrap();
    let on_logits = max_rel_error(
        &g.grad,
        &numeric_grad(&logits, |l| {
            deconstruction_from_logits(l, rows, k, lambda).unwrap().value
        }),
    );
    on_matrix.max(on_logits)
}

/// Reference retrieval: the rank of gallery item `j` is one plus the number
/// of items strictly closer, or equally close and earlier in the gallery.
pub struct BruteForce {
    pub first_ranks: Vec<usize>,
    pub aps: Vec<f64>,
}

pub fn brute_force(
    queries: &[Vec<f64>],
    query_ids: &[usize],
    gallery: &[Vec<f64>],
    gallery_ids: &[usize],
) -> BruteForce {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut out = BruteForce {
        first_ranks: Vec::new(),
        aps: Vec::new(),
    };
    for (q, &qid) in queries.iter().zip(query_ids) {
        let d: Vec<f64> = gallery.iter().map(|g| sq(q, g)).collect();
        let rank = |j: usize| 1 + (0..d.len()).filter(|&i| d[i] < d[j] || (d[i] == d[j] && i < j)).count();
        let mut rel: Vec<usize> = (0..gallery.len())
            .filter(|&j| gallery_ids[j] == qid)
            .map(rank)
            .collect();
        if rel.is_empty() {
            continue;
        }
        rel.sort_unstable();
        out.first_ranks.push(rel[0]);
        let ap = rel
            .iter()
            .enumerate()
            .map(|(i, &rk)| (i + 1) as f64 / rk as f64)
            .sum::<f64>()
            / rel.len() as f64;
        out.aps.push(ap);
    }
    out
}

pub fn brute_recall(first_ranks: &[usize], k: usize) -> f64 {
    first_ranks.iter().filter(|&&r| r <= k).count() as f64 / first_ranks.len() as f64
}
