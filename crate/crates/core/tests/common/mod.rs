#![allow(dead_code)]

use std::f64::consts::PI;

use ifa_core::grm::{CorrelationAngles, CorrelationStructure, LoadingPattern, ModelSpec, ParameterSet, ResponseMatrix};
use ifa_core::inference_net::InferenceNet;
use ifa_core::iwave::{Evaluator, Sampling};
use ifa_core::rng::{seeded, Rng};
use rand::Rng as _;
use rand_distr::StandardNormal;

/// A small random model with mixed free, fixed and tied loadings, some
/// fixed angles, random parameters and a data set drawn uniformly.
pub struct Instance {
    pub spec: ModelSpec,
    pub params: ParameterSet,
    pub net: InferenceNet,
    pub data: ResponseMatrix,
}

pub fn random_instance(seed: u64, max_factors: usize, max_items: usize, rows: usize) -> Instance {
    let mut rng = seeded(seed);
    let p = rng.random_range(1..=max_factors);
    let j = rng.random_range(2..=max_items);
    let categories: Vec<usize> = (0..j).map(|_| rng.random_range(2..=4)).collect();
    let mut pattern = Vec::with_capacity(j);
    for item in 0..j {
        let row: Vec<LoadingPattern> = (0..p)
            .map(|q| {
                let u: f64 = rng.random();
                if q == item % p || u < 0.4 {
                    LoadingPattern::Free
                } else if u < 0.6 {
                    LoadingPattern::Tied(format!("t{q}"))
                } else if u < 0.8 {
                    LoadingPattern::Fixed(rng.random_range(-0.5..0.5))
                } else {
                    LoadingPattern::Fixed(0.0)
                }
            })
            .collect();
        pattern.push(row);
    }
    let mut corr = CorrelationStructure::free(p);
    if p == 3 && rng.random_bool(0.5) {
        corr.make_orthogonal(p, 2);
    }
    let spec = ModelSpec::from_pattern(categories.clone(), p, &pattern, corr).unwrap();
    let intercepts = categories
        .iter()
        .map(|&k| (0..k - 1).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.8).collect())
        .collect();
    let loadings = (0..spec.free_loadings).map(|_| rng.random_range(-1.5..1.5)).collect();
    let n_angles = p * (p - 1) / 2;
    let angles =
        CorrelationAngles::from_values(p, (0..n_angles).map(|_| rng.random_range(0.6..PI - 0.6)).collect()).unwrap();
    let mut params = ParameterSet {
        intercepts,
        loadings,
        angles,
    };
    for (a, f) in params.angles.values.iter_mut().zip(&spec.correlation.fixed) {
        if let Some(v) = f {
            *a = *v;
        }
    }
    let mut net = InferenceNet::new(categories.clone(), p, &[2 * j], &mut rng).unwrap();
    for v in net.params_mut() {
        *v += rng.random_range(-0.2..0.2);
    }
    let codes: Vec<u16> = (0..rows)
        .flat_map(|_| {
            categories
                .iter()
                .map(|&k| rng.random_range(0..k) as u16)
                .collect::<Vec<_>>()
        })
        .collect();
    let data = ResponseMatrix::new(categories, rows, codes).unwrap();
    Instance {
        spec,
        params,
        net,
        data,
    }
}

/// Largest relative discrepancy between an analytic gradient and central
/// finite differences of `f`.
pub fn max_rel_error(analytic: &[f64], x0: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        let h = 1e-5 * (1.0 + x0[i].abs());
        x[i] = x0[i] + h;
        let up = f(&x);
        x[i] = x0[i] - h;
        let dn = f(&x);
        x[i] = x0[i];
        let fd = (up - dn) / (2.0 * h);
        let scale = analytic[i].abs().max(fd.abs());
        let err = if scale < 1e-7 {
            0.0
        } else {
            (analytic[i] - fd).abs() / scale
        };
        worst = worst.max(err);
    }
    worst
}

/// The surrogate whose gradient is the doubly reparameterized estimator:
/// `sum_r w~_r^2 log w_r(z_r(psi'))` with the weights and the density of
/// `q` frozen at `net`.
pub fn dreg_surrogate(inst: &Instance, sampling: Sampling, seed: u64, perturbed: &[f64]) -> f64 {
    use ifa_core::inference_net::reparameterize;
    use ifa_core::iwave::{log_weight, normalized_weights};
    let model = inst.params.materialize(&inst.spec).unwrap();
    let ev = Evaluator::new(&inst.spec, &model, &inst.net, sampling).unwrap();
    let mut moved = inst.net.clone();
    moved.set_params(perturbed.to_vec()).unwrap();
    let mut ws = ev.workspace();
    let mut rng: Rng = seeded(seed);
    let (r, s, p) = (sampling.iw_samples, sampling.mc_samples, inst.spec.factors);
    let mut total = 0.0;
    for x in inst.data.rows() {
        ev.draw_noise(&mut ws, &mut rng);
        let frozen = inst.net.encode(x).unwrap();
        let post = moved.encode(x).unwrap();
        for g in 0..s {
            let eps = &ws.eps()[g * r * p..(g + 1) * r * p];
            let frozen_lw: Vec<f64> = (0..r)
                .map(|k| {
                    let z = reparameterize(&frozen, &eps[k * p..(k + 1) * p]);
                    log_weight(x, &z, &model.items, &model.cholesky, &frozen).unwrap()
                })
                .collect();
            let w = normalized_weights(&frozen_lw).unwrap();
            for k in 0..r {
                let z = reparameterize(&post, &eps[k * p..(k + 1) * p]);
                let lw = log_weight(x, &z, &model.items, &model.cholesky, &frozen).unwrap();
                total += w[k] * w[k] * lw / s as f64;
            }
        }
    }
    total
}
