//! End-to-end acceptance checks. Runs as a plain binary so every check
//! prints one PASS/FAIL line regardless of output capture. Set
//! `IFA_ACCEPTANCE_ONLY=2,3` to run a subset.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::time::Instant;

use common::{dreg_surrogate, max_rel_error, random_instance};
use ifa_core::c2st::{exact_pvalue, power, rfi, ClassifierKind};
use ifa_core::grm::{
    build_correlation, CorrelationAngles, CorrelationStructure, GeneratingModel, ItemParams, LoadingPattern, ModelSpec,
};
use ifa_core::iwave::{grad_omega, grad_psi_dreg, grad_psi_pathwise, iw_elbo_estimate, FitConfig, Sampling};
use ifa_core::rng::seeded;
use ifa_core::sim::{
    run_misspecification, run_recovery, run_uniform_calibration, top_items, CalibrationConfig, CandidateModel,
    MisspecConfig, RecoveryConfig,
};
use rand::Rng as _;
use statrs::distribution::{ContinuousCDF, Normal};

struct Check {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(id: u32, name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        id,
        name,
        passed,
        detail,
    }
}

const ASSIGN: [usize; 10] = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
const LOADINGS: [f64; 10] = [1.2, 1.4, 1.6, 1.8, 2.1, 2.0, 1.7, 1.5, 1.3, 1.9];
const DOUBLET: [usize; 2] = [2, 7];
const DOUBLET_LOADING: f64 = 1.5;

fn closed_forms() -> Check {
    let mut ok = power(0.05, 1000, 0.0, 0.0).unwrap() == 0.05;
    for n in [1, 10, 250, 1000, 2500, 100_000] {
        ok &= exact_pvalue(0.5, n) == 0.5;
    }
    // Exact-test power: Phi((2 eps sqrt(N) - z) / sqrt(1 - 4 eps^2)), with z
    // found by bisection on the normal cdf so the oracle shares no inverse.
    let std = Normal::standard();
    let (mut lo, mut hi) = (0.0f64, 5.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if std.cdf(mid) < 0.95 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z = 0.5 * (lo + hi);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let eps = 0.002 + 0.004 * i as f64;
        let n = 100 + 250 * i;
        let oracle = std.cdf((2.0 * eps * (n as f64).sqrt() - z) / (1.0 - 4.0 * eps * eps).sqrt());
        worst = worst.max((power(0.05, n, 0.0, eps).unwrap() - oracle).abs());
    }
    ok &= worst < 1e-12;
    check(
        1,
        "closed-form power and p-values",
        ok,
        format!("max |power - exact formula| = {worst:.2e}"),
    )
}

fn calibration() -> (Check, Check) {
    let cfg = CalibrationConfig {
        sample_sizes: vec![250, 1000, 2500],
        shifts: vec![0.05, 0.10],
        delta: 0.025,
        alpha: 0.05,
        classifiers: vec![ClassifierKind::knn(), ClassifierKind::neural()],
        replications: 100,
        seed: 2023,
    };
    let report = run_uniform_calibration(&cfg).unwrap();
    let mut type1 = true;
    let mut power_ok = true;
    let mut d1 = Vec::new();
    let mut d3 = Vec::new();
    for &n in &cfg.sample_sizes {
        let knn = report.cell(n, 0.05, "knn").unwrap();
        let nn = report.cell(n, 0.05, "nn").unwrap();
        type1 &= (0.01..=0.11).contains(&knn.rejection_rate);
        // Below-nominal neural rates are allowed for small test sets only.
        type1 &= nn.rejection_rate <= 0.11 && (n <= 500 || nn.rejection_rate >= 0.01);
        d1.push(format!(
            "N={n} knn {:.2} nn {:.2}",
            knn.rejection_rate, nn.rejection_rate
        ));
        for name in ["knn", "nn"] {
            let c = report.cell(n, 0.10, name).unwrap();
            let within = (c.rejection_rate - c.predicted_power).abs() <= 0.10;
            if name == "knn" {
                power_ok &= within;
                if n == 2500 {
                    power_ok &= (c.mean_acc - 0.55).abs() <= 0.02;
                }
            }
            d3.push(format!(
                "N={n} {name} power {:.2} vs {:.3}{}",
                c.rejection_rate,
                c.predicted_power,
                if n == 2500 {
                    format!(" acc {:.4}", c.mean_acc)
                } else {
                    String::new()
                }
            ));
        }
    }
    (
        check(2, "type I error at eps = 0", type1, d1.join("; ")),
        check(
            3,
            "power at eps = 0.025 (knn judged, nn shown)",
            power_ok,
            d3.join("; "),
        ),
    )
}

fn gradients() -> Check {
    let mut worst: f64 = 0.0;
    for case in 0..20u64 {
        let inst = random_instance(900 + case, 3, 6, 3);
        let mut sampling = Sampling::new(1 + (case as usize % 5));
        let (_, g) = grad_omega(&inst.data, &inst.spec, &inst.params, &inst.net, sampling, case).unwrap();
        worst = worst.max(max_rel_error(&g, &inst.params.to_flat(&inst.spec), |x| {
            let mut p = inst.params.clone();
            p.set_flat(&inst.spec, x);
            iw_elbo_estimate(&inst.data, &inst.spec, &p, &inst.net, sampling, case).unwrap()
        }));
        let x0 = inst.net.params().to_vec();
        let (_, g) = grad_psi_pathwise(&inst.data, &inst.spec, &inst.params, &inst.net, sampling, case).unwrap();
        worst = worst.max(max_rel_error(&g, &x0, |x| {
            let mut net = inst.net.clone();
            net.set_params(x.to_vec()).unwrap();
            iw_elbo_estimate(&inst.data, &inst.spec, &inst.params, &net, sampling, case).unwrap()
        }));
        sampling.mc_samples = 1 + (case as usize % 2);
        let (_, g) = grad_psi_dreg(&inst.data, &inst.spec, &inst.params, &inst.net, sampling, case).unwrap();
        worst = worst.max(max_rel_error(&g, &x0, |x| dreg_surrogate(&inst, sampling, case, x)));
    }
    check(
        4,
        "IW-ELBO gradients vs finite differences",
        worst < 1e-4,
        format!("20 instances, max relative error {worst:.2e}"),
    )
}

fn monotonicity() -> Check {
    let inst = random_instance(4242, 2, 6, 40);
    let draws = 200;
    let est: Vec<[f64; 3]> = (0..draws)
        .map(|s| {
            let mut e = [0.0; 3];
            for (slot, r) in e.iter_mut().zip([1, 5, 25]) {
                *slot = iw_elbo_estimate(&inst.data, &inst.spec, &inst.params, &inst.net, Sampling::new(r), s).unwrap();
            }
            e
        })
        .collect();
    let mean = |i: usize| est.iter().map(|e| e[i]).sum::<f64>() / draws as f64;
    // Paired differences carry their own standard error.
    let diff_ok = |a: usize, b: usize| {
        let d: Vec<f64> = est.iter().map(|e| e[b] - e[a]).collect();
        let m = d.iter().sum::<f64>() / draws as f64;
        let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
        let se = (var / draws as f64).sqrt();
        (m >= -2.0 * se, m, se)
    };
    let (ok1, m1, s1) = diff_ok(0, 1);
    let (ok2, m2, s2) = diff_ok(1, 2);
    check(
        5,
        "IW-ELBO monotone in R",
        ok1 && ok2,
        format!(
            "means {:.3} / {:.3} / {:.3}; R5-R1 {m1:.3} (se {s1:.3}); R25-R5 {m2:.3} (se {s2:.3})",
            mean(0),
            mean(1),
            mean(2)
        ),
    )
}

fn recovery() -> Check {
    let items = (0..10)
        .map(|j| {
            let mut b = vec![0.0; 2];
            b[ASSIGN[j]] = LOADINGS[j];
            ItemParams::new(vec![-1.0 + 0.1 * j as f64, 1.1 - 0.05 * j as f64], b).unwrap()
        })
        .collect();
    let cfg = RecoveryConfig {
        generating: GeneratingModel {
            items,
            correlation: vec![vec![1.0, 0.3], vec![0.3, 1.0]],
        },
        spec: ModelSpec::simple_structure(vec![3; 10], &ASSIGN, 2).unwrap(),
        sample_sizes: vec![1000, 5000],
        iw_samples: vec![1, 5],
        replications: 50,
        seed: 31,
        fit: FitConfig::default(),
        flag_threshold: 5.0,
    };
    let report = run_recovery(&cfg).unwrap();
    let small = report.cell(1000, 5).unwrap();
    let large = report.cell(5000, 5).unwrap();
    let single = report.cell(5000, 1).unwrap();
    let loadings: Vec<&str> = report
        .parameters
        .iter()
        .map(|p| p.name.as_str())
        .filter(|n| n.starts_with("loading"))
        .collect();
    let improved = loadings
        .iter()
        .filter(|n| large.get(n).unwrap().mse < small.get(n).unwrap().mse)
        .count();
    let frac = improved as f64 / loadings.len() as f64;
    let mean_abs_bias = |c: &ifa_core::sim::RecoveryCell| {
        c.parameters.iter().map(|p| p.bias.abs()).sum::<f64>() / c.parameters.len() as f64
    };
    let (b5, b1) = (mean_abs_bias(large), mean_abs_bias(single));
    let failures: usize = report.cells.iter().map(|c| c.failures).sum();
    check(
        6,
        "parameter recovery trend",
        frac >= 0.9 && b5 < b1,
        format!(
            "loading MSE lower at N=5000 for {improved}/{} ; mean |bias| R=5 {b5:.4} vs R=1 {b1:.4}; failures {failures}",
            loadings.len()
        ),
    )
}

fn doublet_design() -> MisspecConfig {
    let items = (0..10)
        .map(|j| {
            let mut b = vec![0.0; 3];
            b[ASSIGN[j]] = LOADINGS[j];
            if DOUBLET.contains(&j) {
                b[2] = DOUBLET_LOADING;
            }
            ItemParams::new(vec![-1.0 + 0.1 * j as f64, 1.1 - 0.05 * j as f64], b).unwrap()
        })
        .collect();
    let generating = GeneratingModel {
        items,
        correlation: vec![vec![1.0, 0.3, 0.0], vec![0.3, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
    };
    let under = ModelSpec::simple_structure(vec![3; 10], &ASSIGN, 2).unwrap();
    let pattern: Vec<Vec<LoadingPattern>> = (0..10)
        .map(|j| {
            (0..3)
                .map(|q| {
                    if q == ASSIGN[j] {
                        LoadingPattern::Free
                    } else if q == 2 && DOUBLET.contains(&j) {
                        LoadingPattern::Tied("doublet".into())
                    } else {
                        LoadingPattern::Fixed(0.0)
                    }
                })
                .collect()
        })
        .collect();
    let mut corr = CorrelationStructure::free(3);
    corr.make_orthogonal(3, 2);
    let correct = ModelSpec::from_pattern(vec![3; 10], 3, &pattern, corr).unwrap();
    MisspecConfig {
        generating,
        models: vec![
            CandidateModel {
                name: "under".into(),
                spec: under,
            },
            CandidateModel {
                name: "correct".into(),
                spec: correct,
            },
        ],
        sample_sizes: vec![5000],
        replications: 50,
        seed: 47,
        fit: FitConfig::default(),
        classifiers: vec![ClassifierKind::neural()],
        deltas: vec![0.0, 0.025],
        alpha: 0.05,
        importance_reps: 5,
    }
}

fn misspecification() -> (Check, Check) {
    let cfg = doublet_design();
    let report = run_misspecification(&cfg).unwrap();
    let under = report.cell(5000, "under", "nn").unwrap();
    let correct = report.cell(5000, "correct", "nn").unwrap();
    let (ru, rc) = (under.rejection_rate(0.0).unwrap(), correct.rejection_rate(0.0).unwrap());
    let under_recs: Vec<_> = report
        .records
        .iter()
        .filter(|r| r.model == "under" && r.error.is_none())
        .collect();
    let hits = under_recs
        .iter()
        .filter(|r| {
            let mut top = top_items(&r.importance, 2);
            top.sort_unstable();
            top == DOUBLET
        })
        .count();
    let hit_rate = hits as f64 / under_recs.len().max(1) as f64;
    let errors = report.records.iter().filter(|r| r.error.is_some()).count();
    let c7 = check(
        7,
        "doublet misspecification detection",
        ru >= 0.8 && rc <= 0.1 && hit_rate >= 0.8,
        format!(
            "rejection under {ru:.2}, correct {rc:.2}; doublet items top-2 in {hits}/{}; mean acc {:.4} / {:.4}; errors {errors}",
            under_recs.len(),
            under.mean_acc,
            correct.mean_acc
        ),
    );

    let (mu, mc) = (under.median_rfi, correct.median_rfi);
    let unit = rfi(0.5, 0.7, 12, 12).unwrap().rfi == 1.0 && rfi(0.5, 0.93, 40, 12).unwrap().rfi == 1.0;
    let table = rfi(0.83, 0.96, 260, 200).unwrap().rfi;
    let c8 = check(
        8,
        "relative fit index",
        mc > mu && unit && (0.05..=0.07).contains(&table),
        format!("median RFI correct {mc:.3} vs under {mu:.3}; worked example {table:.4}"),
    );
    (c7, c8)
}

fn hypersphere() -> Check {
    let mut rng = seeded(99);
    let mut ok = true;
    let mut worst_diag: f64 = 0.0;
    for _ in 0..1000 {
        let p = rng.random_range(2..=6);
        let angles = (0..p * (p - 1) / 2)
            .map(|_| rng.random_range(1e-3..std::f64::consts::PI))
            .collect();
        let (_, sigma) = build_correlation(&CorrelationAngles::from_values(p, angles).unwrap()).unwrap();
        for i in 0..p {
            worst_diag = worst_diag.max((sigma[i][i] - 1.0).abs());
        }
        // A Cholesky factorization of sigma + 1e-12 I exists only if sigma is PSD.
        ok &= cholesky_succeeds(&sigma, 1e-12);
    }
    ok &= worst_diag < 1e-10;
    for p in 1..=8 {
        let (_, sigma) = build_correlation(&CorrelationAngles::identity(p)).unwrap();
        ok &= (0..p).all(|i| (0..p).all(|j| sigma[i][j] == if i == j { 1.0 } else { 0.0 }));
    }
    check(
        9,
        "hyperspherical correlation",
        ok,
        format!("1000 matrices, max |diag - 1| = {worst_diag:.1e}"),
    )
}

fn cholesky_succeeds(a: &[Vec<f64>], shift: f64) -> bool {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] + shift - s;
                if d <= 0.0 {
                    return false;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    true
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("IFA_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let want = |ids: &[u32]| only.as_ref().is_none_or(|o| ids.iter().any(|i| o.contains(i)));
    let mut results = Vec::new();
    let mut run = |ids: &[u32], f: &mut dyn FnMut() -> Vec<Check>| {
        if want(ids) {
            let t = Instant::now();
            for c in f() {
                println!(
                    "criterion {} [{}] {} ({:.0} s): {}",
                    c.id,
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    t.elapsed().as_secs_f64(),
                    c.detail
                );
                results.push(c.passed);
            }
        }
    };
    run(&[1], &mut || vec![closed_forms()]);
    run(&[4], &mut || vec![gradients()]);
    run(&[5], &mut || vec![monotonicity()]);
    run(&[9], &mut || vec![hypersphere()]);
    run(&[2, 3], &mut || {
        let (a, b) = calibration();
        vec![a, b]
    });
    run(&[6], &mut || vec![recovery()]);
    run(&[7, 8], &mut || {
        let (a, b) = misspecification();
        vec![a, b]
    });
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
