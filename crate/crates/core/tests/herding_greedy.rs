mod support;

use kmcf::embedding::EmpiricalKernelMean;
use kmcf::herding::{herd, HerdingMode, HerdingRequest};
use kmcf::kernels::{GaussianKernel, Kernel, Points};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use support::*;

fn gaussian_points(n: usize, seed: u64) -> Points {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Points::from_scalars(&(0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>())
}

#[test]
fn every_pick_attains_the_greedy_maximum() {
    let k = GaussianKernel::new(0.7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (n, count, mode) in [
        (200, 60, HerdingMode::WithRepetition),
        (150, 150, HerdingMode::WithoutRepetition),
        (40, 80, HerdingMode::WithRepetition),
    ] {
        let pts = gaussian_points(n, rng.random());
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..1.0)).collect();
        let target = EmpiricalKernelMean::new(pts.clone(), w, k).unwrap();
        let res = herd(&HerdingRequest {
            target: &target,
            candidates: &pts,
            kernel: &k,
            count,
            mode,
        })
        .unwrap();
        for p in 0..count {
            let chosen = &res.indices[..p];
            let objective = |z: usize| {
                let pen: f64 = chosen.iter().map(|&j| k.eval(pts.get(z), pts.get(j))).sum();
                target.evaluate(pts.get(z)).unwrap() - pen / (p + 1) as f64
            };
            let allowed = |z: &usize| mode == HerdingMode::WithRepetition || !chosen.contains(z);
            let best = (0..n).filter(allowed).map(objective).fold(f64::NEG_INFINITY, f64::max);
            let got = objective(res.indices[p]);
            assert!(allowed(&res.indices[p]));
            assert!(got >= best - 1e-12, "step {p}: {got} < {best}");
        }
    }
}

#[test]
fn herding_error_decays_at_least_root_rate() {
    let k = GaussianKernel::new(1.0).unwrap();
    let mut constants = Vec::new();
    for seed in 0..3 {
        let pts = gaussian_points(200, 100 + seed);
        let target = EmpiricalKernelMean::uniform(pts.clone(), k).unwrap();
        let res = herd(&HerdingRequest {
            target: &target,
            candidates: &pts,
            kernel: &k,
            count: 200,
            mode: HerdingMode::WithRepetition,
        })
        .unwrap();
        let errs = herding_prefix_errors(&pts, &res.indices, &k);
        let slope = log_log_slope(&errs);
        assert!(slope <= -0.4, "seed {seed} slope {slope}");
        // C = max_ℓ E_ℓ·√ℓ bounds every prefix
        let c = errs
            .iter()
            .enumerate()
            .map(|(i, e)| e * ((i + 1) as f64).sqrt())
            .fold(0.0, f64::max);
        constants.push(c);
    }
    let (lo, hi) = constants
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), c| (a.min(*c), b.max(*c)));
    assert!(hi / lo < 3.0, "C spread {constants:?}");
}

#[test]
fn permuting_candidates_permutes_picks() {
    let k = GaussianKernel::new(0.5).unwrap();
    let pts = gaussian_points(30, 9);
    let target = EmpiricalKernelMean::uniform(pts.clone(), k).unwrap();
    let req = |c: &Points| {
        herd(&HerdingRequest {
            target: &target,
            candidates: c,
            kernel: &k,
            count: 12,
            mode: HerdingMode::WithRepetition,
        })
        .unwrap()
    };
    let base = req(&pts);
    let perm: Vec<usize> = (0..30).rev().collect();
    let shuffled = req(&pts.select(&perm));
    let mapped: Vec<usize> = shuffled.indices.iter().map(|&i| perm[i]).collect();
    assert_eq!(mapped, base.indices);
}
