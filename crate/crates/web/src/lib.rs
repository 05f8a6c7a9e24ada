//! WebAssembly entry points for the browser demo. Each export returns a
//! JSON string; the `*_data` functions behind them are plain Rust and are
//! what the native tests exercise.

use kmcf::bench::{prior_study_detail, seeded_rng, Hyperparams, PriorStudyConfig};
use kmcf::embedding::EmpiricalKernelMean;
use kmcf::filter::{naive_baseline, rmse, Kmcf, KmcfConfig};
use kmcf::herding::{herd, HerdingMode, HerdingRequest};
use kmcf::kbr::{CholeskyStop, KbrConfig};
use kmcf::kernels::{median_heuristic_bandwidth, GaussianKernel, Kernel, Points};
use kmcf::ssm::{simulate, SyntheticModelId, TrainingSet};
use kmcf::Result;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct MethodSample {
    pub method: &'static str,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub err_q: f64,
}

#[derive(Debug, Serialize)]
pub struct ResamplingDemo {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub err_p: f64,
    pub sum_w2: f64,
    pub methods: Vec<MethodSample>,
}

/// Fits weights to a narrow Gaussian target, then propagates the fit with
/// and without resampling.
pub fn resampling_data(a: f64, lambda: f64, sigma_cond: f64, n: usize, seed: u64) -> Result<ResamplingDemo> {
    let cfg = PriorStudyConfig {
        a,
        sigma_cond,
        n,
        lambdas: vec![lambda],
        seeds: vec![seed],
        ..Default::default()
    };
    let detail = prior_study_detail(&cfg, 0, seed)?;
    let methods = detail
        .samples
        .iter()
        .zip(&detail.rows)
        .map(|((m, before, after), row)| MethodSample {
            method: m.name(),
            before: before.points().as_slice().to_vec(),
            after: after.points().as_slice().to_vec(),
            err_q: row.err_q,
        })
        .collect();
    Ok(ResamplingDemo {
        points: detail.fitted.points().as_slice().to_vec(),
        weights: detail.fitted.weights().to_vec(),
        err_p: detail.rows[0].err_p,
        sum_w2: detail.rows[0].sum_w2,
        methods,
    })
}

#[derive(Debug, Serialize)]
pub struct FilterDemo {
    pub model: String,
    pub truth: Vec<f64>,
    /// First observation coordinate per step.
    pub observations: Vec<f64>,
    pub kmcf: Vec<f64>,
    pub naive: Vec<f64>,
    pub ess: Vec<f64>,
    pub rmse_kmcf: f64,
    pub rmse_naive: f64,
    pub params: Hyperparams,
    pub mean_step_ms: f64,
}

/// Simulates training pairs and a test sequence for `model` and filters it.
/// Bandwidths are `scale` times the median heuristic; `rank = 0` selects
/// dense KBR.
pub fn filter_data(
    model: &str,
    n: usize,
    steps: usize,
    seed: u64,
    scale: f64,
    reg: f64,
    rank: usize,
) -> Result<FilterDemo> {
    let id: SyntheticModelId = model.parse()?;
    let train = simulate(id, n, &mut seeded_rng(seed, 0))?;
    let test = simulate(id, steps, &mut seeded_rng(seed, 1))?;
    let training = TrainingSet::new(train.states, train.observations)?;
    let params = Hyperparams {
        kx_bandwidth: scale * median_heuristic_bandwidth(&training.states)?,
        ky_bandwidth: scale * median_heuristic_bandwidth(&training.observations)?,
        eps: reg,
        delta: reg,
    };
    let (kx, ky) = params.kernels()?;
    let cfg = KmcfConfig {
        low_rank: (rank > 0).then_some(CholeskyStop::Rank(rank)),
        ..KmcfConfig::new(kx, ky, KbrConfig::new(reg, reg)?)
    };
    let spec = id.spec(training.clone(), test.controls.clone());
    let trace = Kmcf::new(&training, &cfg)?.run(&spec, &test.observations, &mut seeded_rng(seed, 2))?;
    let means = trace.means();
    let naive = naive_baseline(&training, &test.observations, &ky)?;
    Ok(FilterDemo {
        model: id.name().to_string(),
        truth: test.states.as_slice().to_vec(),
        observations: test.observations.iter().map(|y| y[0]).collect(),
        rmse_kmcf: rmse(&means, &test.states)?,
        rmse_naive: rmse(&naive, &test.states)?,
        kmcf: means.as_slice().to_vec(),
        naive: naive.as_slice().to_vec(),
        ess: trace.steps.iter().map(|s| s.ess).collect(),
        params,
        mean_step_ms: trace.mean_step_ms(),
    })
}

#[derive(Debug, Serialize)]
pub struct HerdingDemo {
    pub candidates: Vec<f64>,
    pub picks: Vec<usize>,
    /// RKHS distance between the target and the first `ℓ` picks, `ℓ = 1..`.
    pub errors: Vec<f64>,
    /// Same quantity for `ℓ` i.i.d. draws from the candidates.
    pub random_errors: Vec<f64>,
}

/// Herds `count` picks for the uniform mean over `size` standard normal
/// draws and tracks the approximation error as picks accumulate.
pub fn herding_data(size: usize, count: usize, bandwidth: f64, seed: u64) -> Result<HerdingDemo> {
    let k = GaussianKernel::new(bandwidth)?;
    let mut rng = seeded_rng(seed, 0);
    let xs: Vec<f64> = (0..size).map(|_| rng.sample(StandardNormal)).collect();
    let pts = Points::from_scalars(&xs);
    let target = EmpiricalKernelMean::uniform(pts.clone(), k)?;
    let res = herd(&HerdingRequest {
        target: &target,
        candidates: &pts,
        kernel: &k,
        count,
        mode: HerdingMode::WithRepetition,
    })?;
    let random: Vec<usize> = (0..count).map(|_| rng.random_range(0..size.max(1))).collect();
    Ok(HerdingDemo {
        errors: prefix_errors(&target, &res.indices),
        random_errors: prefix_errors(&target, &random),
        candidates: xs,
        picks: res.indices,
    })
}

fn prefix_errors(target: &EmpiricalKernelMean<GaussianKernel>, picks: &[usize]) -> Vec<f64> {
    let pts = target.points();
    let k = target.kernel();
    let mm = target.norm_sq();
    let mut cross = 0.0;
    let mut pp = 0.0;
    let mut out = Vec::with_capacity(picks.len());
    for (l, &z) in picks.iter().enumerate() {
        let x = pts.get(z);
        cross += target.evaluate(x).unwrap_or(0.0);
        let with_prev: f64 = picks[..l].iter().map(|&j| k.eval(x, pts.get(j))).sum();
        pp += 2.0 * with_prev + k.eval(x, x);
        let m = (l + 1) as f64;
        out.push((mm - 2.0 * cross / m + pp / (m * m)).max(0.0).sqrt());
    }
    out
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn resampling_demo(a: f64, lambda: f64, sigma_cond: f64, n: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(resampling_data(a, lambda, sigma_cond, n, seed.into()))
}

#[wasm_bindgen]
pub fn filter_demo(
    model: &str,
    n: usize,
    steps: usize,
    seed: u32,
    scale: f64,
    reg: f64,
    rank: usize,
) -> std::result::Result<String, JsError> {
    to_js(filter_data(model, n, steps, seed.into(), scale, reg, rank))
}

#[wasm_bindgen]
pub fn herding_demo(size: usize, count: usize, bandwidth: f64, seed: u32) -> std::result::Result<String, JsError> {
    to_js(herding_data(size, count, bandwidth, seed.into()))
}
