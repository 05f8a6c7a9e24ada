//! Experiment harness: hyperparameter cross-validation, the sampling and
//! resampling study on Gaussian targets, and the synthetic filtering
//! benchmark. Results are plain rows with CSV writers.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use web_time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{fit_weights_to_mean, EmpiricalKernelMean, GaussianMeanOracle};
use crate::error::{Error, Result};
use crate::filter::{naive_baseline, rmse, Kmcf, KmcfConfig, ResamplePolicy};
use crate::herding::{resample, truncate_resample};
use crate::kbr::{CholeskyStop, KbrConfig};
use crate::kernels::{median_heuristic_bandwidth, GaussianKernel, Points};
use crate::ssm::{fmt_f64, simulate, SsmSpec, SyntheticModelId, TrainingSet, Trajectory};

/// A ChaCha8 stream keyed by `(seed, stream)`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_TRAIN: u64 = 0;
const STREAM_TEST: u64 = 1;
const STREAM_FILTER: u64 = 2;
const STREAM_CV: u64 = 3;

/// `count` points log-spaced from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..count)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
                .collect()
        }
    }
}

/// Spearman rank correlation, ties given their average rank.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::invalid("spearman", "need at least two pairs"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean) * (x - mean);
        sbb += (y - mean) * (y - mean);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::invalid("spearman", "a constant input has no ranking"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

// ---------------------------------------------------------------------------
// Hyperparameters and cross-validation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub kx_bandwidth: f64,
    pub ky_bandwidth: f64,
    pub eps: f64,
    pub delta: f64,
}

impl Hyperparams {
    pub fn kernels(&self) -> Result<(GaussianKernel, GaussianKernel)> {
        Ok((
            GaussianKernel::new(self.kx_bandwidth)?,
            GaussianKernel::new(self.ky_bandwidth)?,
        ))
    }

    pub fn kbr(&self) -> Result<KbrConfig> {
        KbrConfig::new(self.eps, self.delta)
    }
}

/// Filter settings other than kernels and regularizers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterOptions {
    pub resample_count: Option<usize>,
    pub resample_policy: ResamplePolicy,
    pub low_rank: Option<CholeskyStop>,
    pub subsample: Option<usize>,
}

impl FilterOptions {
    pub fn config(&self, h: &Hyperparams) -> Result<KmcfConfig<GaussianKernel, GaussianKernel>> {
        let (kx, ky) = h.kernels()?;
        Ok(KmcfConfig {
            resample_count: self.resample_count,
            resample_policy: self.resample_policy,
            low_rank: self.low_rank,
            subsample: self.subsample,
            ..KmcfConfig::new(kx, ky, h.kbr()?)
        })
    }
}

/// Candidate values for cross-validation. Bandwidths are multiples of the
/// median-heuristic bandwidth of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvGrid {
    pub kx_scale: Vec<f64>,
    pub ky_scale: Vec<f64>,
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
}

impl Default for CvGrid {
    fn default() -> Self {
        Self {
            kx_scale: vec![0.25, 0.5, 1.0],
            ky_scale: vec![0.25, 0.5, 1.0],
            eps: log_space(1e-4, 1.0, 5),
            delta: log_space(1e-4, 1.0, 5),
        }
    }
}

impl CvGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, list) in [
            ("kx_scale", &self.kx_scale),
            ("ky_scale", &self.ky_scale),
            ("eps", &self.eps),
            ("delta", &self.delta),
        ] {
            if list.is_empty() {
                return Err(Error::invalid(name, "grid list is empty"));
            }
            if let Some(v) = list.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::invalid(name, format!("grid values must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.kx_scale.len() * self.ky_scale.len() * self.eps.len() * self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All cells in lexicographic order of the sorted, deduplicated lists.
    pub fn cells(&self, kx_base: f64, ky_base: f64) -> Vec<Hyperparams> {
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (sx, sy, se, sd) = (
            sorted(&self.kx_scale),
            sorted(&self.ky_scale),
            sorted(&self.eps),
            sorted(&self.delta),
        );
        let mut out = Vec::with_capacity(self.len());
        for &a in &sx {
            for &b in &sy {
                for &eps in &se {
                    for &delta in &sd {
                        out.push(Hyperparams {
                            kx_bandwidth: a * kx_base,
                            ky_bandwidth: b * ky_base,
                            eps,
                            delta,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub best: Hyperparams,
    pub score: f64,
    /// Every evaluated cell with its two-fold RMSE; failed runs score `+∞`.
    pub scores: Vec<(Hyperparams, f64)>,
}

/// Two-fold cross-validation on a contiguous training sequence.
///
/// `spec.training` holds the sequence and `spec.controls`, when present,
/// the controls aligned with its rows. Each half trains the filter that
/// runs on the other half's observations; the score is the mean of the two
/// RMSEs. Bandwidth scales are applied to the median heuristic of the full
/// sequence. Every run uses the same filter stream derived from `seed`.
pub fn cross_validate(
    spec: &SsmSpec,
    grid: &CvGrid,
    options: &FilterOptions,
    seed: u64,
) -> Result<CvOutcome> {
    grid.validate()?;
    let n = spec.training.len();
    if n < 4 {
        return Err(Error::invalid("cross-validation", format!("need at least 4 pairs, got {n}")));
    }
    if let Some(c) = &spec.controls {
        if c.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: c.len(),
            });
        }
    }
    let kx_base = median_heuristic_bandwidth(&spec.training.states)?;
    let ky_base = median_heuristic_bandwidth(&spec.training.observations)?;
    let cells = grid.cells(kx_base, ky_base);
    cross_validate_cells(spec, &cells, options, seed)
}

fn cross_validate_cells(
    spec: &SsmSpec,
    cells: &[Hyperparams],
    options: &FilterOptions,
    seed: u64,
) -> Result<CvOutcome> {
    let n = spec.training.len();
    let half = n / 2;
    let folds = [(0..half, half..n), (half..n, 0..half)];
    let scores: Vec<(Hyperparams, f64)> = cells
        .par_iter()
        .map(|h| {
            let mut total = 0.0;
            for (train, test) in &folds {
                let score = fold_rmse(spec, h, options, train.clone(), test.clone(), seed);
                total += score.unwrap_or(f64::INFINITY);
            }
            let s = total / 2.0;
            (*h, if s.is_nan() { f64::INFINITY } else { s })
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, (_, s)) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| *s < scores[b].1) {
            best = Some(i);
        }
    }
    let b = best.ok_or_else(|| Error::invalid("cross-validation", "every grid cell failed"))?;
    Ok(CvOutcome {
        best: scores[b].0,
        score: scores[b].1,
        scores,
    })
}

fn fold_rmse(
    spec: &SsmSpec,
    h: &Hyperparams,
    options: &FilterOptions,
    train: std::ops::Range<usize>,
    test: std::ops::Range<usize>,
    seed: u64,
) -> Result<f64> {
    let training = spec.training.range(train.start, train.end);
    let held_out = spec.training.range(test.start, test.end);
    let sub = SsmSpec {
        prior: Arc::clone(&spec.prior),
        transition: Arc::clone(&spec.transition),
        training: training.clone(),
        controls: spec
            .controls
            .as_ref()
            .map(|c| c.select(&test.clone().collect::<Vec<_>>())),
    };
    let mut cfg = options.config(h)?;
    if let Some(l) = cfg.resample_count {
        cfg.resample_count = Some(l.min(training.len()));
    }
    let filter = Kmcf::new(&training, &cfg)?;
    let trace = filter.run(&sub, &held_out.observations, &mut seeded_rng(seed, STREAM_CV))?;
    rmse(&trace.means(), &held_out.states)
}

// ---------------------------------------------------------------------------
// Sampling / resampling study on Gaussian targets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PriorMethod {
    WoRes,
    ResKh,
    ResTrunc,
}

impl PriorMethod {
    pub const ALL: [PriorMethod; 3] = [PriorMethod::WoRes, PriorMethod::ResKh, PriorMethod::ResTrunc];

    pub fn name(self) -> &'static str {
        match self {
            PriorMethod::WoRes => "woRes",
            PriorMethod::ResKh => "Res-KH",
            PriorMethod::ResTrunc => "Res-Trunc",
        }
    }
}

impl fmt::Display for PriorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorStudyConfig {
    pub sigma_p: f64,
    pub sigma_cond: f64,
    pub gamma: f64,
    pub n: usize,
    /// Half-width of the uniform support the sample points are drawn from.
    pub a: f64,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Herded / multinomial resample size; `None` means `n`.
    pub resample_count: Option<usize>,
}

impl Default for PriorStudyConfig {
    fn default() -> Self {
        Self {
            sigma_p: 0.1,
            sigma_cond: 0.1,
            gamma: 0.1,
            n: 100,
            a: 5.0,
            lambdas: log_space(1e-8, 1e2, 10),
            seeds: (0..20).collect(),
            resample_count: None,
        }
    }
}

impl PriorStudyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_p", self.sigma_p),
            ("sigma_cond", self.sigma_cond),
            ("gamma", self.gamma),
            ("a", self.a),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        if self.lambdas.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("prior study", "lambdas and seeds must be nonempty"));
        }
        if let Some(v) = self.lambdas.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::invalid("lambdas", format!("must be non-negative, got {v}")));
        }
        if self.resample_count == Some(0) {
            return Err(Error::invalid("resample_count", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorRow {
    pub lambda: f64,
    pub seed: u64,
    pub method: PriorMethod,
    /// `‖m̂_P − m_P‖²` of the fitted weights.
    pub err_p: f64,
    pub sum_w2: f64,
    /// `‖m̂_Q − m_Q‖²` after propagation by this method.
    pub err_q: f64,
}

/// Everything one study cell produces, for inspection and plotting.
#[derive(Debug, Clone)]
pub struct PriorCellDetail {
    pub fitted: EmpiricalKernelMean<GaussianKernel>,
    /// Per method: the sample before propagation (the fit itself for woRes)
    /// and after.
    pub samples: Vec<(PriorMethod, EmpiricalKernelMean<GaussianKernel>, EmpiricalKernelMean<GaussianKernel>)>,
    pub rows: Vec<PriorRow>,
}

/// One study cell: fit, then propagate by each method.
pub fn prior_study_cell(cfg: &PriorStudyConfig, lambda_index: usize, seed: u64) -> Result<Vec<PriorRow>> {
    Ok(prior_study_detail(cfg, lambda_index, seed)?.rows)
}

pub fn prior_study_detail(cfg: &PriorStudyConfig, lambda_index: usize, seed: u64) -> Result<PriorCellDetail> {
    cfg.validate()?;
    let lambda = *cfg
        .lambdas
        .get(lambda_index)
        .ok_or_else(|| Error::invalid("lambda_index", "out of range"))?;
    let kernel = GaussianKernel::new(cfg.gamma)?;
    let target_p = GaussianMeanOracle::new(cfg.sigma_p, cfg.gamma)?;
    let target_q = GaussianMeanOracle::propagated(cfg.sigma_p, cfg.sigma_cond, cfg.gamma)?;

    let mut rng = seeded_rng(seed, 0);
    let support = Uniform::new_inclusive(-cfg.a, cfg.a).map_err(|e| Error::invalid("a", e.to_string()))?;
    let xs: Vec<f64> = (0..cfg.n).map(|_| support.sample(&mut rng)).collect();
    let points = Points::from_scalars(&xs);

    let fit = fit_weights_to_mean(&target_p, points, lambda, kernel)?;
    let err_p = target_p.distance_sq(&fit.mean)?;
    let sum_w2: f64 = fit.mean.weights().iter().map(|w| w * w).sum();
    let count = cfg.resample_count.unwrap_or(cfg.n);

    let mut rng = seeded_rng(seed, 1 + lambda_index as u64);
    let mut rows = Vec::with_capacity(3);
    let mut samples = Vec::with_capacity(3);
    for method in PriorMethod::ALL {
        let before = match method {
            PriorMethod::WoRes => fit.mean.clone(),
            PriorMethod::ResKh => resample(&fit.mean, count)?,
            PriorMethod::ResTrunc => truncate_resample(&fit.mean, count, &mut rng)?,
        };
        let moved: Vec<f64> = before
            .points()
            .as_slice()
            .iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x + cfg.sigma_cond * z
            })
            .collect();
        let after = EmpiricalKernelMean::new(Points::from_scalars(&moved), before.weights().to_vec(), kernel)?;
        rows.push(PriorRow {
            lambda,
            seed,
            method,
            err_p,
            sum_w2,
            err_q: target_q.distance_sq(&after)?,
        });
        samples.push((method, before, after));
    }
    Ok(PriorCellDetail {
        fitted: fit.mean,
        samples,
        rows,
    })
}

/// Rows ordered by λ, then seed, then method.
pub fn run_prior_study(cfg: &PriorStudyConfig) -> Result<Vec<PriorRow>> {
    cfg.validate()?;
    let cells: Vec<(usize, u64)> = (0..cfg.lambdas.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let rows: Vec<Vec<PriorRow>> = cells
        .par_iter()
        .map(|&(i, s)| {
            prior_study_cell(cfg, i, s).map_err(|e| Error::Run {
                context: format!("prior study lambda {:e} seed {s}", cfg.lambdas[i]),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSummary {
    pub lambda: f64,
    pub method: PriorMethod,
    pub err_p: f64,
    pub sum_w2: f64,
    pub err_q: f64,
}

/// Seed averages per `(λ, method)`, in first-appearance order.
pub fn summarize_prior_study(rows: &[PriorRow]) -> Vec<PriorSummary> {
    let mut out: Vec<(PriorSummary, usize)> = Vec::new();
    for r in rows {
        let slot = out
            .iter_mut()
            .find(|(s, _)| s.lambda == r.lambda && s.method == r.method);
        match slot {
            Some((s, k)) => {
                s.err_p += r.err_p;
                s.sum_w2 += r.sum_w2;
                s.err_q += r.err_q;
                *k += 1;
            }
            None => out.push((
                PriorSummary {
                    lambda: r.lambda,
                    method: r.method,
                    err_p: r.err_p,
                    sum_w2: r.sum_w2,
                    err_q: r.err_q,
                },
                1,
            )),
        }
    }
    out.into_iter()
        .map(|(mut s, k)| {
            let k = k as f64;
            s.err_p /= k;
            s.sum_w2 /= k;
            s.err_q /= k;
            s
        })
        .collect()
}

pub fn write_prior_csv<W: Write>(rows: &[PriorRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "seed", "method", "err_P", "sum_w2", "err_Q"])?;
    for r in rows {
        w.write_record([
            fmt_f64(r.lambda),
            r.seed.to_string(),
            r.method.name().to_string(),
            fmt_f64(r.err_p),
            fmt_f64(r.sum_w2),
            fmt_f64(r.err_q),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic filtering benchmark

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BenchMethod {
    Kmcf,
    /// Low-rank KBR with incomplete Cholesky factors of this rank.
    KmcfLowRank(usize),
    /// KMCF on this many herded training pairs.
    KmcfSub(usize),
    Naive,
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchMethod::Kmcf => f.write_str("kmcf"),
            BenchMethod::KmcfLowRank(r) => write!(f, "kmcf_low_rank({r})"),
            BenchMethod::KmcfSub(r) => write!(f, "kmcf_sub({r})"),
            BenchMethod::Naive => f.write_str("naive"),
        }
    }
}

impl FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let arg = |prefix: &str| -> Option<Result<usize>> {
            let inner = s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
            Some(
                inner
                    .trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|r| *r > 0)
                    .ok_or_else(|| Error::Parse(format!("bad size in method `{s}`"))),
            )
        };
        match s {
            "kmcf" => Ok(BenchMethod::Kmcf),
            "naive" => Ok(BenchMethod::Naive),
            _ => {
                if let Some(r) = arg("kmcf_low_rank") {
                    Ok(BenchMethod::KmcfLowRank(r?))
                } else if let Some(r) = arg("kmcf_sub") {
                    Ok(BenchMethod::KmcfSub(r?))
                } else {
                    Err(Error::Parse(format!(
                        "unknown method `{s}` (expected kmcf, kmcf_low_rank(r), kmcf_sub(r) or naive)"
                    )))
                }
            }
        }
    }
}

impl TryFrom<String> for BenchMethod {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BenchMethod> for String {
    fn from(m: BenchMethod) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsmBenchConfig {
    pub models: Vec<SyntheticModelId>,
    pub n: Vec<usize>,
    pub seeds: Vec<u64>,
    pub methods: Vec<BenchMethod>,
    #[serde(default = "default_test_length")]
    pub test_length: usize,
    /// Cross-validation grid; ignored when `fixed` is set.
    #[serde(default)]
    pub grid: CvGrid,
    /// Skip cross-validation and use these hyperparameters everywhere.
    #[serde(default)]
    pub fixed: Option<Hyperparams>,
    #[serde(default)]
    pub filter: FilterOptions,
    /// Worker threads; the rayon default when absent.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_test_length() -> usize {
    100
}

impl SsmBenchConfig {
    /// Minutes-scale run on SSM 1a and 2a.
    pub fn desk() -> Self {
        Self {
            models: vec![SyntheticModelId::M1a, SyntheticModelId::M2a],
            n: vec![50, 100, 200],
            seeds: (0..5).collect(),
            methods: vec![BenchMethod::Kmcf, BenchMethod::Naive],
            test_length: 100,
            grid: CvGrid::default(),
            fixed: None,
            filter: FilterOptions::default(),
            threads: None,
        }
    }

    /// All eight models, training sizes up to 5000 and 20 repeats. Takes
    /// hours on a single core.
    pub fn full_scale() -> Self {
        Self {
            models: SyntheticModelId::ALL.to_vec(),
            n: vec![100, 200, 500, 1000, 2000, 5000],
            seeds: (0..20).collect(),
            methods: vec![
                BenchMethod::Kmcf,
                BenchMethod::KmcfLowRank(10),
                BenchMethod::KmcfLowRank(20),
                BenchMethod::KmcfSub(50),
                BenchMethod::KmcfSub(100),
                BenchMethod::Naive,
            ],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.n.is_empty() || self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("models, n, seeds and methods must be nonempty".into()));
        }
        if let Some(n) = self.n.iter().find(|n| **n < 4) {
            return Err(Error::Config(format!("training size {n} is below the minimum of 4")));
        }
        if self.test_length == 0 {
            return Err(Error::Config("test_length must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        match &self.fixed {
            Some(h) => {
                h.kernels()?;
                h.kbr()?;
            }
            None => self.grid.validate()?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub model: SyntheticModelId,
    pub n: usize,
    pub seed: u64,
    pub method: BenchMethod,
    pub rmse: f64,
    pub wall_ms: f64,
    pub params: Hyperparams,
}

/// Training trajectory for one benchmark cell.
pub fn bench_training(model: SyntheticModelId, n: usize, seed: u64) -> Result<Trajectory> {
    simulate(model, n, &mut seeded_rng(seed, STREAM_TRAIN))
}

/// Test trajectory for one benchmark cell.
pub fn bench_test(model: SyntheticModelId, t_len: usize, seed: u64) -> Result<Trajectory> {
    simulate(model, t_len, &mut seeded_rng(seed, STREAM_TEST))
}

fn training_spec(model: SyntheticModelId, traj: &Trajectory) -> Result<SsmSpec> {
    let training = TrainingSet::new(traj.states.clone(), traj.observations.clone())?;
    Ok(model.spec(training, traj.controls.clone()))
}

/// Cross-validates on the seed-0 training trajectory of `(model, n)`.
pub fn cross_validate_model(
    model: SyntheticModelId,
    n: usize,
    grid: &CvGrid,
    options: &FilterOptions,
) -> Result<CvOutcome> {
    let traj = bench_training(model, n, 0)?;
    cross_validate(&training_spec(model, &traj)?, grid, options, 0)
}

/// Runs one `(model, n, seed, method)` cell with the given hyperparameters.
pub fn run_bench_cell(
    model: SyntheticModelId,
    n: usize,
    seed: u64,
    method: BenchMethod,
    params: &Hyperparams,
    options: &FilterOptions,
    test_length: usize,
) -> Result<BenchResult> {
    let train = bench_training(model, n, seed)?;
    let test = bench_test(model, test_length, seed)?;
    let spec = SsmSpec {
        controls: test.controls.clone(),
        ..training_spec(model, &train)?
    };
    let start = Instant::now();
    let estimates = match method {
        BenchMethod::Naive => {
            let ky = GaussianKernel::new(params.ky_bandwidth)?;
            naive_baseline(&spec.training, &test.observations, &ky)?
        }
        _ => {
            let mut opts = *options;
            match method {
                BenchMethod::KmcfLowRank(r) => opts.low_rank = Some(CholeskyStop::Rank(r)),
                BenchMethod::KmcfSub(r) => opts.subsample = Some(r),
                _ => {}
            }
            let cfg = opts.config(params)?;
            let filter = Kmcf::new(&spec.training, &cfg)?;
            filter
                .run(&spec, &test.observations, &mut seeded_rng(seed, STREAM_FILTER))?
                .means()
        }
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(BenchResult {
        model,
        n,
        seed,
        method,
        rmse: rmse(&estimates, &test.states)?,
        wall_ms,
        params: *params,
    })
}

/// Rows ordered by model, n, seed, then method as listed in the config.
pub fn run_ssm_bench(cfg: &SsmBenchConfig) -> Result<Vec<BenchResult>> {
    cfg.validate()?;
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| ssm_bench_inner(cfg)),
        None => ssm_bench_inner(cfg),
    }
}

fn ssm_bench_inner(cfg: &SsmBenchConfig) -> Result<Vec<BenchResult>> {
    let groups: Vec<(SyntheticModelId, usize)> = cfg
        .models
        .iter()
        .flat_map(|&m| cfg.n.iter().map(move |&n| (m, n)))
        .collect();
    let params: Vec<Hyperparams> = groups
        .par_iter()
        .map(|&(model, n)| match cfg.fixed {
            Some(h) => Ok(h),
            None => cross_validate_model(model, n, &cfg.grid, &cfg.filter)
                .map(|o| o.best)
                .map_err(|e| Error::Run {
                    context: format!("cross-validation model {model} n {n}"),
                    source: Box::new(e),
                }),
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for (g, &(model, n)) in groups.iter().enumerate() {
        for &seed in &cfg.seeds {
            for &method in &cfg.methods {
                cells.push((g, model, n, seed, method));
            }
        }
    }
    cells
        .par_iter()
        .map(|&(g, model, n, seed, method)| {
            run_bench_cell(model, n, seed, method, &params[g], &cfg.filter, cfg.test_length).map_err(|e| {
                Error::Run {
                    context: format!("model {model} n {n} seed {seed} method {method}"),
                    source: Box::new(e),
                }
            })
        })
        .collect()
}

pub const SSM_CSV_HEADER: [&str; 10] = [
    "model", "n", "seed", "method", "rmse", "wall_ms", "kx_bw", "ky_bw", "eps", "delta",
];

pub fn write_ssm_csv<W: Write>(rows: &[BenchResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SSM_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.model.name().to_string(),
            r.n.to_string(),
            r.seed.to_string(),
            r.method.to_string(),
            fmt_f64(r.rmse),
            format!("{:.3}", r.wall_ms),
            fmt_f64(r.params.kx_bandwidth),
            fmt_f64(r.params.ky_bandwidth),
            fmt_f64(r.params.eps),
            fmt_f64(r.params.delta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Median of `values`; the mean of the middle two for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { (v[m - 1] + v[m]) / 2.0 } else { v[m] })
}

/// Contents of a filter config file: hyperparameters plus filter options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterFile {
    pub params: Hyperparams,
    #[serde(default)]
    pub filter: FilterOptions,
}

pub fn from_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    from_toml(&std::fs::read_to_string(path)?).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}
