//! The Kernel Monte Carlo Filter.
//!
//! Each step propagates particles through the transition sampler, corrects
//! with Kernel Bayes' Rule against the training pairs, and (optionally)
//! resamples the posterior weights back to particles by kernel herding.

use std::io::Write;
use web_time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::embedding::{argmax_first, ess, EmpiricalKernelMean};
use crate::error::{Error, Result};
use crate::herding::{herd_indices, replicate, subsample_joint, HerdingMode};
use crate::kbr::{incomplete_cholesky, kbr_dense, CholeskyStop, GramPair, KbrConfig, LowRankKbr};
use crate::kernels::{sq_dist, Kernel, Points};
use crate::ssm::{fmt_f64, SsmSpec, TrainingSet};

/// Default cap on the number of herded samples per resampling step.
pub const DEFAULT_RESAMPLE_CAP: usize = 50;

/// When to resample the posterior before the next prediction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplePolicy {
    #[default]
    EveryStep,
    /// Skip resampling while `ESS ≥ theta·n`; the weighted sample is then
    /// propagated as is.
    EssThreshold(f64),
}

impl ResamplePolicy {
    /// Resample once `Σwᵢ² > 2/n`, i.e. `ESS < n/2`.
    pub fn half_ess() -> Self {
        ResamplePolicy::EssThreshold(0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmcfConfig<KX, KY> {
    pub kx: KX,
    pub ky: KY,
    pub kbr: KbrConfig,
    /// Herded samples per resampling step; `None` means `min(n, 50)`.
    pub resample_count: Option<usize>,
    pub resample_policy: ResamplePolicy,
    /// Replace dense KBR by its low-rank form with incomplete Cholesky factors.
    pub low_rank: Option<CholeskyStop>,
    /// Herd this many training pairs and filter with those only.
    pub subsample: Option<usize>,
}

impl<KX: Kernel, KY: Kernel> KmcfConfig<KX, KY> {
    pub fn new(kx: KX, ky: KY, kbr: KbrConfig) -> Self {
        Self {
            kx,
            ky,
            kbr,
            resample_count: None,
            resample_policy: ResamplePolicy::EveryStep,
            low_rank: None,
            subsample: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kbr.validate()?;
        if self.resample_count == Some(0) {
            return Err(Error::invalid("resample_count", "must be at least 1"));
        }
        if let ResamplePolicy::EssThreshold(t) = self.resample_policy {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid("ess threshold", format!("must be in (0, 1], got {t}")));
            }
        }
        if self.subsample == Some(0) {
            return Err(Error::invalid("subsample", "must be at least 1"));
        }
        if self.kx.diag_bound().is_none() {
            return Err(Error::invalid("kx", "the state kernel must be bounded"));
        }
        Ok(())
    }
}

/// Per-step output of the filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    /// Normalized posterior weights over the training states.
    pub weights: Vec<f64>,
    /// ESS of the posterior weights.
    pub ess: f64,
    /// ESS of the prior (propagated) representation.
    pub prior_ess: f64,
    /// Whether this step's particles came from a herding resample.
    pub resampled: bool,
    /// FNV-1a hash of the propagated particle coordinates.
    pub prior_digest: u64,
    pub mean: Vec<f64>,
    pub mode: Vec<f64>,
    pub step_ms: f64,
}

#[derive(Debug, Clone)]
pub struct FilterTrace<K> {
    /// Training states the weights refer to (after any subsampling).
    pub support: Points,
    pub kernel: K,
    pub steps: Vec<FilterStep>,
}

impl<K: Kernel + Clone> FilterTrace<K> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Posterior mean at every step.
    pub fn means(&self) -> Points {
        let mut out = Points::empty(self.support.dim());
        for s in &self.steps {
            out.push(&s.mean);
        }
        out
    }

    pub fn posterior(&self, t: usize) -> Result<EmpiricalKernelMean<K>> {
        EmpiricalKernelMean::new(
            self.support.clone(),
            self.steps[t].weights.clone(),
            self.kernel.clone(),
        )
    }

    /// Uncentered second moment at step `t`, computed on demand.
    pub fn covariance(&self, t: usize) -> Result<DMatrix<f64>> {
        Ok(self.posterior(t)?.covariance())
    }

    pub fn mean_step_ms(&self) -> f64 {
        self.steps.iter().map(|s| s.step_ms).sum::<f64>() / self.steps.len().max(1) as f64
    }
}

enum Backend {
    Dense,
    LowRank(LowRankKbr),
}

/// A filter with its training-phase work done: Gram matrices, the `G_X`
/// factorization and optional low-rank factors or subsample.
pub struct Kmcf<KX, KY> {
    cfg: KmcfConfig<KX, KY>,
    training: TrainingSet,
    gram: GramPair,
    backend: Backend,
    resample_count: usize,
}

impl<KX: Kernel + Clone, KY: Kernel + Clone> Kmcf<KX, KY> {
    pub fn new(training: &TrainingSet, cfg: &KmcfConfig<KX, KY>) -> Result<Self> {
        cfg.validate()?;
        let training = match cfg.subsample {
            Some(r) if r < training.len() => {
                let idx = subsample_joint(&training.states, &training.observations, r, &cfg.kx, &cfg.ky)?;
                training.select(&idx)
            }
            _ => training.clone(),
        };
        let n = training.len();
        if n < 2 {
            return Err(Error::invalid("training pairs", format!("need at least 2, got {n}")));
        }
        let gram = GramPair::from_samples(&cfg.kx, &training.states, &cfg.ky, &training.observations)?;
        let backend = match cfg.low_rank {
            None => {
                // factor G_X + nεI once, before any observation arrives
                gram.solve_gx(cfg.kbr.eps, &DVector::zeros(n))?;
                Backend::Dense
            }
            Some(stop) => {
                let u = incomplete_cholesky(gram.gx(), stop)?.factor;
                let v = incomplete_cholesky(gram.gy(), stop)?.factor;
                Backend::LowRank(LowRankKbr::new(u, v, cfg.kbr.eps)?)
            }
        };
        let resample_count = match cfg.resample_count {
            None => n.min(DEFAULT_RESAMPLE_CAP),
            Some(l) if l <= n => l,
            Some(l) => {
                return Err(Error::invalid(
                    "resample_count",
                    format!("{l} exceeds the {n} training pairs"),
                ))
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            training,
            gram,
            backend,
            resample_count,
        })
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn resample_count(&self) -> usize {
        self.resample_count
    }

    fn correct(&self, k_y: &DVector<f64>, m_pi: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.backend {
            Backend::Dense => kbr_dense(k_y, m_pi, &self.gram, &self.cfg.kbr),
            Backend::LowRank(lr) => lr.weights(k_y, m_pi, self.cfg.kbr.delta),
        }
    }

    /// Herds `ℓ` training indices for the weights and cycles them to `n`.
    fn herd_resample(&self, weights: &[f64]) -> Result<Vec<usize>> {
        let w = DVector::from_column_slice(weights);
        let values = self.gram.gx() * w;
        let picks = herd_indices(
            values.as_slice(),
            self.gram.gx(),
            self.resample_count,
            HerdingMode::WithRepetition,
        )?;
        Ok(replicate(&picks, self.training.len()))
    }

    /// Runs the filter over `observations` (one row per time step).
    pub fn run<R: Rng + ?Sized>(
        &self,
        spec: &SsmSpec,
        observations: &Points,
        rng: &mut R,
    ) -> Result<FilterTrace<KX>> {
        spec.validate()?;
        let n = self.training.len();
        let dx = self.training.states.dim();
        if observations.dim() != self.training.observations.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.training.observations.dim(),
                found: observations.dim(),
            });
        }
        if spec.prior.state_dim() != dx {
            return Err(Error::DimensionMismatch {
                expected: dx,
                found: spec.prior.state_dim(),
            });
        }
        if let Some(c) = &spec.controls {
            if c.len() < observations.len() {
                return Err(Error::LengthMismatch {
                    expected: observations.len(),
                    found: c.len(),
                });
            }
        }
        let mut rng = RngRef(rng);
        let xs = &self.training.states;
        let ys = &self.training.observations;
        let uniform = 1.0 / n as f64;

        let mut particles = Points::new(dx, vec![0.0; n * dx])?;
        let mut particle_w = vec![uniform; n];
        let mut prev_w: Vec<f64> = Vec::new();
        let mut steps = Vec::with_capacity(observations.len());

        for t in 0..observations.len() {
            let start = Instant::now();
            let mut resampled = false;
            if t == 0 {
                for i in 0..n {
                    spec.prior.sample_into(&mut rng, particles.get_mut(i));
                }
            } else {
                let control = spec.controls.as_ref().map(|c| c.get(t));
                let skip = match self.cfg.resample_policy {
                    ResamplePolicy::EveryStep => false,
                    ResamplePolicy::EssThreshold(theta) => ess(&prev_w)? >= theta * n as f64,
                };
                let sources: Vec<usize> = if skip {
                    particle_w.copy_from_slice(&prev_w);
                    (0..n).collect()
                } else {
                    resampled = true;
                    particle_w.fill(uniform);
                    self.herd_resample(&prev_w)
                        .map_err(|e| step_error(t, e))?
                };
                for (i, &src) in sources.iter().enumerate() {
                    spec.transition
                        .step_into(xs.get(src), control, &mut rng, particles.get_mut(i));
                }
            }

            // m_π(X_q) = Σ_i a_i k_X(X_q, X_{t,i})
            let m_pi = DVector::from_iterator(
                n,
                xs.iter().map(|xq| {
                    particles
                        .iter()
                        .zip(&particle_w)
                        .map(|(p, a)| a * self.cfg.kx.eval(xq, p))
                        .sum::<f64>()
                }),
            );
            let y = observations.get(t);
            let k_y = DVector::from_iterator(n, ys.iter().map(|yq| self.cfg.ky.eval(yq, y)));

            let raw = self.correct(&k_y, &m_pi).map_err(|e| step_error(t, e))?;
            let sum = raw.sum();
            if !sum.is_finite() || raw.iter().all(|v| v.abs() < 1e-300) || sum == 0.0 {
                return Err(step_error(t, Error::ZeroWeightSum));
            }
            let weights: Vec<f64> = raw.iter().map(|v| v / sum).collect();

            let mut mean = vec![0.0; dx];
            for (p, w) in xs.iter().zip(&weights) {
                for (m, v) in mean.iter_mut().zip(p) {
                    *m += w * v;
                }
            }
            let mode = xs.get(argmax_first(&weights)).to_vec();
            let step = FilterStep {
                ess: ess(&weights)?,
                prior_ess: ess(&particle_w)?,
                resampled,
                prior_digest: digest(particles.as_slice()),
                mean,
                mode,
                weights,
                step_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            prev_w.clone_from(&step.weights);
            steps.push(step);
        }
        Ok(FilterTrace {
            support: self.training.states.clone(),
            kernel: self.cfg.kx.clone(),
            steps,
        })
    }
}

fn step_error(t: usize, e: Error) -> Error {
    Error::FilterStep {
        step: t + 1,
        source: Box::new(e),
    }
}

/// Filters `observations` with the training pairs and samplers in `spec`.
pub fn kmcf_run<KX: Kernel + Clone, KY: Kernel + Clone, R: Rng + ?Sized>(
    spec: &SsmSpec,
    observations: &Points,
    cfg: &KmcfConfig<KX, KY>,
    rng: &mut R,
) -> Result<FilterTrace<KX>> {
    Kmcf::new(&spec.training, cfg)?.run(spec, observations, rng)
}

/// Per-step lookup of the training state whose observation is most similar
/// to `y_t` under `ky` (lowest index on ties). Uses no dynamics.
pub fn naive_baseline<KY: Kernel>(
    training: &TrainingSet,
    observations: &Points,
    ky: &KY,
) -> Result<Points> {
    if observations.dim() != training.observations.dim() {
        return Err(Error::DimensionMismatch {
            expected: training.observations.dim(),
            found: observations.dim(),
        });
    }
    let mut out = Points::empty(training.states.dim());
    let mut sims = vec![0.0; training.len()];
    for y in observations.iter() {
        for (s, yj) in sims.iter_mut().zip(training.observations.iter()) {
            *s = ky.eval(y, yj);
        }
        out.push(training.states.get(argmax_first(&sims)));
    }
    Ok(out)
}

/// `√((1/T) Σ ‖x̂_t − x_t‖²)`.
pub fn rmse(estimates: &Points, truth: &Points) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            found: estimates.len(),
        });
    }
    if estimates.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            found: estimates.dim(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("rmse inputs"));
    }
    let sse: f64 = estimates.iter().zip(truth.iter()).map(|(a, b)| sq_dist(a, b)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// Writes `t, ess, mean.., mode.., rmse_running, step_ms`. `rmse_running`
/// is left empty without ground truth.
pub fn write_trace_csv<K, W: Write>(
    trace: &FilterTrace<K>,
    truth: Option<&Points>,
    out: W,
) -> Result<()> {
    let d = trace.support.dim();
    if let Some(tr) = truth {
        if tr.len() < trace.steps.len() || tr.dim() != d {
            return Err(Error::LengthMismatch {
                expected: trace.steps.len(),
                found: tr.len(),
            });
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "ess".to_string()];
    header.extend((0..d).map(|i| format!("mean{i}")));
    header.extend((0..d).map(|i| format!("mode{i}")));
    header.push("rmse_running".into());
    header.push("step_ms".into());
    w.write_record(&header)?;
    let mut sse = 0.0;
    for (t, s) in trace.steps.iter().enumerate() {
        let mut row = vec![(t + 1).to_string(), fmt_f64(s.ess)];
        row.extend(s.mean.iter().map(|v| fmt_f64(*v)));
        row.extend(s.mode.iter().map(|v| fmt_f64(*v)));
        match truth {
            Some(tr) => {
                sse += sq_dist(&s.mean, tr.get(t));
                row.push(fmt_f64((sse / (t + 1) as f64).sqrt()));
            }
            None => row.push(String::new()),
        }
        row.push(format!("{:.3}", s.step_ms));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn digest(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

struct RngRef<'a, R: ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for RngRef<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
