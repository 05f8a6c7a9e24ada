//! State-space model abstractions and the eight synthetic benchmark models.
//!
//! | model | transition | observation |
//! |-------|------------|-------------|
//! | 1a | `x = 0.9x' + v` | `y = x + w` |
//! | 1b | `x = 0.9x' + (u + v)/√2` | `y = x + w` |
//! | 2a | `x = 0.9x' + v` | `y = 0.5·exp(x/2)·w` |
//! | 2b | `x = 0.9x' + (u + v)/√2` | `y = 0.5·exp(x/2)·w` |
//! | 3a | `x = 0.9x' + v` | `y = 0.5·exp(x/2)·W`, `W ∈ R¹⁰` |
//! | 3b | `x = 0.9x' + (u + v)/√2` | `y = 0.5·exp(x/2)·W` |
//! | 4a | `a = x' + √2·v`, clamp | `b = x + w`, wrap |
//! | 4b | `a = x' + u + v`, clamp | `b = x + w`, wrap |
//!
//! Clamp: `x = a` if `|a| ≤ 3`, else `−3`. Wrap: `y = b` if `|b| ≤ 3`, else
//! `b − 6·sign(b)`. All noises are standard normal; controls `u ~ N(0, 1)`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Points;

/// Draws initial states.
pub trait PriorSampler: Send + Sync {
    fn state_dim(&self) -> usize;
    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]);
}

/// Draws `x_t ~ p(· | x_{t−1}, u_t)`. Never sees observations.
pub trait TransitionSampler: Send + Sync {
    fn state_dim(&self) -> usize;
    fn step_into(
        &self,
        prev: &[f64],
        control: Option<&[f64]>,
        rng: &mut dyn RngCore,
        out: &mut [f64],
    );
}

/// State-observation example pairs `{(X_i, Y_i)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub states: Points,
    pub observations: Points,
}

impl TrainingSet {
    pub fn new(states: Points, observations: Points) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Empty("training pairs"));
        }
        if states.len() != observations.len() {
            return Err(Error::LengthMismatch {
                expected: states.len(),
                found: observations.len(),
            });
        }
        Ok(Self {
            states,
            observations,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> TrainingSet {
        TrainingSet {
            states: self.states.select(indices),
            observations: self.observations.select(indices),
        }
    }

    /// Contiguous sub-range `[start, end)`.
    pub fn range(&self, start: usize, end: usize) -> TrainingSet {
        self.select(&(start..end).collect::<Vec<_>>())
    }
}

/// Everything the filter knows about a model: samplers for the prior and the
/// transition, the training pairs, and the optional test-time controls.
#[derive(Clone)]
pub struct SsmSpec {
    pub prior: Arc<dyn PriorSampler>,
    pub transition: Arc<dyn TransitionSampler>,
    pub training: TrainingSet,
    /// `controls[t]` is passed to the transition into step `t` (0-based).
    pub controls: Option<Points>,
}

impl SsmSpec {
    pub fn validate(&self) -> Result<()> {
        let dx = self.prior.state_dim();
        if self.transition.state_dim() != dx || self.training.states.dim() != dx {
            return Err(Error::DimensionMismatch {
                expected: dx,
                found: self.training.states.dim(),
            });
        }
        if self.training.is_empty() {
            return Err(Error::Empty("training pairs"));
        }
        Ok(())
    }
}

impl fmt::Debug for SsmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SsmSpec")
            .field("state_dim", &self.prior.state_dim())
            .field("training_len", &self.training.len())
            .field("has_controls", &self.controls.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SyntheticModelId {
    M1a,
    M1b,
    M2a,
    M2b,
    M3a,
    M3b,
    M4a,
    M4b,
}

impl SyntheticModelId {
    pub const ALL: [SyntheticModelId; 8] = [
        Self::M1a,
        Self::M1b,
        Self::M2a,
        Self::M2b,
        Self::M3a,
        Self::M3b,
        Self::M4a,
        Self::M4b,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::M1a => "1a",
            Self::M1b => "1b",
            Self::M2a => "2a",
            Self::M2b => "2b",
            Self::M3a => "3a",
            Self::M3b => "3b",
            Self::M4a => "4a",
            Self::M4b => "4b",
        }
    }

    pub fn has_control(self) -> bool {
        matches!(self, Self::M1b | Self::M2b | Self::M3b | Self::M4b)
    }

    fn family(self) -> u8 {
        match self {
            Self::M1a | Self::M1b => 1,
            Self::M2a | Self::M2b => 2,
            Self::M3a | Self::M3b => 3,
            Self::M4a | Self::M4b => 4,
        }
    }

    pub fn state_dim(self) -> usize {
        1
    }

    pub fn obs_dim(self) -> usize {
        if self.family() == 3 {
            10
        } else {
            1
        }
    }

    pub fn model(self) -> SyntheticModel {
        SyntheticModel { id: self }
    }

    /// Filtering problem for this model with the given training pairs and
    /// test-time controls.
    pub fn spec(self, training: TrainingSet, controls: Option<Points>) -> SsmSpec {
        let m = Arc::new(self.model());
        SsmSpec {
            prior: m.clone(),
            transition: m,
            training,
            controls,
        }
    }
}

impl fmt::Display for SyntheticModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches("ssm").trim_start_matches("SSM");
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::Parse(format!("unknown model id `{s}` (expected 1a..4b)")))
    }
}

impl TryFrom<String> for SyntheticModelId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SyntheticModelId> for String {
    fn from(m: SyntheticModelId) -> String {
        m.name().to_string()
    }
}

/// Variance `1/(1 − a²)` of the stationary AR(1) process `x = a·x' + v`.
pub fn stationary_prior_variance(a: f64) -> Result<f64> {
    if !(a.abs() < 1.0) {
        return Err(Error::invalid("a", format!("|a| must be < 1, got {a}")));
    }
    Ok(1.0 / (1.0 - a * a))
}

const AR_COEF: f64 = 0.9;
const BOX: f64 = 3.0;

/// One of the synthetic models; implements both samplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticModel {
    id: SyntheticModelId,
}

impl SyntheticModel {
    pub fn id(&self) -> SyntheticModelId {
        self.id
    }

    /// Deterministic transition given the noise draws.
    pub(crate) fn transition_with(&self, prev: f64, u: f64, v: f64) -> f64 {
        match (self.id.family(), self.id.has_control()) {
            (4, false) => clamp_box(prev + std::f64::consts::SQRT_2 * v),
            (4, true) => clamp_box(prev + u + v),
            (_, false) => AR_COEF * prev + v,
            (_, true) => AR_COEF * prev + (u + v) / std::f64::consts::SQRT_2,
        }
    }

    /// Deterministic observation given the noise vector (length `obs_dim`).
    pub(crate) fn observe_with(&self, x: f64, w: &[f64]) -> Vec<f64> {
        match self.id.family() {
            1 => vec![x + w[0]],
            2 | 3 => {
                let s = 0.5 * (x / 2.0).exp();
                w.iter().map(|wi| s * wi).collect()
            }
            _ => vec![wrap_box(x + w[0])],
        }
    }

    pub fn sample_prior(&self, rng: &mut dyn RngCore) -> f64 {
        if self.id.family() == 4 {
            Uniform::new_inclusive(-BOX, BOX).expect("valid range").sample(rng)
        } else {
            let sd = stationary_prior_variance(AR_COEF).expect("|0.9| < 1").sqrt();
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        }
    }

    pub fn sample_observation(&self, x: f64, rng: &mut dyn RngCore) -> Vec<f64> {
        let w: Vec<f64> = (0..self.id.obs_dim())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        self.observe_with(x, &w)
    }
}

fn clamp_box(a: f64) -> f64 {
    if a.abs() <= BOX {
        a
    } else {
        -BOX
    }
}

fn wrap_box(b: f64) -> f64 {
    if b.abs() <= BOX {
        b
    } else {
        b - 2.0 * BOX * b.signum()
    }
}

impl PriorSampler for SyntheticModel {
    fn state_dim(&self) -> usize {
        1
    }

    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        out[0] = self.sample_prior(rng);
    }
}

impl TransitionSampler for SyntheticModel {
    fn state_dim(&self) -> usize {
        1
    }

    fn step_into(
        &self,
        prev: &[f64],
        control: Option<&[f64]>,
        rng: &mut dyn RngCore,
        out: &mut [f64],
    ) {
        let u = control.map_or(0.0, |c| c[0]);
        let v: f64 = StandardNormal.sample(rng);
        out[0] = self.transition_with(prev[0], u, v);
    }
}

/// A simulated run: hidden states, observations and (for controlled models)
/// the control inputs. `controls[0]` is drawn but has no effect: the
/// first state comes from the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Points,
    pub observations: Points,
    pub controls: Option<Points>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Simulates `t_len` steps. Draw order per step: control (if any), state
/// noise (or the prior at step one), observation noise.
pub fn simulate<R: Rng + ?Sized>(
    id: SyntheticModelId,
    t_len: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if t_len == 0 {
        return Err(Error::invalid("T", "must be at least 1"));
    }
    let model = id.model();
    let mut rng = DynRng(rng);
    let mut states = Vec::with_capacity(t_len);
    let mut obs = Points::empty(id.obs_dim());
    let mut controls = id.has_control().then(Vec::new);
    let mut x = 0.0;
    for t in 0..t_len {
        let u = if let Some(c) = controls.as_mut() {
            let u: f64 = StandardNormal.sample(&mut rng);
            c.push(u);
            u
        } else {
            0.0
        };
        x = if t == 0 {
            model.sample_prior(&mut rng)
        } else {
            let v: f64 = StandardNormal.sample(&mut rng);
            model.transition_with(x, u, v)
        };
        states.push(x);
        obs.push(&model.sample_observation(x, &mut rng));
    }
    Ok(Trajectory {
        states: Points::from_scalars(&states),
        observations: obs,
        controls: controls.map(|c| Points::from_scalars(&c)),
    })
}

/// Training pairs from one simulation of length `n`.
pub fn make_training_set<R: Rng + ?Sized>(
    id: SyntheticModelId,
    n: usize,
    rng: &mut R,
) -> Result<TrainingSet> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let traj = simulate(id, n, rng)?;
    TrainingSet::new(traj.states, traj.observations)
}

struct DynRng<'a, R: ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for DynRng<'_, R> {
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

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `t, x0.., y0.., [u]` with a header row. Values are printed in
/// shortest round-trip form.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dx = traj.states.dim();
    let dy = traj.observations.dim();
    let mut header = vec!["t".to_string()];
    header.extend((0..dx).map(|i| format!("x{i}")));
    header.extend((0..dy).map(|i| format!("y{i}")));
    if traj.controls.is_some() {
        header.push("u".into());
    }
    w.write_record(&header)?;
    for t in 0..traj.len() {
        let mut row = vec![(t + 1).to_string()];
        row.extend(traj.states.get(t).iter().map(|v| fmt_f64(*v)));
        row.extend(traj.observations.get(t).iter().map(|v| fmt_f64(*v)));
        if let Some(c) = &traj.controls {
            row.push(fmt_f64(c.get(t)[0]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(Error::Parse("trajectory CSV must start with column `t`".into()));
    }
    let dx = header.iter().filter(|h| h.starts_with('x')).count();
    let dy = header.iter().filter(|h| h.starts_with('y')).count();
    let has_u = header.iter().any(|h| h == "u");
    if dx == 0 || dy == 0 || header.len() != 1 + dx + dy + usize::from(has_u) {
        return Err(Error::Parse(format!("unexpected trajectory header {header:?}")));
    }
    let mut xs = Points::empty(dx);
    let mut ys = Points::empty(dy);
    let mut us = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != dx + dy + usize::from(has_u) {
            return Err(Error::Parse("ragged trajectory row".into()));
        }
        xs.push(&vals[..dx]);
        ys.push(&vals[dx..dx + dy]);
        if has_u {
            us.push(vals[dx + dy]);
        }
    }
    Ok(Trajectory {
        states: xs,
        observations: ys,
        controls: has_u.then(|| Points::from_scalars(&us)),
    })
}
