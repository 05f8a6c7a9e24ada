//! Kernel herding over finite candidate sets.
//!
//! Greedy selection: the first pick maximizes `m̂(z)`; pick `p` maximizes
//! `m̂(z) − (1/p) Σ_{j<p} k(z, X̄_j)`. The penalty sums are maintained
//! incrementally, so each step costs one kernel column (`O(N)`).

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmpiricalKernelMean, MeanEmbedding};
use crate::error::{Error, Result};
use crate::kernels::{GramAccess, Kernel, KernelColumns, Points};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HerdingMode {
    WithRepetition,
    WithoutRepetition,
}

/// Herd `count` pseudo-samples for `target` from `candidates`.
#[derive(Debug, Clone, Copy)]
pub struct HerdingRequest<'a, T: ?Sized, K> {
    pub target: &'a T,
    pub candidates: &'a Points,
    pub kernel: &'a K,
    pub count: usize,
    pub mode: HerdingMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HerdingResult {
    /// Candidate index of each pick, in pick order.
    pub indices: Vec<usize>,
    pub points: Points,
}

pub fn herd<T: MeanEmbedding + ?Sized, K: Kernel>(
    req: &HerdingRequest<'_, T, K>,
) -> Result<HerdingResult> {
    if req.candidates.is_empty() {
        return Err(Error::Empty("herding candidates"));
    }
    let values: Vec<f64> = req
        .candidates
        .iter()
        .map(|z| req.target.evaluate_at(z))
        .collect();
    let cols = KernelColumns {
        kernel: req.kernel,
        points: req.candidates,
    };
    let indices = herd_indices(&values, &cols, req.count, req.mode)?;
    Ok(HerdingResult {
        points: req.candidates.select(&indices),
        indices,
    })
}

/// Core greedy loop. `values[z]` is the target evaluated at candidate `z`;
/// `kernel.column(j)` yields `k(Z_z, Z_j)` for every `z`.
pub fn herd_indices<G: GramAccess + ?Sized>(
    values: &[f64],
    kernel: &G,
    count: usize,
    mode: HerdingMode,
) -> Result<Vec<usize>> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Empty("herding candidates"));
    }
    if kernel.size() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: kernel.size(),
        });
    }
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("herding target values"));
    }
    if mode == HerdingMode::WithoutRepetition && count > n {
        return Err(Error::invalid(
            "count",
            format!("{count} picks without repetition from {n} candidates"),
        ));
    }

    let mut penalty = vec![0.0; n];
    let mut taken = vec![false; n];
    let mut col = vec![0.0; n];
    let mut picks = Vec::with_capacity(count);
    for p in 1..=count {
        let scale = 1.0 / p as f64;
        let mut best: Option<(usize, f64)> = None;
        for z in 0..n {
            if taken[z] {
                continue;
            }
            let obj = values[z] - scale * penalty[z];
            if best.is_none_or(|(_, b)| obj > b) {
                best = Some((z, obj));
            }
        }
        let (j, _) = best.expect("a candidate is always available");
        picks.push(j);
        if mode == HerdingMode::WithoutRepetition {
            taken[j] = true;
        }
        if p < count {
            kernel.column(j, &mut col);
            for (acc, c) in penalty.iter_mut().zip(&col) {
                *acc += c;
            }
        }
    }
    Ok(picks)
}

/// Herds `count` points from the mean's own support (with repetition) and
/// returns the uniform-weight estimate over them.
pub fn resample<K: Kernel + Clone>(
    m: &EmpiricalKernelMean<K>,
    count: usize,
) -> Result<EmpiricalKernelMean<K>> {
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    let res = herd(&HerdingRequest {
        target: m,
        candidates: m.points(),
        kernel: m.kernel(),
        count,
        mode: HerdingMode::WithRepetition,
    })?;
    EmpiricalKernelMean::uniform(res.points, m.kernel().clone())
}

/// Expands `picks` to exactly `n` entries by cycling through them, i.e. the
/// `ℓ` picks copied `⌈n/ℓ⌉` times and cut at `n`.
pub fn replicate<T: Copy>(picks: &[T], n: usize) -> Vec<T> {
    picks.iter().copied().cycle().take(n).collect()
}

/// Baseline resampler: negative weights are zeroed, the rest renormalized
/// and `count` indices drawn multinomially. Returns a uniform-weight mean.
pub fn truncate_resample<K: Kernel + Clone, R: Rng + ?Sized>(
    m: &EmpiricalKernelMean<K>,
    count: usize,
    rng: &mut R,
) -> Result<EmpiricalKernelMean<K>> {
    let idx = truncate_resample_indices(m.weights(), count, rng)?;
    EmpiricalKernelMean::uniform(m.points().select(&idx), m.kernel().clone())
}

pub fn truncate_resample_indices<R: Rng + ?Sized>(
    weights: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    let truncated: Vec<f64> = weights.iter().map(|w| w.max(0.0)).collect();
    let dist = WeightedIndex::new(&truncated)
        .map_err(|_| Error::invalid("weights", "no positive weight to resample from"))?;
    Ok((0..count).map(|_| dist.sample(rng)).collect())
}

struct ProductColumns<'a, KX, KY> {
    kx: &'a KX,
    ky: &'a KY,
    xs: &'a Points,
    ys: &'a Points,
}

impl<KX: Kernel, KY: Kernel> GramAccess for ProductColumns<'_, KX, KY> {
    fn size(&self) -> usize {
        self.xs.len()
    }

    fn diag(&self, i: usize) -> f64 {
        let (x, y) = (self.xs.get(i), self.ys.get(i));
        self.kx.eval(x, x) * self.ky.eval(y, y)
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        let (xj, yj) = (self.xs.get(j), self.ys.get(j));
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.kx.eval(self.xs.get(i), xj) * self.ky.eval(self.ys.get(i), yj);
        }
    }
}

/// Selects `r` training pairs whose uniform joint embedding under the product
/// kernel approximates that of all `n` pairs. Herds without repetition and
/// returns indices in pick order.
pub fn subsample_joint<KX: Kernel, KY: Kernel>(
    xs: &Points,
    ys: &Points,
    r: usize,
    kx: &KX,
    ky: &KY,
) -> Result<Vec<usize>> {
    let n = xs.len();
    if ys.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: ys.len(),
        });
    }
    if n == 0 {
        return Err(Error::Empty("training pairs"));
    }
    if r == 0 || r > n {
        return Err(Error::invalid("r", format!("must be in 1..={n}, got {r}")));
    }
    let mut values = vec![0.0; n];
    for i in 0..n {
        let (xi, yi) = (xs.get(i), ys.get(i));
        values[i] += kx.eval(xi, xi) * ky.eval(yi, yi);
        for j in (i + 1)..n {
            let v = kx.eval(xi, xs.get(j)) * ky.eval(yi, ys.get(j));
            values[i] += v;
            values[j] += v;
        }
    }
    let inv = 1.0 / n as f64;
    values.iter_mut().for_each(|v| *v *= inv);
    let cols = ProductColumns { kx, ky, xs, ys };
    herd_indices(&values, &cols, r, HerdingMode::WithoutRepetition)
}
