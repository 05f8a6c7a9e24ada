//! Weighted-sample kernel mean estimates and posterior decoding.
//!
//! An [`EmpiricalKernelMean`] represents `Σ wᵢ k(·, Xᵢ)`. Weights may be
//! negative and duplicate points are kept as separate terms; every operation
//! here is linear in the (point, weight) pairs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{gram_matrix, GaussianKernel, Kernel, Points};

/// Anything that can be evaluated pointwise as an RKHS element.
pub trait MeanEmbedding {
    fn evaluate_at(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> MeanEmbedding for F {
    fn evaluate_at(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalKernelMean<K> {
    points: Points,
    weights: Vec<f64>,
    kernel: K,
}

impl<K: Kernel> EmpiricalKernelMean<K> {
    pub fn new(points: Points, weights: Vec<f64>, kernel: K) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("kernel mean support"));
        }
        if points.len() != weights.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("kernel mean weights"));
        }
        Ok(Self {
            points,
            weights,
            kernel,
        })
    }

    /// Equal weights `1/n` on every point.
    pub fn uniform(points: Points, kernel: K) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n as f64; n], kernel)
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn is_normalized(&self) -> bool {
        (self.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12
    }

    /// Rescales the weights to sum to one.
    pub fn normalized(mut self) -> Result<Self> {
        let s: f64 = self.weights.iter().sum();
        if s == 0.0 || !s.is_finite() {
            return Err(Error::ZeroWeightSum);
        }
        self.weights.iter_mut().for_each(|w| *w /= s);
        Ok(self)
    }

    /// `Σᵢ wᵢ k(x, Xᵢ)`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.points.check_dim(x)?;
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * self.kernel.eval(x, p))
            .sum()
    }

    /// `wᵀ G w`, the squared RKHS norm of the estimate.
    pub fn norm_sq(&self) -> f64 {
        let g = gram_matrix(&self.kernel, &self.points, &self.points)
            .expect("same point list");
        let w = DVector::from_column_slice(&self.weights);
        w.dot(&(&g * &w))
    }

    /// `Σ w_i w_j k(X_i, Y_j)` between two estimates sharing a kernel.
    pub fn inner(&self, other: &EmpiricalKernelMean<K>) -> Result<f64>
    where
        K: PartialEq,
    {
        if self.kernel != other.kernel {
            return Err(Error::KernelMismatch);
        }
        let g = gram_matrix(&self.kernel, &self.points, &other.points)?;
        let a = DVector::from_column_slice(&self.weights);
        let b = DVector::from_column_slice(&other.weights);
        Ok(a.dot(&(&g * &b)))
    }

    /// Concatenation of the two weighted samples, i.e. the sum `m1 + m2`.
    pub fn sum(&self, other: &EmpiricalKernelMean<K>) -> Result<Self>
    where
        K: PartialEq + Clone,
    {
        if self.kernel != other.kernel {
            return Err(Error::KernelMismatch);
        }
        let points = self.points.concat(&other.points)?;
        let mut weights = self.weights.clone();
        weights.extend_from_slice(&other.weights);
        Self::new(points, weights, self.kernel.clone())
    }

    /// Weighted mean `Σ wᵢ Xᵢ`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for (o, v) in out.iter_mut().zip(p) {
                *o += w * v;
            }
        }
        out
    }

    /// Uncentered second moment `Σ wᵢ Xᵢ Xᵢᵀ`, symmetric by construction.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut c = DMatrix::zeros(d, d);
        for (p, w) in self.points.iter().zip(&self.weights) {
            for i in 0..d {
                for j in 0..=i {
                    c[(i, j)] += w * p[i] * p[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                c[(j, i)] = c[(i, j)];
            }
        }
        c
    }

    /// `Σ wᵢ I_A(Xᵢ)`. Not clamped: negative weights can push it outside `[0, 1]`.
    pub fn mass(&self, region: impl Fn(&[f64]) -> bool) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .filter(|(p, _)| region(p))
            .map(|(_, w)| w)
            .sum()
    }

    /// Smoothed density `Σ wᵢ J_h(x − Xᵢ)` with a standard Gaussian `J`.
    pub fn density(&self, x: &[f64], h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::invalid("h", format!("must be positive, got {h}")));
        }
        self.points.check_dim(x)?;
        let d = self.dim() as f64;
        let norm = (2.0 * std::f64::consts::PI).powf(-d / 2.0) * h.powf(-d);
        Ok(self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| {
                let u2 = crate::kernels::sq_dist(x, p) / (h * h);
                w * norm * (-0.5 * u2).exp()
            })
            .sum())
    }

    /// Support point carrying the largest weight; lowest index wins ties.
    pub fn mode(&self) -> &[f64] {
        self.points.get(argmax_first(&self.weights))
    }

    pub fn ess(&self) -> Result<f64> {
        ess(&self.weights)
    }

    pub fn summary(&self) -> Result<PosteriorSummary> {
        Ok(PosteriorSummary {
            mean: self.mean(),
            covariance: self.covariance(),
            mode: self.mode().to_vec(),
            ess: self.ess()?,
        })
    }
}

impl<K: Kernel> MeanEmbedding for EmpiricalKernelMean<K> {
    fn evaluate_at(&self, x: &[f64]) -> f64 {
        self.eval_unchecked(x)
    }
}

/// Decoded statistics of a posterior kernel mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    /// Uncentered: `Σ wᵢ Xᵢ Xᵢᵀ`.
    pub covariance: DMatrix<f64>,
    pub mode: Vec<f64>,
    pub ess: f64,
}

pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Effective sample size `1 / Σ wᵢ²` of the weights rescaled to sum to one.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Empty("weights"));
    }
    let s: f64 = weights.iter().sum();
    if s == 0.0 || !s.is_finite() {
        return Err(Error::ZeroWeightSum);
    }
    let sq: f64 = weights.iter().map(|w| (w / s) * (w / s)).sum();
    Ok(1.0 / sq)
}

/// Squared RKHS distance `‖m1 − m2‖²`, clamped at zero.
pub fn rkhs_distance_sq<K: Kernel + PartialEq>(
    m1: &EmpiricalKernelMean<K>,
    m2: &EmpiricalKernelMean<K>,
) -> Result<f64> {
    if m1.kernel != m2.kernel {
        return Err(Error::KernelMismatch);
    }
    let cross = m1.inner(m2)?;
    Ok((m1.norm_sq() - 2.0 * cross + m2.norm_sq()).max(0.0))
}

/// Closed-form kernel mean of `N(0, s²)` on the real line under a Gaussian
/// kernel of bandwidth `γ`:
/// `m(x) = √(γ²/(s²+γ²)) · exp(−x²/(2(γ²+s²)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMeanOracle {
    variance: f64,
    gamma: f64,
}

impl GaussianMeanOracle {
    /// Kernel mean of `N(0, σ²)`.
    pub fn new(sigma: f64, gamma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid("sigma", format!("must be positive, got {sigma}")));
        }
        if !(gamma > 0.0) {
            return Err(Error::invalid("gamma", format!("must be positive, got {gamma}")));
        }
        Ok(Self {
            variance: sigma * sigma,
            gamma,
        })
    }

    /// Kernel mean of `∫ N(x, σ_cond²) dN(0, σ_P²)(x) = N(0, σ_P² + σ_cond²)`.
    pub fn propagated(sigma_p: f64, sigma_cond: f64, gamma: f64) -> Result<Self> {
        if !(sigma_cond >= 0.0) {
            return Err(Error::invalid("sigma_cond", "must be non-negative"));
        }
        Self::new((sigma_p * sigma_p + sigma_cond * sigma_cond).sqrt(), gamma)
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn kernel(&self) -> GaussianKernel {
        GaussianKernel::new(self.gamma).expect("validated")
    }

    pub fn eval(&self, x: f64) -> f64 {
        let g2 = self.gamma * self.gamma;
        (g2 / (self.variance + g2)).sqrt() * (-x * x / (2.0 * (g2 + self.variance))).exp()
    }

    /// `‖m‖² = E k(X, X')` for independent `X, X'`.
    pub fn norm_sq(&self) -> f64 {
        let g2 = self.gamma * self.gamma;
        (g2 / (g2 + 2.0 * self.variance)).sqrt()
    }

    /// `⟨m, m̂⟩ = Σ wᵢ m(Xᵢ)`.
    pub fn inner(&self, m: &EmpiricalKernelMean<GaussianKernel>) -> Result<f64> {
        self.check(m)?;
        Ok(m.points
            .iter()
            .zip(m.weights())
            .map(|(p, w)| w * self.eval(p[0]))
            .sum())
    }

    /// `‖m̂ − m‖²` computed exactly from the closed-form cross terms.
    pub fn distance_sq(&self, m: &EmpiricalKernelMean<GaussianKernel>) -> Result<f64> {
        let cross = self.inner(m)?;
        Ok((m.norm_sq() - 2.0 * cross + self.norm_sq()).max(0.0))
    }

    fn check(&self, m: &EmpiricalKernelMean<GaussianKernel>) -> Result<()> {
        if m.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: m.dim(),
            });
        }
        if m.kernel().bandwidth() != self.gamma {
            return Err(Error::KernelMismatch);
        }
        Ok(())
    }
}

impl MeanEmbedding for GaussianMeanOracle {
    fn evaluate_at(&self, x: &[f64]) -> f64 {
        self.eval(x[0])
    }
}

/// `√(γ²/(σ_P²+γ²))·exp(−x²/(2(γ²+σ_P²)))`.
pub fn analytic_gaussian_mean_eval(sigma_p: f64, gamma: f64, x: f64) -> Result<f64> {
    Ok(GaussianMeanOracle::new(sigma_p, gamma)?.eval(x))
}

/// Weights fitted to a target mean, with the pre-normalization weight sum.
#[derive(Debug, Clone)]
pub struct WeightFit<K> {
    pub mean: EmpiricalKernelMean<K>,
    pub raw_sum: f64,
}

/// Solves `min_w ‖Σ wᵢ k(·,Xᵢ) − target‖² + λ‖w‖²`, i.e. `(G + λI) w = g` with
/// `gᵢ = target(Xᵢ)`, then normalizes `w` to sum to one.
pub fn fit_weights_to_mean<K: Kernel, T: MeanEmbedding + ?Sized>(
    target: &T,
    points: Points,
    lambda: f64,
    kernel: K,
) -> Result<WeightFit<K>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda", format!("must be positive, got {lambda}")));
    }
    if points.is_empty() {
        return Err(Error::Empty("fit points"));
    }
    let n = points.len();
    let mut a = gram_matrix(&kernel, &points, &points)?;
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let g = DVector::from_iterator(n, points.iter().map(|p| target.evaluate_at(p)));
    let chol = a.cholesky().ok_or(Error::SolverBreakdown {
        stage: "weight fit (G + λI)",
        condition: f64::INFINITY,
    })?;
    let w = chol.solve(&g);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fitted weights"));
    }
    let raw_sum = w.sum();
    let mean = EmpiricalKernelMean::new(points, w.as_slice().to_vec(), kernel)?.normalized()?;
    Ok(WeightFit { mean, raw_sum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g1() -> GaussianKernel {
        GaussianKernel::new(1.0).unwrap()
    }

    fn mean1(xs: &[f64], ws: &[f64]) -> EmpiricalKernelMean<GaussianKernel> {
        EmpiricalKernelMean::new(Points::from_scalars(xs), ws.to_vec(), g1()).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(mean1(&[0.0], &[1.0]).evaluate(&[0.0]).unwrap(), 1.0);
        assert_eq!(mean1(&[0.0, 0.0], &[0.5, 0.5]).evaluate(&[0.0]).unwrap(), 1.0);
        assert!(matches!(
            mean1(&[0.0], &[1.0]).evaluate(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn construction_errors() {
        assert!(EmpiricalKernelMean::new(Points::from_scalars(&[]), vec![], g1()).is_err());
        assert!(EmpiricalKernelMean::new(Points::from_scalars(&[1.0]), vec![1.0, 2.0], g1()).is_err());
        assert!(EmpiricalKernelMean::new(Points::from_scalars(&[1.0]), vec![f64::NAN], g1()).is_err());
    }

    #[test]
    fn distance_examples() {
        let m = mean1(&[0.3, -1.0], &[0.4, 0.6]);
        assert!(rkhs_distance_sq(&m, &m).unwrap() < 1e-15);
        let half = mean1(&[0.0], &[0.5]);
        assert_relative_eq!(
            rkhs_distance_sq(&mean1(&[0.0], &[1.0]), &half).unwrap(),
            0.25,
            max_relative = 1e-14
        );
        let other = EmpiricalKernelMean::new(
            Points::from_scalars(&[0.0]),
            vec![1.0],
            GaussianKernel::new(2.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            rkhs_distance_sq(&mean1(&[0.0], &[1.0]), &other),
            Err(Error::KernelMismatch)
        ));
    }

    #[test]
    fn analytic_mean_values() {
        assert_relative_eq!(
            analytic_gaussian_mean_eval(0.1, 0.1, 0.0).unwrap(),
            0.5f64.sqrt(),
            max_relative = 1e-14
        );
        assert!(analytic_gaussian_mean_eval(0.1, 0.1, 50.0).unwrap() < 1e-100);
        let k = GaussianKernel::new(0.3).unwrap();
        for x in [-0.5, 0.0, 0.2, 1.0] {
            let lim = analytic_gaussian_mean_eval(1e-9, 0.3, x).unwrap();
            assert_relative_eq!(lim, k.eval(&[x], &[0.0]), max_relative = 1e-9);
        }
        assert!(GaussianMeanOracle::new(0.0, 1.0).is_err());
        assert!(GaussianMeanOracle::new(1.0, -1.0).is_err());
    }

    /// Trapezoid quadrature of `∫ k(x, u) p(u) du` and `∫∫ k p p`.
    #[test]
    fn analytic_mean_matches_quadrature() {
        let (sigma, gamma) = (0.4, 0.25);
        let orc = GaussianMeanOracle::new(sigma, gamma).unwrap();
        let pdf = |u: f64| (-u * u / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * gamma * gamma)).exp();
        let h = 1e-3;
        let grid: Vec<f64> = (-6000..=6000).map(|i| i as f64 * h * sigma * 1.0).collect();
        let step = grid[1] - grid[0];
        for x in [0.0, 0.3, -1.1] {
            let q: f64 = grid.iter().map(|&u| k(x, u) * pdf(u)).sum::<f64>() * step;
            assert_relative_eq!(orc.eval(x), q, max_relative = 1e-8);
        }
        let coarse: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.015 * sigma).collect();
        let cs = coarse[1] - coarse[0];
        let mut nq = 0.0;
        for &a in &coarse {
            for &b in &coarse {
                nq += k(a, b) * pdf(a) * pdf(b);
            }
        }
        nq *= cs * cs;
        assert_relative_eq!(orc.norm_sq(), nq, max_relative = 1e-6);
    }

    #[test]
    fn ess_examples() {
        assert_relative_eq!(ess(&[0.125; 8]).unwrap(), 8.0, max_relative = 1e-14);
        assert_eq!(ess(&[0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(ess(&[0.5, 0.5, 0.0, 0.0]).unwrap(), 2.0);
        assert_relative_eq!(ess(&[2.0, 2.0]).unwrap(), 2.0);
        assert!(matches!(ess(&[0.0, 0.0]), Err(Error::ZeroWeightSum)));
    }

    #[test]
    fn decode_examples() {
        assert_eq!(mean1(&[-1.0, 1.0], &[0.5, 0.5]).mean(), vec![0.0]);
        let pts = Points::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 4.0]]).unwrap();
        let onehot = EmpiricalKernelMean::new(pts, vec![0.0, 0.0, 1.0], g1()).unwrap();
        assert_eq!(onehot.mean(), vec![0.5, 4.0]);
        let c = onehot.covariance();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[0.25, 2.0, 2.0, 16.0]));
        assert_eq!(onehot.mode(), &[0.5, 4.0]);
        assert_eq!(mean1(&[0.0, 2.0], &[0.25, 0.75]).mean(), vec![1.5]);
    }

    #[test]
    fn mass_examples() {
        let m = mean1(&[-1.0, 1.0], &[0.5, 0.5]);
        assert_eq!(m.mass(|_| true), 1.0);
        assert_eq!(m.mass(|_| false), 0.0);
        assert_eq!(m.mass(|x| x[0] > 0.0), 0.5);
        let neg = mean1(&[-1.0, 1.0], &[-0.5, 1.5]);
        assert_eq!(neg.mass(|x| x[0] > 0.0), 1.5);
    }

    #[test]
    fn density_examples() {
        let m = mean1(&[0.0], &[1.0]);
        assert_relative_eq!(m.density(&[0.0], 1.0).unwrap(), 0.398942280401432, max_relative = 1e-12);
        assert!(m.density(&[100.0], 1.0).unwrap() < 1e-300);
        let dup = mean1(&[0.7, 0.7], &[0.3, 0.3]);
        let single = mean1(&[0.7], &[0.6]);
        assert_relative_eq!(
            dup.density(&[0.1], 0.5).unwrap(),
            single.density(&[0.1], 0.5).unwrap(),
            max_relative = 1e-14
        );
        assert!(m.density(&[0.0], 0.0).is_err());
        assert!(m.density(&[0.0], -1.0).is_err());
    }

    #[test]
    fn mode_examples() {
        assert_eq!(mean1(&[1.0, 2.0, 3.0], &[0.2, 0.5, 0.3]).mode(), &[2.0]);
        assert_eq!(mean1(&[1.0, 2.0], &[0.5, 0.5]).mode(), &[1.0]);
        assert_eq!(mean1(&[1.0, 2.0], &[0.0, 1.0]).mode(), &[2.0]);
    }

    #[test]
    fn fit_single_point_limit() {
        let k = g1();
        let target = move |x: &[f64]| k.eval(x, &[0.4]);
        let fit = fit_weights_to_mean(&target, Points::from_scalars(&[0.4]), 1e-12, g1()).unwrap();
        assert_relative_eq!(fit.mean.weights()[0], 1.0);
        assert_relative_eq!(fit.raw_sum, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn fit_ridge_limit_is_proportional() {
        let orc = GaussianMeanOracle::new(0.5, 1.0).unwrap();
        let xs = [-1.0, 0.0, 0.3, 2.0];
        let fit = fit_weights_to_mean(&orc, Points::from_scalars(&xs), 1e9, g1()).unwrap();
        let g: Vec<f64> = xs.iter().map(|&x| orc.eval(x)).collect();
        let s: f64 = g.iter().sum();
        for (w, gi) in fit.mean.weights().iter().zip(&g) {
            assert_relative_eq!(*w, gi / s, max_relative = 1e-6);
        }
    }

    #[test]
    fn fit_errors() {
        let pts = Points::from_scalars(&[0.0, 0.0]);
        let t = |_: &[f64]| 1.0;
        assert!(fit_weights_to_mean(&t, pts.clone(), -1.0, g1()).is_err());
        // duplicated points make G singular
        assert!(matches!(
            fit_weights_to_mean(&t, pts, 0.0, g1()),
            Err(Error::SolverBreakdown { .. })
        ));
    }

    fn uniform_points(n: usize, a: f64, seed: u64) -> Points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Points::from_scalars(&(0..n).map(|_| rng.random_range(-a..a)).collect::<Vec<_>>())
    }

    #[test]
    fn fitted_mean_is_accurate_with_low_ess() {
        let orc = GaussianMeanOracle::new(0.1, 0.1).unwrap();
        let fit = fit_weights_to_mean(&orc, uniform_points(100, 1.0, 3), 1e-10, orc.kernel()).unwrap();
        let err = orc.distance_sq(&fit.mean).unwrap();
        let sw2: f64 = fit.mean.weights().iter().map(|w| w * w).sum();
        assert!(err < 1e-6, "err {err}");
        assert!(sw2 > 10.0 / 100.0, "sum w² {sw2}");
    }

    #[test]
    fn fit_error_decreases_with_lambda() {
        let orc = GaussianMeanOracle::new(0.1, 0.1).unwrap();
        let pts = uniform_points(100, 1.0, 11);
        let mut last = f64::INFINITY;
        let mut last_sum_gap = f64::INFINITY;
        for e in 0..=8 {
            let lambda = 10f64.powi(-e);
            let fit = fit_weights_to_mean(&orc, pts.clone(), lambda, orc.kernel()).unwrap();
            let err = orc.distance_sq(&fit.mean).unwrap();
            assert!(err <= last * (1.0 + 1e-9), "not monotone at λ = {lambda:e}");
            last = err;
            last_sum_gap = (fit.raw_sum - 1.0).abs();
        }
        assert!(last_sum_gap < 1e-3, "raw weight sum gap {last_sum_gap}");
    }

    proptest! {
        #[test]
        fn evaluation_is_linear(xs in prop::collection::vec((-3.0f64..3.0, -1.0f64..1.0), 1..10),
                                ys in prop::collection::vec((-3.0f64..3.0, -1.0f64..1.0), 1..10),
                                at in -3.0f64..3.0) {
            let a = mean1(&xs.iter().map(|p| p.0).collect::<Vec<_>>(), &xs.iter().map(|p| p.1).collect::<Vec<_>>());
            let b = mean1(&ys.iter().map(|p| p.0).collect::<Vec<_>>(), &ys.iter().map(|p| p.1).collect::<Vec<_>>());
            let s = a.sum(&b).unwrap();
            let lhs = s.evaluate(&[at]).unwrap();
            let rhs = a.evaluate(&[at]).unwrap() + b.evaluate(&[at]).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn ess_bounds_and_permutation(ws in prop::collection::vec(0.01f64..1.0, 1..30), rot in 0usize..30) {
            let e = ess(&ws).unwrap();
            prop_assert!(e >= 1.0 - 1e-12 && e <= ws.len() as f64 + 1e-9);
            let mut p = ws.clone();
            let r = rot % p.len();
            p.rotate_left(r);
            prop_assert!((ess(&p).unwrap() - e).abs() < 1e-9 * e);
        }

        #[test]
        fn distance_nonnegative_and_zero_on_permutation(xs in prop::collection::vec((-3.0f64..3.0, -1.0f64..1.0), 1..12), rot in 0usize..12) {
            let a = mean1(&xs.iter().map(|p| p.0).collect::<Vec<_>>(), &xs.iter().map(|p| p.1).collect::<Vec<_>>());
            let mut ys = xs.clone();
            let r = rot % ys.len();
            ys.rotate_left(r);
            let b = mean1(&ys.iter().map(|p| p.0).collect::<Vec<_>>(), &ys.iter().map(|p| p.1).collect::<Vec<_>>());
            let d = rkhs_distance_sq(&a, &b).unwrap();
            prop_assert!((0.0..1e-10).contains(&d));
        }
    }
}
