//! Kernel Bayes' Rule: posterior kernel-mean weights from a prior embedding
//! and a joint state-observation sample.
//!
//! Dense form:
//!
//! ```text
//! Λ = diag((G_X + nεI)⁻¹ m_π)
//! w = ΛG_Y ((ΛG_Y)² + δI)⁻¹ Λ k_Y
//! ```
//!
//! The low-rank form replaces `G_X ≈ UUᵀ` and `G_Y ≈ VVᵀ` and applies the
//! Woodbury identity to both inverses, for `O(nr²)` work per call.
//!
//! Outputs are raw weights. They can be negative and are not normalized.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram_matrix_sym, GramAccess, Kernel, Points};

/// Regularization constants `ε` (prior inversion) and `δ` (posterior inversion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KbrConfig {
    pub eps: f64,
    pub delta: f64,
}

impl KbrConfig {
    pub fn new(eps: f64, delta: f64) -> Result<Self> {
        let cfg = Self { eps, delta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid("eps", format!("must be positive, got {}", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(
                "delta",
                format!("must be positive, got {}", self.delta),
            ));
        }
        Ok(())
    }
}

/// The two training Gram matrices, with a cached factorization of
/// `G_X + nεI` (it does not depend on test data).
#[derive(Debug)]
pub struct GramPair {
    gx: DMatrix<f64>,
    gy: DMatrix<f64>,
    gx_chol: OnceLock<(f64, Cholesky<f64, Dyn>)>,
}

impl Clone for GramPair {
    fn clone(&self) -> Self {
        Self {
            gx: self.gx.clone(),
            gy: self.gy.clone(),
            gx_chol: self.gx_chol.clone(),
        }
    }
}

impl GramPair {
    pub fn new(gx: DMatrix<f64>, gy: DMatrix<f64>) -> Result<Self> {
        let n = gx.nrows();
        if n == 0 {
            return Err(Error::Empty("Gram matrix"));
        }
        for m in [&gx, &gy] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: if m.nrows() != n { m.nrows() } else { m.ncols() },
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("Gram matrix"));
            }
        }
        Ok(Self {
            gx: symmetrize(gx),
            gy: symmetrize(gy),
            gx_chol: OnceLock::new(),
        })
    }

    pub fn from_samples<KX: Kernel, KY: Kernel>(
        kx: &KX,
        xs: &Points,
        ky: &KY,
        ys: &Points,
    ) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch {
                expected: xs.len(),
                found: ys.len(),
            });
        }
        Self::new(gram_matrix_sym(kx, xs), gram_matrix_sym(ky, ys))
    }

    pub fn n(&self) -> usize {
        self.gx.nrows()
    }

    pub fn gx(&self) -> &DMatrix<f64> {
        &self.gx
    }

    pub fn gy(&self) -> &DMatrix<f64> {
        &self.gy
    }

    fn factor_gx(&self, eps: f64) -> Result<Cholesky<f64, Dyn>> {
        let n = self.n();
        let mut a = self.gx.clone();
        for i in 0..n {
            a[(i, i)] += n as f64 * eps;
        }
        a.cholesky().ok_or_else(|| Error::SolverBreakdown {
            stage: "Cholesky of G_X + nεI",
            condition: diag_ratio(&self.gx),
        })
    }

    /// `(G_X + nεI)⁻¹ v`, reusing the cached factorization when `eps` matches.
    pub fn solve_gx(&self, eps: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        if let Some((e, chol)) = self.gx_chol.get() {
            if *e == eps {
                return Ok(chol.solve(v));
            }
        }
        let chol = self.factor_gx(eps)?;
        let out = chol.solve(v);
        // first factorization wins the cache slot
        let _ = self.gx_chol.set((eps, chol));
        Ok(out)
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn diag_ratio(m: &DMatrix<f64>) -> f64 {
    let d = m.diagonal();
    let max = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = d.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn check_vectors(n: usize, k_y: &DVector<f64>, m_pi: &DVector<f64>) -> Result<()> {
    for v in [k_y, m_pi] {
        if v.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: v.len(),
            });
        }
    }
    if k_y.iter().chain(m_pi.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("KBR input vector"));
    }
    Ok(())
}

/// Dense Kernel Bayes' Rule. Both inverses are applied as linear solves:
/// Cholesky for `G_X + nεI`, LU with partial pivoting for `(ΛG_Y)² + δI`.
pub fn kbr_dense(
    k_y: &DVector<f64>,
    m_pi: &DVector<f64>,
    gram: &GramPair,
    cfg: &KbrConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    let n = gram.n();
    check_vectors(n, k_y, m_pi)?;

    let lambda = gram.solve_gx(cfg.eps, m_pi)?;
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverBreakdown {
            stage: "(G_X + nεI)⁻¹ m_π",
            condition: f64::INFINITY,
        });
    }

    // M = ΛG_Y scales row i of G_Y by λ_i
    let mut m = gram.gy.clone();
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row *= lambda[i];
    }
    let mut a = &m * &m;
    for i in 0..n {
        a[(i, i)] += cfg.delta;
    }
    let rhs = lambda.component_mul(k_y);
    let lu = a.lu();
    let z = lu.solve(&rhs).ok_or_else(|| Error::SolverBreakdown {
        stage: "LU of (ΛG_Y)² + δI",
        condition: lu_condition(lu.u().diagonal().as_slice()),
    })?;
    let w = &m * z;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverBreakdown {
            stage: "LU of (ΛG_Y)² + δI",
            condition: lu_condition(lu.u().diagonal().as_slice()),
        });
    }
    Ok(w)
}

fn lu_condition(diag: &[f64]) -> f64 {
    let max = diag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Low-rank Kernel Bayes' Rule with precomputed `(nεI_r + UᵀU)` factorization.
#[derive(Debug, Clone)]
pub struct LowRankKbr {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    eps: f64,
    inner: Cholesky<f64, Dyn>,
}

impl LowRankKbr {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>, eps: f64) -> Result<Self> {
        let n = u.nrows();
        if v.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.nrows(),
            });
        }
        if n == 0 {
            return Err(Error::Empty("low-rank factors"));
        }
        if u.ncols() == 0 || v.ncols() == 0 {
            return Err(Error::invalid("rank", "low-rank factors need at least one column"));
        }
        if u.ncols() > n || v.ncols() > n {
            return Err(Error::invalid("rank", "rank exceeds the sample size"));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
        }
        let n_eps = n as f64 * eps;
        let mut inner = u.transpose() * &u;
        for i in 0..inner.nrows() {
            inner[(i, i)] += n_eps;
        }
        let inner = inner.cholesky().ok_or(Error::SolverBreakdown {
            stage: "Cholesky of nεI + UᵀU",
            condition: f64::INFINITY,
        })?;
        Ok(Self { u, v, eps, inner })
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn weights(
        &self,
        k_y: &DVector<f64>,
        m_pi: &DVector<f64>,
        delta: f64,
    ) -> Result<DVector<f64>> {
        if !(delta > 0.0) {
            return Err(Error::invalid("delta", format!("must be positive, got {delta}")));
        }
        let n = self.n();
        check_vectors(n, k_y, m_pi)?;
        let n_eps = n as f64 * self.eps;

        // Λ = (1/nε)(I − U(nεI + UᵀU)⁻¹Uᵀ) m_π
        let utm = self.u.tr_mul(m_pi);
        let lambda = (m_pi - &self.u * self.inner.solve(&utm)) / n_eps;

        // B = ΛV, C = VᵀΛV. The Woodbury middle factor (δC⁻¹ + C)⁻¹ equals
        // (δI + C²)⁻¹C, which stays defined when C is singular.
        let t = lambda.component_mul(k_y);
        let mut b = self.v.clone();
        for (i, mut row) in b.row_iter_mut().enumerate() {
            row *= lambda[i];
        }
        let c = symmetrize(self.v.tr_mul(&b));
        let s = self.v.tr_mul(&t);
        let r = c.nrows();
        let mut inner = &c * &c;
        for i in 0..r {
            inner[(i, i)] += delta;
        }
        let cs = &c * s;
        let q = match inner.clone().cholesky() {
            Some(ch) => ch.solve(&cs),
            None => {
                let lu = inner.lu();
                lu.solve(&cs).ok_or_else(|| Error::SolverBreakdown {
                    stage: "δI + C² in low-rank KBR",
                    condition: lu_condition(lu.u().diagonal().as_slice()),
                })?
            }
        };
        let resid = t - &b * q;
        let w = lambda.component_mul(&(&self.v * self.v.tr_mul(&resid))) / delta;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("low-rank KBR weights"));
        }
        Ok(w)
    }
}

/// One-shot low-rank Kernel Bayes' Rule with `G_X ≈ UUᵀ`, `G_Y ≈ VVᵀ`.
pub fn kbr_low_rank(
    k_y: &DVector<f64>,
    m_pi: &DVector<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    cfg: &KbrConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    LowRankKbr::new(u.clone(), v.clone(), cfg.eps)?.weights(k_y, m_pi, cfg.delta)
}

/// Stopping rule for [`incomplete_cholesky`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CholeskyStop {
    /// Stop after this many columns.
    Rank(usize),
    /// Stop once `trace(G − UUᵀ) ≤ τ`.
    Tolerance(f64),
}

/// Result of a pivoted partial Cholesky factorization `G ≈ UUᵀ`.
#[derive(Debug, Clone)]
pub struct IncompleteCholesky {
    /// `n × r` factor.
    pub factor: DMatrix<f64>,
    /// Pivot row chosen at each step.
    pub pivots: Vec<usize>,
    /// `trace(G − UUᵀ)` at termination.
    pub residual_trace: f64,
}

impl IncompleteCholesky {
    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }
}

/// Greedy pivoted incomplete Cholesky in `O(nr²)`: at each step the row with
/// the largest residual diagonal is pivoted in (lowest index on ties).
///
/// Terminates early when the residual is numerically exhausted.
pub fn incomplete_cholesky<G: GramAccess + ?Sized>(
    gram: &G,
    stop: CholeskyStop,
) -> Result<IncompleteCholesky> {
    let n = gram.size();
    if n == 0 {
        return Err(Error::Empty("incomplete Cholesky input"));
    }
    let max_rank = match stop {
        CholeskyStop::Rank(0) => {
            return Err(Error::invalid("rank", "must be at least 1"))
        }
        CholeskyStop::Rank(r) => r.min(n),
        CholeskyStop::Tolerance(t) if !(t >= 0.0) => {
            return Err(Error::invalid("tolerance", format!("must be non-negative, got {t}")))
        }
        CholeskyStop::Tolerance(_) => n,
    };

    let mut d: Vec<f64> = (0..n).map(|i| gram.diag(i)).collect();
    let scale = d.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some((i, &v)) = d.iter().enumerate().find(|(_, v)| **v < -1e-10 * scale) {
        return Err(Error::NotPositiveDefinite { pivot: v, index: i });
    }
    let exhausted = 1e-14 * scale;

    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut pivots = Vec::new();
    let mut buf = vec![0.0; n];
    while cols.len() < max_rank {
        let trace: f64 = d.iter().map(|v| v.max(0.0)).sum();
        if let CholeskyStop::Tolerance(t) = stop {
            if trace <= t {
                break;
            }
        }
        let j = crate::embedding::argmax_first(&d);
        let pivot = d[j];
        if pivot <= exhausted {
            break;
        }
        gram.column(j, &mut buf);
        for l in &cols {
            let ljk = l[j];
            for (b, li) in buf.iter_mut().zip(l) {
                *b -= li * ljk;
            }
        }
        let root = pivot.sqrt();
        for b in buf.iter_mut() {
            *b /= root;
        }
        buf[j] = root;
        for &p in &pivots {
            buf[p] = 0.0;
        }
        for (di, b) in d.iter_mut().zip(&buf) {
            *di -= b * b;
        }
        d[j] = 0.0;
        if let Some((i, &v)) = d.iter().enumerate().find(|(_, v)| **v < -1e-10 * scale) {
            return Err(Error::NotPositiveDefinite { pivot: v, index: i });
        }
        pivots.push(j);
        cols.push(buf.clone());
    }

    let r = cols.len();
    let mut factor = DMatrix::zeros(n, r);
    for (k, c) in cols.iter().enumerate() {
        factor.column_mut(k).copy_from_slice(c);
    }
    Ok(IncompleteCholesky {
        factor,
        pivots,
        residual_trace: d.iter().map(|v| v.max(0.0)).sum(),
    })
}
