//! Positive definite kernels on real vector spaces and Gram matrix construction.
//!
//! Points are dense `f64` vectors of a fixed dimension per space. A list of
//! points is stored row-major in [`Points`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A symmetric positive definite similarity function on a point space.
///
/// Structured inputs (images, graphs) can be supported by encoding them as
/// vectors and implementing this trait.
pub trait Kernel: Send + Sync + std::fmt::Debug {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;

    /// `sup_x k(x, x)`, when known. The filter requires a bounded kernel.
    fn diag_bound(&self) -> Option<f64>;
}

impl<K: Kernel + ?Sized> Kernel for &K {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (**self).eval(x, y)
    }

    fn diag_bound(&self) -> Option<f64> {
        (**self).diag_bound()
    }
}

/// `k(x, x') = exp(-‖x - x'‖² / 2σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    bandwidth: f64,
}

impl GaussianKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(
                "bandwidth",
                format!("must be positive and finite, got {bandwidth}"),
            ));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Kernel value for a precomputed squared distance.
    #[inline]
    pub fn from_sq_dist(&self, d2: f64) -> f64 {
        (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

impl Kernel for GaussianKernel {
    #[inline]
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.from_sq_dist(sq_dist(x, y))
    }

    fn diag_bound(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Product kernel on `X × Y`: `k((x,y),(x',y')) = kx(x,x')·ky(y,y')`.
///
/// As a [`Kernel`] it acts on concatenated vectors `[x, y]`, split after the
/// first `x_dim` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductKernel<KX, KY> {
    pub kx: KX,
    pub ky: KY,
    x_dim: usize,
}

impl<KX: Kernel, KY: Kernel> ProductKernel<KX, KY> {
    pub fn new(kx: KX, ky: KY, x_dim: usize) -> Self {
        Self { kx, ky, x_dim }
    }

    pub fn eval_pair(&self, a: (&[f64], &[f64]), b: (&[f64], &[f64])) -> f64 {
        self.kx.eval(a.0, b.0) * self.ky.eval(a.1, b.1)
    }
}

impl<KX: Kernel, KY: Kernel> Kernel for ProductKernel<KX, KY> {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let (x0, x1) = x.split_at(self.x_dim);
        let (y0, y1) = y.split_at(self.x_dim);
        self.eval_pair((x0, x1), (y0, y1))
    }

    fn diag_bound(&self) -> Option<f64> {
        Some(self.kx.diag_bound()? * self.ky.diag_bound()?)
    }
}

#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// A list of points of equal dimension, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "points need at least one coordinate"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        assert!(dim > 0, "points need at least one coordinate");
        Self {
            dim,
            data: Vec::new(),
        }
    }

    /// One-dimensional points.
    pub fn from_scalars(values: &[f64]) -> Self {
        Self {
            dim: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("point rows"))?;
        let mut out = Points::new(first.as_ref().len(), Vec::new())?;
        for r in rows {
            out.try_push(r.as_ref())?;
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn push(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.dim, "point dimension");
        self.data.extend_from_slice(p);
    }

    pub fn try_push(&mut self, p: &[f64]) -> Result<()> {
        self.check_dim(p)?;
        self.data.extend_from_slice(p);
        Ok(())
    }

    /// Points at the given indices, in order (indices may repeat).
    pub fn select(&self, indices: &[usize]) -> Points {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.get(i));
        }
        Points {
            dim: self.dim,
            data,
        }
    }

    /// Concatenates two point lists of equal dimension.
    pub fn concat(&self, other: &Points) -> Result<Points> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Points {
            dim: self.dim,
            data,
        })
    }

    pub(crate) fn check_dim(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: p.len(),
            });
        }
        Ok(())
    }
}

/// `M[i][j] = k(a_i, b_j)`. When `a` and `b` are the same list the result is
/// averaged with its transpose so it is exactly symmetric.
pub fn gram_matrix<K: Kernel + ?Sized>(k: &K, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if std::ptr::eq(a, b) || a == b {
        return Ok(gram_matrix_sym(k, a));
    }
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
        k.eval(a.get(i), b.get(j))
    }))
}

/// Symmetric Gram matrix of a single point list.
pub fn gram_matrix_sym<K: Kernel + ?Sized>(k: &K, a: &Points) -> DMatrix<f64> {
    let n = a.len();
    let mut m = DMatrix::from_fn(n, n, |i, j| k.eval(a.get(i), a.get(j)));
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Access to a PSD matrix one column at a time.
pub trait GramAccess {
    fn size(&self) -> usize;
    fn diag(&self, i: usize) -> f64;
    fn column(&self, j: usize, out: &mut [f64]);
}

impl GramAccess for DMatrix<f64> {
    fn size(&self) -> usize {
        self.nrows()
    }

    fn diag(&self, i: usize) -> f64 {
        self[(i, i)]
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        out.copy_from_slice(self.column(j).as_slice());
    }
}

/// Gram columns evaluated on demand from a kernel and a point list.
pub struct KernelColumns<'a, K> {
    pub kernel: &'a K,
    pub points: &'a Points,
}

impl<K: Kernel> GramAccess for KernelColumns<'_, K> {
    fn size(&self) -> usize {
        self.points.len()
    }

    fn diag(&self, i: usize) -> f64 {
        let p = self.points.get(i);
        self.kernel.eval(p, p)
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        let pj = self.points.get(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.kernel.eval(self.points.get(i), pj);
        }
    }
}

/// Median of pairwise Euclidean distances, used to center bandwidth grids.
pub fn median_heuristic_bandwidth(points: &Points) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Empty("median heuristic needs at least two points"));
    }
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(sq_dist(points.get(i), points.get(j)).sqrt());
        }
    }
    if d.iter().all(|&v| v == 0.0) {
        return Err(Error::DegeneratePoints);
    }
    let m = d.len();
    let (_, upper, _) = d.select_nth_unstable_by(m / 2, f64::total_cmp);
    let upper = *upper;
    if m % 2 == 1 {
        Ok(upper)
    } else {
        let lower = d[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (lower + upper))
    }
}
