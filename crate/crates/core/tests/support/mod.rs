//! Test-only oracles. Nothing here calls into the library's solvers.
#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

use kmcf::kernels::{GaussianKernel, Kernel, Points};
use kmcf::ssm::SsmSpec;
use nalgebra::DMatrix;
use rand::Rng;

/// Double-double number `hi + lo` with about 106 bits of mantissa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn from(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        // two Newton-style correction rounds
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

pub type DdMat = Vec<Vec<Dd>>;

pub fn to_dd(m: &DMatrix<f64>) -> DdMat {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| Dd::from(m[(i, j)])).collect())
        .collect()
}

pub fn dd_matmul(a: &DdMat, b: &DdMat) -> DdMat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![Dd::ZERO; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = Dd::ZERO;
            for l in 0..k {
                s = s + a[i][l] * b[l][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn dd_matvec(a: &DdMat, v: &[Dd]) -> Vec<Dd> {
    a.iter()
        .map(|row| row.iter().zip(v).fold(Dd::ZERO, |s, (x, y)| s + *x * *y))
        .collect()
}

/// Gauss–Jordan inverse with partial pivoting, all in double-double.
pub fn dd_inverse(a: &DdMat) -> DdMat {
    let n = a.len();
    let mut m: DdMat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { Dd::ONE } else { Dd::ZERO }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| m[x][c].abs().to_f64().total_cmp(&m[y][c].abs().to_f64()))
            .unwrap();
        m.swap(c, p);
        let piv = m[c][c];
        assert!(piv.hi != 0.0, "singular matrix in oracle");
        for v in m[c].iter_mut() {
            *v = *v / piv;
        }
        let pivot_row = m[c].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r == c {
                continue;
            }
            let f = row[c];
            if f.hi == 0.0 {
                continue;
            }
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v = *v - f * *p;
            }
        }
    }
    m.into_iter().map(|row| row[n..].to_vec()).collect()
}

/// KBR weights by literally forming both inverses in double-double:
/// `Λ = diag((G_X + nεI)⁻¹ m_π)`, `w = ΛG_Y((ΛG_Y)² + δI)⁻¹ Λ k_Y`.
pub fn kbr_oracle(
    gx: &DMatrix<f64>,
    gy: &DMatrix<f64>,
    k_y: &[f64],
    m_pi: &[f64],
    eps: f64,
    delta: f64,
) -> Vec<f64> {
    let n = gx.nrows();
    let mut a = to_dd(gx);
    let reg = Dd::from(n as f64) * Dd::from(eps);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = row[i] + reg;
    }
    let mu: Vec<Dd> = m_pi.iter().map(|v| Dd::from(*v)).collect();
    let lam = dd_matvec(&dd_inverse(&a), &mu);
    let gyd = to_dd(gy);
    let lg: DdMat = (0..n)
        .map(|i| (0..n).map(|j| lam[i] * gyd[i][j]).collect())
        .collect();
    let mut sq = dd_matmul(&lg, &lg);
    for (i, row) in sq.iter_mut().enumerate() {
        row[i] = row[i] + Dd::from(delta);
    }
    let lk: Vec<Dd> = (0..n).map(|i| lam[i] * Dd::from(k_y[i])).collect();
    let inner = dd_matvec(&dd_inverse(&sq), &lk);
    dd_matvec(&lg, &inner).into_iter().map(Dd::to_f64).collect()
}

pub fn max_rel_error(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let err = got
        .iter()
        .zip(want)
        .fold(0.0f64, |a, (g, w)| a.max((g - w).abs()));
    err / scale
}

/// A random KBR instance: Gaussian Grams on random points plus a random
/// SPD perturbation `s·BBᵀ/n`, a prior vector from the `G_X` row space and
/// an observation column.
pub struct KbrInstance {
    pub gx: DMatrix<f64>,
    pub gy: DMatrix<f64>,
    pub k_y: Vec<f64>,
    pub m_pi: Vec<f64>,
    pub eps: f64,
    pub delta: f64,
}

pub fn random_kbr_instance<R: Rng>(n: usize, rng: &mut R) -> KbrInstance {
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x + rng.random_range(-0.5..0.5)).collect();
    let kx = GaussianKernel::new(rng.random_range(0.5..2.0)).unwrap();
    let ky = GaussianKernel::new(rng.random_range(0.5..2.0)).unwrap();
    let gram = |k: &GaussianKernel, v: &[f64], rng: &mut R| {
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let s = rng.random_range(0.0..0.1);
        let mut g = DMatrix::from_fn(n, n, |i, j| k.eval(&[v[i]], &[v[j]]));
        g += (&b * b.transpose()) * (s / n as f64);
        (&g + g.transpose()) * 0.5
    };
    let gx = gram(&kx, &xs, rng);
    let gy = gram(&ky, &ys, rng);
    let particles: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let m_pi = xs
        .iter()
        .map(|x| particles.iter().map(|p| kx.eval(&[*x], &[*p])).sum::<f64>() / n as f64)
        .collect();
    let y = rng.random_range(-3.0..3.0);
    let k_y = ys.iter().map(|v| ky.eval(&[*v], &[y])).collect();
    KbrInstance {
        gx,
        gy,
        k_y,
        m_pi,
        eps: 10f64.powf(rng.random_range(-3.0..-1.0)),
        delta: 10f64.powf(rng.random_range(-3.0..-1.0)),
    }
}

/// Prediction-only estimates: the particle mean after each transition,
/// with no use of the observations.
pub fn prior_only_means<R: Rng>(spec: &SsmSpec, steps: usize, particles: usize, rng: &mut R) -> Points {
    let d = spec.prior.state_dim();
    let mut cur = vec![vec![0.0; d]; particles];
    let mut next = cur.clone();
    let mut out = Points::empty(d);
    for t in 0..steps {
        for (c, nx) in cur.iter().zip(next.iter_mut()) {
            if t == 0 {
                spec.prior.sample_into(rng, nx);
            } else {
                let u = spec.controls.as_ref().map(|u| u.get(t));
                spec.transition.step_into(c, u, rng, nx);
            }
        }
        std::mem::swap(&mut cur, &mut next);
        let mut mean = vec![0.0; d];
        for p in &cur {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / particles as f64;
            }
        }
        out.push(&mean);
    }
    out
}

/// `‖(1/N)Σ k(·,Z_i) − (1/ℓ)Σ_{j≤ℓ} k(·,X̄_j)‖` for every prefix `ℓ` of
/// `picks`, by direct Gram sums.
pub fn herding_prefix_errors<K: Kernel>(candidates: &Points, picks: &[usize], k: &K) -> Vec<f64> {
    let n = candidates.len();
    let g = |i: usize, j: usize| k.eval(candidates.get(i), candidates.get(j));
    let mut mm = 0.0;
    for i in 0..n {
        for j in 0..n {
            mm += g(i, j);
        }
    }
    mm /= (n * n) as f64;
    let mean_at = |z: usize| (0..n).map(|i| g(z, i)).sum::<f64>() / n as f64;
    let mut out = Vec::with_capacity(picks.len());
    for l in 1..=picks.len() {
        let p = &picks[..l];
        let cross: f64 = p.iter().map(|&z| mean_at(z)).sum::<f64>() / l as f64;
        let mut pp = 0.0;
        for &a in p {
            for &b in p {
                pp += g(a, b);
            }
        }
        pp /= (l * l) as f64;
        out.push((mm - 2.0 * cross + pp).max(0.0).sqrt());
    }
    out
}

/// Least-squares slope of `log e` against `log ℓ` (ℓ = 1, 2, …).
pub fn log_log_slope(errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, e)| **e > 0.0)
        .map(|(i, e)| (((i + 1) as f64).ln(), e.ln()))
        .collect();
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    num / den
}
