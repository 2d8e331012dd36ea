//! Riemann theta functions with characteristics.
//!
//! `Theta(z | B) = sum_n exp(pi i n.B.n + 2 pi i n.z)` is summed over the
//! ellipsoid `|T (n + c)| <= R` where `T^T T = pi Im B` and `c = (Im B)^{-1} Im z`.
//! The radius comes from the tail bound
//! `(g/2) (2/rho)^g Gamma(g/2, (R - rho/2)^2)`, `rho` being the shortest vector of
//! the lattice `T Z^g`. Errors are relative to `exp(pi c.Y.c)`, the size of the
//! dominant term.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{gamma, gamma_ur};

use crate::error::{Error, Result};
use crate::{CMatrix, CVector, C64};

/// Default cap on the truncation radius, in units of the shortest lattice vector.
pub const RADIUS_CAP: f64 = 40.0;
/// Default threshold below which `|Theta[p;q](0)|` counts as vanishing.
pub const DIVISOR_TOL: f64 = 1e-10;

/// Characteristic `[p; q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaCharacteristic {
    pub p: CVector,
    pub q: CVector,
}

impl ThetaCharacteristic {
    pub fn new(p: CVector, q: CVector) -> Self {
        ThetaCharacteristic { p, q }
    }

    pub fn zero(g: usize) -> Self {
        ThetaCharacteristic {
            p: CVector::zeros(g),
            q: CVector::zeros(g),
        }
    }

    pub fn real(p: &[f64], q: &[f64]) -> Self {
        ThetaCharacteristic {
            p: CVector::from_iterator(p.len(), p.iter().map(|x| C64::new(*x, 0.0))),
            q: CVector::from_iterator(q.len(), q.iter().map(|x| C64::new(*x, 0.0))),
        }
    }

    /// Half-integer characteristic from bits: `p_k = a_k/2`, `q_k = b_k/2`.
    pub fn from_bits(a: &[u8], b: &[u8]) -> Self {
        let p: Vec<f64> = a.iter().map(|x| 0.5 * *x as f64).collect();
        let q: Vec<f64> = b.iter().map(|x| 0.5 * *x as f64).collect();
        Self::real(&p, &q)
    }

    pub fn genus(&self) -> usize {
        self.p.len()
    }

    pub fn is_half_integer(&self) -> bool {
        self.p
            .iter()
            .chain(self.q.iter())
            .all(|z| z.im.abs() <= 1e-12 && (2.0 * z.re - (2.0 * z.re).round()).abs() <= 1e-12)
    }

    /// `4 p.q mod 2` for half-integer characteristics: 0 even, 1 odd.
    pub fn parity(&self) -> Option<u8> {
        if !self.is_half_integer() {
            return None;
        }
        let s: i64 = self
            .p
            .iter()
            .zip(self.q.iter())
            .map(|(a, b)| ((2.0 * a.re).round() as i64) * ((2.0 * b.re).round() as i64))
            .sum();
        Some(s.rem_euclid(2) as u8)
    }

    /// All `4^g` half-integer characteristics with entries in `{0, 1/2}`.
    pub fn all_half_integer(g: usize) -> Vec<Self> {
        (0..1usize << (2 * g))
            .map(|mask| {
                let a: Vec<u8> = (0..g).map(|k| ((mask >> k) & 1) as u8).collect();
                let b: Vec<u8> = (0..g).map(|k| ((mask >> (g + k)) & 1) as u8).collect();
                Self::from_bits(&a, &b)
            })
            .collect()
    }
}

/// Result of a theta evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEvaluation {
    pub value: C64,
    pub gradient: CVector,
    pub truncation_radius: f64,
    /// Bound on the truncation error relative to the dominant term.
    pub error_bound: f64,
}

/// Value, gradient and Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaJet {
    pub value: C64,
    pub gradient: CVector,
    pub hessian: CMatrix,
}

/// Precomputed lattice data for a fixed Riemann matrix.
#[derive(Debug, Clone)]
pub struct ThetaEngine {
    b: CMatrix,
    y_inv: DMatrix<f64>,
    y: DMatrix<f64>,
    t: DMatrix<f64>,
    rho: f64,
    radius: f64,
    tol: f64,
}

impl ThetaEngine {
    /// Engine for `B` with relative tolerance `tol` and the default radius cap.
    pub fn new(b: &CMatrix, tol: f64) -> Result<Self> {
        Self::with_cap(b, tol, RADIUS_CAP)
    }

    pub fn with_cap(b: &CMatrix, tol: f64, cap: f64) -> Result<Self> {
        let g = b.nrows();
        if b.ncols() != g || g == 0 {
            return Err(Error::DimensionMismatch(format!("B is {}x{}", b.nrows(), b.ncols())));
        }
        let b = (b + b.transpose()) * C64::new(0.5, 0.0);
        let y = DMatrix::<f64>::from_fn(g, g, |i, j| b[(i, j)].im);
        let chol = (y.clone() * PI).cholesky().ok_or(Error::NotRiemannMatrix)?;
        let t = chol.l().transpose();
        let y_inv = y.clone().try_inverse().ok_or(Error::NotRiemannMatrix)?;
        let rho = shortest_vector(&t);
        let radius = choose_radius(g, rho, tol, cap)?;
        Ok(ThetaEngine {
            b,
            y_inv,
            y,
            t,
            rho,
            radius,
            tol,
        })
    }

    pub fn genus(&self) -> usize {
        self.b.nrows()
    }

    pub fn b(&self) -> &CMatrix {
        &self.b
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    /// Radius used for sums (one more than needed for the value, to cover derivatives).
    pub fn radius(&self) -> f64 {
        self.radius + 1.0
    }

    /// Tail bound at radius `r`, relative to the dominant term.
    pub fn tail_bound(&self, r: f64) -> f64 {
        tail_bound(self.genus(), self.rho, r)
    }

    /// Riemann theta (zero characteristic) with derivatives up to `order` (0, 1 or 2).
    fn raw(&self, z: &CVector, order: usize, radius: f64) -> ThetaJet {
        let g = self.genus();
        let zi = DVector::<f64>::from_fn(g, |i, _| z[i].im);
        let c = &self.y_inv * &zi;
        let scale_exp = PI * c.dot(&(&self.y * &c));
        let mut value = C64::new(0.0, 0.0);
        let mut grad = CVector::zeros(g);
        let mut hess = CMatrix::zeros(g, g);
        let two_pi_i = C64::new(0.0, 2.0 * PI);
        let mut visit = |n: &[i64]| {
            // exponent pi i n.B.n + 2 pi i n.z, shifted by the dominant term
            let mut e = C64::new(0.0, 0.0);
            for i in 0..g {
                let ni = n[i] as f64;
                if ni == 0.0 {
                    continue;
                }
                let mut row = C64::new(0.0, 0.0);
                for j in 0..g {
                    row += self.b[(i, j)] * n[j] as f64;
                }
                e += ni * (C64::new(0.0, PI) * row + two_pi_i * z[i]);
            }
            let term = (e - scale_exp).exp();
            value += term;
            if order >= 1 {
                for i in 0..g {
                    let f = two_pi_i * n[i] as f64;
                    grad[i] += term * f;
                    if order >= 2 {
                        for j in 0..=i {
                            hess[(i, j)] += term * f * (two_pi_i * n[j] as f64);
                        }
                    }
                }
            }
        };
        enumerate(&self.t, &c, radius, &mut visit);
        for i in 0..g {
            for j in 0..i {
                hess[(j, i)] = hess[(i, j)];
            }
        }
        let s = C64::new(scale_exp, 0.0).exp();
        ThetaJet {
            value: value * s,
            gradient: grad * s,
            hessian: hess * s,
        }
    }

    fn shifted(&self, z: &CVector, ch: &ThetaCharacteristic) -> (CVector, C64) {
        let bp = &self.b * &ch.p;
        let w = z + &bp + &ch.q;
        let pref = C64::new(0.0, PI) * ch.p.dot(&bp) + C64::new(0.0, 2.0 * PI) * ch.p.dot(&(z + &ch.q));
        (w, pref.exp())
    }

    /// `Theta[p;q](z)` with gradient.
    pub fn eval(&self, z: &CVector, ch: &ThetaCharacteristic) -> ThetaEvaluation {
        let jet = self.jet_order(z, ch, 1, self.radius());
        ThetaEvaluation {
            value: jet.value,
            gradient: jet.gradient,
            truncation_radius: self.radius(),
            error_bound: self.tail_bound(self.radius()),
        }
    }

    /// `Theta[p;q](z)` only.
    pub fn value(&self, z: &CVector, ch: &ThetaCharacteristic) -> C64 {
        self.jet_order(z, ch, 0, self.radius()).value
    }

    /// Value, gradient and Hessian of `Theta[p;q]` at `z`.
    pub fn jet(&self, z: &CVector, ch: &ThetaCharacteristic) -> ThetaJet {
        self.jet_order(z, ch, 2, self.radius())
    }

    /// Value at an explicit truncation radius (for certificates).
    pub fn value_at_radius(&self, z: &CVector, ch: &ThetaCharacteristic, radius: f64) -> C64 {
        self.jet_order(z, ch, 0, radius).value
    }

    fn jet_order(&self, z: &CVector, ch: &ThetaCharacteristic, order: usize, radius: f64) -> ThetaJet {
        let (w, e) = self.shifted(z, ch);
        let r = self.raw(&w, order, radius);
        let tpi = C64::new(0.0, 2.0 * PI);
        let p = &ch.p;
        let value = r.value * e;
        let gradient = (p * (tpi * r.value) + &r.gradient) * e;
        let hessian = if order >= 2 {
            let pp = p * p.transpose() * (tpi * tpi * r.value);
            let pg = p * r.gradient.transpose() * tpi;
            (pp + &pg + pg.transpose() + &r.hessian) * e
        } else {
            CMatrix::zeros(self.genus(), self.genus())
        };
        ThetaJet {
            value,
            gradient,
            hessian,
        }
    }

    /// Factor `f` with `Theta[p;q](z + m + B n) = f Theta[p;q](z)`.
    pub fn quasi_periodicity_factor(&self, z: &CVector, ch: &ThetaCharacteristic, m: &[i64], n: &[i64]) -> C64 {
        let g = self.genus();
        let nv = CVector::from_iterator(g, n.iter().map(|x| C64::new(*x as f64, 0.0)));
        let mv = CVector::from_iterator(g, m.iter().map(|x| C64::new(*x as f64, 0.0)));
        let e = C64::new(0.0, -PI) * nv.dot(&(&self.b * &nv)) - C64::new(0.0, 2.0 * PI) * nv.dot(&(z + &ch.q))
            + C64::new(0.0, 2.0 * PI) * ch.p.dot(&mv);
        e.exp()
    }
}

/// One-shot evaluation of `Theta[p;q](z | B)` with gradient.
pub fn theta_char(z: &CVector, b: &CMatrix, ch: &ThetaCharacteristic, tol: f64) -> Result<ThetaEvaluation> {
    check_dims(b, ch, Some(z))?;
    Ok(ThetaEngine::new(b, tol)?.eval(z, ch))
}

fn check_dims(b: &CMatrix, ch: &ThetaCharacteristic, z: Option<&CVector>) -> Result<()> {
    let g = b.nrows();
    if ch.p.len() != g || ch.q.len() != g || z.is_some_and(|z| z.len() != g) {
        return Err(Error::DimensionMismatch(format!(
            "characteristic of length {} for genus {g}",
            ch.p.len()
        )));
    }
    Ok(())
}

/// Relative residual of the quasi-periodicity law at lattice vector `m + B n`.
pub fn quasi_periodicity_check(
    z: &CVector,
    b: &CMatrix,
    ch: &ThetaCharacteristic,
    m: &[i64],
    n: &[i64],
    tol: f64,
) -> Result<f64> {
    check_dims(b, ch, Some(z))?;
    let engine = ThetaEngine::new(b, tol)?;
    let g = engine.genus();
    let shift = CVector::from_fn(g, |i, _| {
        let mut s = C64::new(m[i] as f64, 0.0);
        for j in 0..g {
            s += engine.b()[(i, j)] * n[j] as f64;
        }
        s
    });
    let lhs = engine.value(&(z + shift), ch);
    let base = engine.value(z, ch);
    let rhs = engine.quasi_periodicity_factor(z, ch, m, n) * base;
    Ok((lhs - rhs).norm() / base.norm().max(1e-300))
}

/// `|Theta[p;q](0 | B)|`.
pub fn theta_divisor_distance(b: &CMatrix, ch: &ThetaCharacteristic, tol: f64) -> Result<f64> {
    check_dims(b, ch, None)?;
    let engine = ThetaEngine::new(b, tol)?;
    Ok(engine.value(&CVector::zeros(engine.genus()), ch).norm())
}

fn tail_bound(g: usize, rho: f64, r: f64) -> f64 {
    let a = g as f64 / 2.0;
    let x = (r - rho / 2.0).max(0.0).powi(2);
    a * (2.0 / rho).powi(g as i32) * gamma_ur(a, x) * gamma(a)
}

fn choose_radius(g: usize, rho: f64, tol: f64, cap: f64) -> Result<f64> {
    let min_r = 0.5 * rho * ((g as f64).sqrt() + 1.0);
    let mut r = min_r.max(1.0);
    while tail_bound(g, rho, r) > tol {
        r += 0.05;
        if r > cap * rho {
            return Err(Error::ToleranceUnachievable(r / rho));
        }
    }
    Ok(r)
}

/// Length of the shortest nonzero vector of `T Z^g`.
fn shortest_vector(t: &DMatrix<f64>) -> f64 {
    let g = t.nrows();
    let bound = (0..g).map(|j| t.column(j).norm()).fold(f64::INFINITY, f64::min);
    let mut best = bound;
    let zero = DVector::<f64>::zeros(g);
    let mut visit = |n: &[i64]| {
        if n.iter().any(|x| *x != 0) {
            let v = DVector::<f64>::from_fn(g, |i, _| n[i] as f64);
            best = best.min((t * v).norm());
        }
    };
    enumerate(t, &zero, bound * (1.0 + 1e-12), &mut visit);
    best
}

/// Calls `visit(n)` for every integer `n` with `|T (n + c)| <= r`, `T` upper
/// triangular, in a fixed lexicographic order.
fn enumerate<F: FnMut(&[i64])>(t: &DMatrix<f64>, c: &DVector<f64>, r: f64, visit: &mut F) {
    let g = t.nrows();
    let mut n = vec![0i64; g];
    fn rec<F: FnMut(&[i64])>(
        level: usize,
        t: &DMatrix<f64>,
        c: &DVector<f64>,
        budget: f64,
        n: &mut Vec<i64>,
        visit: &mut F,
    ) {
        let g = t.nrows();
        let mut s = 0.0;
        for j in level + 1..g {
            s += t[(level, j)] * (n[j] as f64 + c[j]);
        }
        let tii = t[(level, level)];
        let half = budget.max(0.0).sqrt() / tii;
        let center = -s / tii - c[level];
        let lo = (center - half).ceil() as i64;
        let hi = (center + half).floor() as i64;
        for k in lo..=hi {
            n[level] = k;
            let v = tii * (k as f64 + c[level]) + s;
            let rest = budget - v * v;
            if rest < 0.0 {
                continue;
            }
            if level == 0 {
                visit(n);
            } else {
                rec(level - 1, t, c, rest, n, visit);
            }
        }
    }
    rec(g - 1, t, c, r * r, &mut n, visit);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn bmat(rows: &[&[C64]]) -> CMatrix {
        CMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
    }

    fn direct(b: &CMatrix, z: &CVector, ch: &ThetaCharacteristic, range: i64) -> C64 {
        let g = b.nrows();
        let mut total = C64::new(0.0, 0.0);
        let count = (2 * range + 1).pow(g as u32);
        for idx in 0..count {
            let mut rem = idx;
            let mut n = CVector::zeros(g);
            for k in 0..g {
                n[k] = C64::new((rem % (2 * range + 1)) as f64 - range as f64, 0.0) + ch.p[k];
                rem /= 2 * range + 1;
            }
            let e = C64::new(0.0, PI) * n.dot(&(b * &n)) + C64::new(0.0, 2.0 * PI) * n.dot(&(z + &ch.q));
            total += e.exp();
        }
        total
    }

    #[test]
    fn genus_one_at_i() {
        let b = bmat(&[&[c(0., 1.)]]);
        let z = CVector::zeros(1);
        let v = theta_char(&z, &b, &ThetaCharacteristic::zero(1), 1e-14).unwrap();
        let oracle: f64 = (-10..=10).map(|n: i32| (-PI * (n * n) as f64).exp()).sum();
        assert!((v.value - oracle).norm() < 1e-14);
        assert!((v.value.re - 1.086434811213308).abs() < 1e-12);
    }

    #[test]
    fn odd_characteristic_vanishes_at_zero() {
        let b = bmat(&[&[c(0.3, 1.2)]]);
        let ch = ThetaCharacteristic::from_bits(&[1], &[1]);
        assert_eq!(ch.parity(), Some(1));
        assert!(theta_divisor_distance(&b, &ch, 1e-14).unwrap() < 1e-14);
    }

    #[test]
    fn diagonal_genus_two_factorizes() {
        let b = bmat(&[&[c(0., 1.), c(0., 0.)], &[c(0., 0.), c(0., 1.)]]);
        let v = theta_char(&CVector::zeros(2), &b, &ThetaCharacteristic::zero(2), 1e-14).unwrap();
        let one: f64 = (-10..=10).map(|n: i32| (-PI * (n * n) as f64).exp()).sum();
        assert!((v.value - one * one).norm() < 1e-13);
    }

    #[test]
    fn matches_direct_summation_genus_two() {
        let b = bmat(&[&[c(0.2, 1.3), c(-0.4, 0.5)], &[c(-0.4, 0.5), c(0.1, 0.9)]]);
        let z = CVector::from_vec(vec![c(0.3, -0.4), c(-0.2, 0.7)]);
        let ch = ThetaCharacteristic::real(&[0.1, -0.3], &[0.25, 0.4]);
        let v = theta_char(&z, &b, &ch, 1e-14).unwrap();
        let oracle = direct(&b, &z, &ch, 12);
        assert!((v.value - oracle).norm() < 1e-12 * oracle.norm());
    }

    #[test]
    fn non_riemann_matrix_rejected() {
        let b = bmat(&[&[c(0., -1.)]]);
        assert_eq!(
            theta_char(&CVector::zeros(1), &b, &ThetaCharacteristic::zero(1), 1e-12).unwrap_err(),
            Error::NotRiemannMatrix
        );
    }

    #[test]
    fn tiny_imaginary_part_exceeds_cap() {
        let b = bmat(&[&[c(0., 1e-4)]]);
        assert!(matches!(
            ThetaEngine::new(&b, 1e-14),
            Err(Error::ToleranceUnachievable(_))
        ));
    }

    #[test]
    fn quasi_periodicity() {
        let b = bmat(&[&[c(0., 1.)]]);
        let z = CVector::from_vec(vec![c(0.31, -0.17)]);
        let ch = ThetaCharacteristic::real(&[0.2], &[0.7]);
        assert!(quasi_periodicity_check(&z, &b, &ch, &[0], &[0], 1e-14).unwrap() < 1e-15);
        assert!(quasi_periodicity_check(&z, &b, &ch, &[1], &[0], 1e-14).unwrap() < 1e-13);
        assert!(quasi_periodicity_check(&z, &b, &ch, &[0], &[1], 1e-14).unwrap() < 1e-13);
    }

    #[test]
    fn half_integer_characteristic_count() {
        let all = ThetaCharacteristic::all_half_integer(2);
        assert_eq!(all.len(), 16);
        assert_eq!(all.iter().filter(|c| c.parity() == Some(1)).count(), 6);
    }

    fn riemann_b2() -> CMatrix {
        bmat(&[&[c(0.2, 1.3), c(-0.4, 0.5)], &[c(-0.4, 0.5), c(0.1, 0.9)]])
    }

    #[test]
    fn heat_equation() {
        let b = riemann_b2();
        let z = CVector::from_vec(vec![c(0.13, 0.2), c(-0.3, 0.05)]);
        let ch = ThetaCharacteristic::real(&[0.1, 0.2], &[0.3, -0.1]);
        let jet = ThetaEngine::new(&b, 1e-15).unwrap().jet(&z, &ch);
        let h = 1e-4;
        for k in 0..2 {
            for l in 0..2 {
                let mut bp = b.clone();
                let mut bm = b.clone();
                bp[(k, l)] += h;
                bm[(k, l)] -= h;
                let vp = ThetaEngine::new(&bp, 1e-15).unwrap().value(&z, &ch);
                let vm = ThetaEngine::new(&bm, 1e-15).unwrap().value(&z, &ch);
                let db = (vp - vm) / (2.0 * h);
                let rel = (jet.hessian[(k, l)] - C64::new(0.0, 4.0 * PI) * db).norm() / jet.hessian[(k, l)].norm();
                assert!(rel < 1e-6, "{k}{l}: {rel}");
            }
        }
    }

    #[test]
    fn truncation_certificate() {
        let b = riemann_b2();
        let engine = ThetaEngine::new(&b, 1e-12).unwrap();
        let z = CVector::from_vec(vec![c(0.13, 0.2), c(-0.3, 0.05)]);
        let ch = ThetaCharacteristic::zero(2);
        let r = engine.radius();
        let a = engine.value_at_radius(&z, &ch, r);
        let bb = engine.value_at_radius(&z, &ch, r + 1.0);
        assert!((a - bb).norm() <= engine.tail_bound(r) * a.norm().max(1.0) * 10.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gradient_matches_finite_differences(
            zr in prop::collection::vec(-1.0f64..1.0, 4),
            pq in prop::collection::vec(-0.5f64..0.5, 4),
        ) {
            let b = riemann_b2();
            let engine = ThetaEngine::new(&b, 1e-15).unwrap();
            let z = CVector::from_vec(vec![c(zr[0], 0.3 * zr[1]), c(zr[2], 0.3 * zr[3])]);
            let ch = ThetaCharacteristic::real(&pq[..2], &pq[2..]);
            let ev = engine.eval(&z, &ch);
            let h = 1e-5;
            for k in 0..2 {
                let mut e = CVector::zeros(2);
                e[k] = C64::new(h, 0.0);
                let fd = (engine.value(&(&z + &e), &ch) - engine.value(&(&z - &e), &ch)) / (2.0 * h);
                let scale = ev.gradient.norm().max(ev.value.norm());
                prop_assert!((fd - ev.gradient[k]).norm() < 1e-7 * scale);
            }
        }

        #[test]
        fn half_integer_parity(bits in prop::collection::vec(0u8..2, 4), zr in prop::collection::vec(-1.0f64..1.0, 4)) {
            let b = riemann_b2();
            let engine = ThetaEngine::new(&b, 1e-15).unwrap();
            let ch = ThetaCharacteristic::from_bits(&bits[..2], &bits[2..]);
            let z = CVector::from_vec(vec![c(zr[0], 0.2 * zr[1]), c(zr[2], 0.2 * zr[3])]);
            let sign = if ch.parity() == Some(0) { 1.0 } else { -1.0 };
            let a = engine.value(&z, &ch);
            let m = engine.value(&(-&z), &ch);
            prop_assert!((m - a * sign).norm() < 1e-12 * a.norm().max(1.0));
        }
    }
}
