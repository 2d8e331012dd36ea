//! Prime form, spinor `h` with `h^2 = dW/d lambda`, and the Szegő kernel, all
//! trivialized in the coordinate `lambda`.
//!
//! Points are lifted to the universal cover by explicit paths: a [`KernelPoint`]
//! carries `U`, `w` and `h` continued along the path that produced it, so kernel
//! values are single-valued functions of such lifts.

use std::f64::consts::PI;

use crate::curve::{Piece, SurfacePath};
use crate::error::{Error, Result};
use crate::periods::PeriodData;
use crate::theta::{ThetaCharacteristic, ThetaEngine, DIVISOR_TOL};
use crate::{CVector, C64};

/// Relative tolerance used for every theta evaluation in kernels.
pub const THETA_TOL: f64 = 1e-15;

/// Odd half-integer characteristic `[S]` with `dW = sum_k dTheta[S]/dz_k(0) dU_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct OddCharacteristic {
    pub characteristic: ThetaCharacteristic,
    pub gradient: CVector,
}

/// A point of the universal cover reached along an explicit path, with the
/// data needed by kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPoint {
    pub lambda: C64,
    pub w: C64,
    /// Abel map along the path.
    pub u: CVector,
    /// Spinor `h` with `h^2 = dW/d lambda`, continued along the path.
    pub h: C64,
}

/// Kernel value in the lambda trivialization; `pole` marks coincident arguments,
/// where the kernel has a simple pole of residue `1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrivializedKernelValue {
    pub value: C64,
    pub pole: bool,
}

/// Everything needed to evaluate kernels on one curve.
#[derive(Debug, Clone)]
pub struct KernelContext {
    pub periods: PeriodData,
    pub theta: ThetaEngine,
    pub odd: OddCharacteristic,
    /// `sigma_k^2 = dW/d xi` at infinity on sheet `k`, `xi = 1/(lambda - center)`.
    pub sigma: Vec<C64>,
    /// `dW/d lambda = dw_coeffs . v(lambda, w)` for the raw differentials `v`.
    dw_coeffs: CVector,
}

/// `lambda - lambda0`, the prime form of the sphere.
pub fn sphere_prime_form(lambda: C64, lambda0: C64) -> C64 {
    lambda - lambda0
}

impl KernelContext {
    /// Picks the odd characteristic with the largest gradient among those whose
    /// `dW` does not vanish at any point over infinity.
    pub fn new(periods: PeriodData) -> Result<Self> {
        let theta = ThetaEngine::new(&periods.b_matrix, THETA_TOL)?;
        let g = periods.genus();
        let zero = CVector::zeros(g);
        let mut cands = Vec::new();
        for ch in ThetaCharacteristic::all_half_integer(g) {
            if ch.parity() != Some(1) {
                continue;
            }
            let grad = theta.eval(&zero, &ch).gradient;
            let at_inf = infinity_slopes(&periods, &grad);
            let worst = at_inf.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
            cands.push((ch, grad, worst));
        }
        let best_inf = cands.iter().map(|c| c.2).fold(0.0, f64::max);
        let chosen = cands
            .into_iter()
            .filter(|c| c.2 >= 1e-3 * best_inf)
            .fold(None::<(ThetaCharacteristic, CVector, f64)>, |acc, c| match acc {
                Some(a) if a.1.norm() >= c.1.norm() => Some(a),
                _ => Some(c),
            })
            .ok_or(Error::DegenerateOddCharacteristic)?;
        Self::with_odd(periods, chosen.0, None)
    }

    /// Uses a given odd characteristic. With `reference`, each `sigma_k` takes the
    /// square-root branch nearest to the reference (continuity across a family).
    pub fn with_odd(periods: PeriodData, odd: ThetaCharacteristic, reference: Option<&[C64]>) -> Result<Self> {
        let theta = ThetaEngine::new(&periods.b_matrix, THETA_TOL)?;
        let g = periods.genus();
        if odd.genus() != g {
            return Err(Error::DimensionMismatch(format!("odd characteristic for genus {}", odd.genus())));
        }
        let ev = theta.eval(&CVector::zeros(g), &odd);
        if ev.value.norm() > DIVISOR_TOL || ev.gradient.norm() < 1e-8 {
            return Err(Error::DegenerateOddCharacteristic);
        }
        let slopes = infinity_slopes(&periods, &ev.gradient);
        let mut sigma = Vec::with_capacity(slopes.len());
        for (k, s) in slopes.iter().enumerate() {
            if s.norm() < 1e-10 * ev.gradient.norm() {
                return Err(Error::DegenerateOddCharacteristic);
            }
            let root = s.sqrt();
            let root = match reference {
                Some(r) if (root + r[k]).norm() < (root - r[k]).norm() => -root,
                _ => root,
            };
            sigma.push(root);
        }
        let dw_coeffs = periods.normalization.transpose() * &ev.gradient;
        Ok(KernelContext {
            periods,
            theta,
            odd: OddCharacteristic {
                characteristic: odd,
                gradient: ev.gradient,
            },
            sigma,
            dw_coeffs,
        })
    }

    pub fn genus(&self) -> usize {
        self.periods.genus()
    }

    /// `dW/d lambda` at `(lambda, w)`.
    pub fn dw(&self, lambda: C64, w: C64) -> C64 {
        self.dw_coeffs.dot(&self.periods.raw(lambda, w))
    }

    /// `dW/d lambda` and its lambda-derivative.
    pub fn dw_with_derivative(&self, lambda: C64, w: C64) -> (C64, C64) {
        let (du, ddu) = self.periods.du_with_derivative(lambda, w);
        let g = &self.odd.gradient;
        (g.dot(&du), g.dot(&ddu))
    }

    /// Point reached from infinity on `sheet` along the canonical path to `lambda`.
    pub fn point(&self, sheet: usize, lambda: C64) -> Result<KernelPoint> {
        let path = SurfacePath::from_infinity(sheet, lambda);
        let curve = &self.periods.curve;
        let pieces = curve.pieces(&path)?;
        let u = &self.periods.infinity_values[sheet] + self.integrate(&pieces)?;
        let mut h = C64::new(0.0, 0.0);
        let mut w = C64::new(0.0, 0.0);
        for piece in &pieces {
            if piece.is_from_infinity() {
                // start far out where h ~ i xi sigma_k, then follow log-spaced parameters
                let s0: f64 = 1e-5;
                let at = |t: f64| {
                    let (l, ww, _) = piece.eval(curve, s0.powf(1.0 - t));
                    (l, ww)
                };
                let (l0, w0) = at(0.0);
                let xi = 1.0 / (l0 - curve.center());
                let guess = C64::new(0.0, 1.0) * xi * self.sigma[sheet];
                let root = self.dw(l0, w0).sqrt();
                let h0 = if (root - guess).norm() <= (root + guess).norm() { root } else { -root };
                h = self.track(&at, 0.0, 1.0, h0, 0)?;
            } else {
                let at = |t: f64| {
                    let (l, ww, _) = piece.eval(curve, t);
                    (l, ww)
                };
                h = self.track(&at, 0.0, 1.0, h, 0)?;
            }
            w = piece.end_w(curve);
        }
        Ok(KernelPoint { lambda, w, u, h })
    }

    /// Continues a point along the polyline `from.lambda -> vertices...`.
    pub fn advance(&self, from: &KernelPoint, vertices: &[C64]) -> Result<KernelPoint> {
        let curve = &self.periods.curve;
        let pieces = curve.pieces_from(from.lambda, from.w, vertices)?;
        if pieces.is_empty() {
            return Ok(from.clone());
        }
        let u = &from.u + self.integrate(&pieces)?;
        let mut h = from.h;
        for piece in &pieces {
            let at = |t: f64| {
                let (l, ww, _) = piece.eval(curve, t);
                (l, ww)
            };
            h = self.track(&at, 0.0, 1.0, h, 0)?;
        }
        let last = pieces.last().unwrap();
        Ok(KernelPoint {
            lambda: last.end_lambda(curve),
            w: last.end_w(curve),
            u,
            h,
        })
    }

    fn integrate(&self, pieces: &[Piece]) -> Result<CVector> {
        let pd = &self.periods;
        let f = |l: C64, w: C64, out: &mut [C64]| pd.differentials.eval(l, w, out);
        let (raw, _) = pd.curve.integrate_pieces(pieces, pd.genus(), &f, &pd.settings)?;
        Ok(&pd.normalization * CVector::from_vec(raw))
    }

    /// Follows the sign of `sqrt(dW)` from `t0` (value `h0`) to `t1`.
    fn track<F: Fn(f64) -> (C64, C64)>(&self, at: &F, t0: f64, t1: f64, h0: C64, depth: usize) -> Result<C64> {
        let (l1, w1) = at(t1);
        let root = self.dw(l1, w1).sqrt();
        let cand = if (root - h0).norm() <= (root + h0).norm() { root } else { -root };
        if (cand - h0).norm() <= 0.5 * cand.norm().max(h0.norm()) {
            return Ok(cand);
        }
        if depth > 40 {
            return Err(Error::ContinuationAmbiguous(format!("spinor sign near {l1}")));
        }
        let mid = 0.5 * (t0 + t1);
        let hm = self.track(at, t0, mid, h0, depth + 1)?;
        self.track(at, mid, t1, hm, depth + 1)
    }

    /// Prime form `E(P, Q) = Theta[S](U(P) - U(Q)) / (h(P) h(Q))`.
    pub fn prime_form(&self, p: &KernelPoint, q: &KernelPoint) -> Result<C64> {
        if p.h.norm() < 1e-300 || q.h.norm() < 1e-300 {
            return Err(Error::DegenerateOddCharacteristic);
        }
        let z = &p.u - &q.u;
        Ok(self.theta.value(&z, &self.odd.characteristic) / (p.h * q.h))
    }

    /// `Theta[p;q](0)`, failing on the theta divisor.
    pub fn theta_constant(&self, ch: &ThetaCharacteristic) -> Result<C64> {
        if ch.genus() != self.genus() {
            return Err(Error::DimensionMismatch(format!(
                "characteristic of length {} for genus {}",
                ch.genus(),
                self.genus()
            )));
        }
        let t0 = self.theta.value(&CVector::zeros(self.genus()), ch);
        if t0.norm() <= DIVISOR_TOL {
            return Err(Error::OnThetaDivisor(t0.norm()));
        }
        Ok(t0)
    }

    /// Szegő kernel `Theta[p;q](U(P) - U(Q)) / (Theta[p;q](0) E(P, Q))`.
    pub fn szego_kernel(&self, ch: &ThetaCharacteristic, p: &KernelPoint, q: &KernelPoint) -> Result<TrivializedKernelValue> {
        let t0 = self.theta_constant(ch)?;
        if p == q {
            return Ok(TrivializedKernelValue {
                value: C64::new(1.0, 0.0),
                pole: true,
            });
        }
        let e = self.prime_form(p, q)?;
        let num = self.theta.value(&(&p.u - &q.u), ch);
        Ok(TrivializedKernelValue {
            value: num / (t0 * e),
            pole: false,
        })
    }
}

/// Relative residual of the trisecant identity
/// `T(c-a)T(d-b)E(c,b)E(a,d) + T(d-a)T(c-b)E(a,c)E(b,d) = T(0)T(c+d-a-b)E(c,d)E(a,b)`,
/// where `T(x) = Theta(z + U(x))` with Abel-map differences.
pub fn fay_trisecant_residual(k: &KernelContext, pts: [&KernelPoint; 4], z: &CVector) -> Result<f64> {
    let [a, b, c, d] = pts;
    let zero = ThetaCharacteristic::zero(k.genus());
    let th = |v: CVector| k.theta.value(&v, &zero);
    let e = |x: &KernelPoint, y: &KernelPoint| k.prime_form(x, y);
    let t1 = th(z + &c.u - &a.u) * th(z + &d.u - &b.u) * e(c, b)? * e(a, d)?;
    let t2 = th(z + &d.u - &a.u) * th(z + &c.u - &b.u) * e(a, c)? * e(b, d)?;
    let rhs = th(z.clone()) * th(z + &c.u + &d.u - &a.u - &b.u) * e(c, d)? * e(a, b)?;
    Ok((t1 + t2 - rhs).norm() / t1.norm().max(t2.norm()).max(rhs.norm()))
}

/// Relative residual of the determinant identity
/// `det S(P_i, Q_j) = Theta[p;q](sum U(P) - sum U(Q)) / Theta[p;q](0)
///  * prod_{i<j} E(P_i,P_j) E(Q_j,Q_i) / prod_{i,j} E(P_i,Q_j)`.
pub fn szego_determinant_residual(
    k: &KernelContext,
    ch: &ThetaCharacteristic,
    ps: &[KernelPoint],
    qs: &[KernelPoint],
) -> Result<f64> {
    let n = ps.len();
    if qs.len() != n {
        return Err(Error::DimensionMismatch(format!("{} versus {} points", n, qs.len())));
    }
    let mut m = crate::CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = k.szego_kernel(ch, &ps[i], &qs[j])?.value;
        }
    }
    let lhs = m.determinant();
    let mut z = CVector::zeros(k.genus());
    for (p, q) in ps.iter().zip(qs) {
        z += &p.u - &q.u;
    }
    let mut rhs = k.theta.value(&z, ch) / k.theta_constant(ch)?;
    for i in 0..n {
        for j in 0..n {
            if i < j {
                rhs *= k.prime_form(&ps[i], &ps[j])? * k.prime_form(&qs[j], &qs[i])?;
            }
            rhs /= k.prime_form(&ps[i], &qs[j])?;
        }
    }
    Ok((lhs - rhs).norm() / lhs.norm().max(rhs.norm()))
}

/// `dW/d xi` at infinity on each sheet, `xi = 1/(lambda - center)`: only
/// differentials `lambda^a d lambda / w^b` with `a + 2 = b n / N` survive, each
/// contributing `-exp(-2 pi i k b / N)`.
fn infinity_slopes(periods: &PeriodData, gradient: &CVector) -> Vec<C64> {
    let curve = &periods.curve;
    let n = curve.points().len();
    let big_n = curve.sheets();
    let coeffs = periods.normalization.transpose() * gradient;
    (0..big_n)
        .map(|k| {
            let mut s = C64::new(0.0, 0.0);
            for (m, mono) in periods.differentials.monomials.iter().enumerate() {
                if (mono.w_power * n).is_multiple_of(big_n) && mono.power + 2 == mono.w_power * n / big_n {
                    let phase = -2.0 * PI * (k * mono.w_power) as f64 / big_n as f64;
                    s -= coeffs[m] * C64::from_polar(1.0, phase);
                }
            }
            s
        })
        .collect()
}
