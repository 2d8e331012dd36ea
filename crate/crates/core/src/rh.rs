//! The Riemann–Hilbert solution `Psi(lambda)` assembled from the Szegő kernel,
//! its monodromy measured by analytic continuation, and the residues `A_j` of
//! `Psi_lambda Psi^-1`.
//!
//! Columns of `Psi` index the lifts `lambda^(j)` reached from infinity along the
//! canonical vertical paths; rows index the lifts of the normalization point.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{CurveModel, SurfacePath};
use crate::error::{Error, Result};
use crate::kernels::{KernelContext, KernelPoint};
use crate::periods::PeriodData;
use crate::theta::{ThetaCharacteristic, DIVISOR_TOL};
use crate::{CMatrix, CVector, C64};

/// Entries below this modulus count as zero in quasi-permutation checks.
pub const SUPPORT_TOL: f64 = 1e-8;

/// Where `Psi` is normalized to the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormalizationPoint {
    Infinity,
    Finite(C64),
}

/// `Psi` together with its lambda-derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiValue {
    pub psi: CMatrix,
    pub derivative: CMatrix,
}

impl PsiValue {
    /// `Psi_lambda Psi^-1`.
    pub fn log_derivative(&self) -> Result<CMatrix> {
        let inv = self
            .psi
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::StencilDegenerate("singular Psi".into()))?;
        Ok(&self.derivative * inv)
    }
}

/// Immutable evaluator for `Psi` on one curve and one characteristic.
#[derive(Debug, Clone)]
pub struct PsiEvaluator {
    pub kernel: KernelContext,
    pub characteristic: ThetaCharacteristic,
    pub lambda0: NormalizationPoint,
    /// `Theta[p;q](0)`.
    pub theta0: C64,
    /// Lifts of a finite normalization point, one per sheet; empty at infinity.
    pub base_points: Vec<KernelPoint>,
}

/// Builds the kernel machinery for `periods` and the evaluator on top of it.
pub fn build_psi(periods: PeriodData, ch: ThetaCharacteristic, lambda0: NormalizationPoint) -> Result<PsiEvaluator> {
    PsiEvaluator::new(KernelContext::new(periods)?, ch, lambda0)
}

impl PsiEvaluator {
    pub fn new(kernel: KernelContext, ch: ThetaCharacteristic, lambda0: NormalizationPoint) -> Result<Self> {
        let theta0 = kernel.theta_constant(&ch)?;
        let mut base_points = Vec::new();
        if let NormalizationPoint::Finite(l0) = lambda0 {
            let curve = &kernel.periods.curve;
            let clearance = 10.0 * curve.exclusion_radius();
            if curve.nearest_branch(l0).1 < clearance {
                return Err(Error::NormalizationPointOnCut(format!("{l0} is at a branch point")));
            }
            for p in curve.points() {
                let below = curve.height(*p) > curve.height(l0);
                if below && (curve.abscissa(*p) - curve.abscissa(l0)).abs() < clearance {
                    return Err(Error::NormalizationPointOnCut(format!("{l0} lies under {p}")));
                }
            }
            for k in 0..curve.sheets() {
                base_points.push(kernel.point(k, l0)?);
            }
        }
        Ok(PsiEvaluator {
            kernel,
            characteristic: ch,
            lambda0,
            theta0,
            base_points,
        })
    }

    pub fn curve(&self) -> &CurveModel {
        &self.kernel.periods.curve
    }

    pub fn periods(&self) -> &PeriodData {
        &self.kernel.periods
    }

    pub fn sheets(&self) -> usize {
        self.curve().sheets()
    }

    /// Canonical lifts of `lambda`, one per sheet.
    pub fn points(&self, lambda: C64) -> Result<Vec<KernelPoint>> {
        let curve = self.curve();
        let (j, d) = curve.nearest_branch(lambda);
        if d < curve.exclusion_radius() {
            return Err(Error::TooCloseToBranchPoint(format!("{lambda} is {d:e} from branch point {j}")));
        }
        (0..self.sheets()).map(|k| self.kernel.point(k, lambda)).collect()
    }

    /// `Psi(lambda)` on the cut plane.
    pub fn evaluate(&self, lambda: C64) -> Result<CMatrix> {
        Ok(self.evaluate_with_derivative(lambda)?.psi)
    }

    pub fn evaluate_with_derivative(&self, lambda: C64) -> Result<PsiValue> {
        if self.lambda0 == NormalizationPoint::Finite(lambda) {
            return self.at_normalization_point();
        }
        self.from_points(&self.points(lambda)?)
    }

    /// `Theta[p;q](0) Psi(lambda)`, the part of `Psi` that stays finite on the
    /// theta divisor.
    pub fn numerator(&self, lambda: C64) -> Result<CMatrix> {
        Ok(self.evaluate(lambda)? * self.theta0)
    }

    /// `Psi` from arbitrary lifts of one `lambda` (columns in the given order).
    pub fn from_points(&self, points: &[KernelPoint]) -> Result<PsiValue> {
        let n = self.sheets();
        if points.len() != n {
            return Err(Error::DimensionMismatch(format!("{} points for {} sheets", points.len(), n)));
        }
        let mut psi = CMatrix::zeros(n, n);
        let mut der = CMatrix::zeros(n, n);
        for (j, p) in points.iter().enumerate() {
            let du = self.periods().du(p.lambda, p.w);
            let (_, ddw) = self.kernel.dw_with_derivative(p.lambda, p.w);
            let dh = ddw / (2.0 * p.h);
            for k in 0..n {
                let (v, d) = self.entry(k, p, &du, dh)?;
                psi[(k, j)] = v;
                der[(k, j)] = d;
            }
        }
        Ok(PsiValue { psi, derivative: der })
    }

    fn entry(&self, k: usize, p: &KernelPoint, du: &CVector, dh: C64) -> Result<(C64, C64)> {
        let i = C64::new(0.0, 1.0);
        let (u0, pre, dpre) = match self.lambda0 {
            NormalizationPoint::Infinity => {
                let s = -i * self.kernel.sigma[k];
                (&self.periods().infinity_values[k], s, C64::new(0.0, 0.0))
            }
            NormalizationPoint::Finite(l0) => {
                let b = &self.base_points[k];
                (&b.u, b.h * (p.lambda - l0), b.h)
            }
        };
        let z = &p.u - u0;
        let num = self.kernel.theta.eval(&z, &self.characteristic);
        let den = self.kernel.theta.eval(&z, &self.kernel.odd.characteristic);
        if den.value.norm() < 1e-300 {
            return Err(Error::TooCloseToBranchPoint(format!("prime form vanishes at {}", p.lambda)));
        }
        let f = num.value / (self.theta0 * den.value);
        let df = num.gradient.dot(du) / (self.theta0 * den.value) - f * den.gradient.dot(du) / den.value;
        let v = f * p.h * pre;
        let d = df * p.h * pre + f * dh * pre + f * p.h * dpre;
        Ok((v, d))
    }

    /// Limit of `Psi` at a finite normalization point: the identity, with the
    /// derivative from the second-order expansion done by a symmetric stencil.
    fn at_normalization_point(&self) -> Result<PsiValue> {
        let n = self.sheets();
        let NormalizationPoint::Finite(l0) = self.lambda0 else {
            unreachable!()
        };
        let eps = 1e-4 * self.curve().min_separation();
        let plus = self.from_points(&self.points(l0 + eps)?)?;
        let minus = self.from_points(&self.points(l0 - eps)?)?;
        Ok(PsiValue {
            psi: CMatrix::identity(n, n),
            derivative: (plus.derivative + minus.derivative) * C64::new(0.5, 0.0),
        })
    }
}

/// `Theta[p;q](0) Psi(lambda)` for infinity normalization, computed without
/// dividing by `Theta[p;q](0)` so that it stays defined on the theta divisor.
pub fn numerator_at_infinity(kernel: &KernelContext, ch: &ThetaCharacteristic, lambda: C64) -> Result<CMatrix> {
    let curve = &kernel.periods.curve;
    let n = curve.sheets();
    if curve.nearest_branch(lambda).1 < curve.exclusion_radius() {
        return Err(Error::TooCloseToBranchPoint(format!("{lambda}")));
    }
    let mut m = CMatrix::zeros(n, n);
    for j in 0..n {
        let p = kernel.point(j, lambda)?;
        for k in 0..n {
            let z = &p.u - &kernel.periods.infinity_values[k];
            let num = kernel.theta.value(&z, ch);
            let den = kernel.theta.value(&z, &kernel.odd.characteristic);
            m[(k, j)] = num / den * p.h * C64::new(0.0, -1.0) * kernel.sigma[k];
        }
    }
    Ok(m)
}

/// `M_j` in the table `[[0, -m_j], [1/m_j, 0]]` for hyperelliptic curves.
pub fn predicted_monodromies_hyperelliptic(ch: &ThetaCharacteristic, g: usize) -> Vec<CMatrix> {
    predicted_multipliers(ch, g)
        .into_iter()
        .map(off_diagonal)
        .collect()
}

/// The multipliers `m_1 .. m_{2g+2}`.
pub fn predicted_multipliers(ch: &ThetaCharacteristic, g: usize) -> Vec<C64> {
    let tpi = C64::new(0.0, 2.0 * PI);
    let tail = |from: usize| -> C64 { (from..g).map(|k| ch.p[k]).sum() };
    let mut m = vec![C64::new(1.0, 0.0), (-tpi * tail(0)).exp()];
    for j in 0..g {
        m.push(-(tpi * ch.q[j] - tpi * tail(j)).exp());
        m.push((tpi * ch.q[j] - tpi * tail(j + 1)).exp());
    }
    m
}

/// `[[0, -m], [1/m, 0]]`.
pub fn off_diagonal(m: C64) -> CMatrix {
    let z = C64::new(0.0, 0.0);
    CMatrix::from_row_slice(2, 2, &[z, -m, C64::new(1.0, 0.0) / m, z])
}

/// Convention map from the predicted table to measured monodromies: an
/// optional relabeling of the two sheets and one sign per multiplier, fitted
/// once per configuration and then held fixed across characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonodromyCalibration {
    pub swap: bool,
    pub signs: Vec<f64>,
}

impl MonodromyCalibration {
    pub fn fit(measured: &[CMatrix], predicted: &[CMatrix]) -> Result<Self> {
        let mut worst = f64::INFINITY;
        for swap in [false, true] {
            let mut signs = Vec::with_capacity(measured.len());
            let mut dev: f64 = 0.0;
            for (m, p) in measured.iter().zip(predicted) {
                let r = relabel(m, swap)[(0, 1)] / p[(0, 1)];
                let s = if r.re >= 0.0 { 1.0 } else { -1.0 };
                dev = dev.max((r - s).norm());
                signs.push(s);
            }
            if dev < 1e-6 {
                return Ok(MonodromyCalibration { swap, signs });
            }
            worst = worst.min(dev);
        }
        Err(Error::ToleranceUnachievable(worst))
    }

    /// Predicted matrices expressed in the measured conventions.
    pub fn apply(&self, predicted: &[CMatrix]) -> Vec<CMatrix> {
        predicted
            .iter()
            .zip(&self.signs)
            .map(|(p, s)| relabel(&off_diagonal(-p[(0, 1)] * *s), self.swap))
            .collect()
    }

    /// Largest entrywise difference between measured and calibrated predictions.
    pub fn residual(&self, measured: &[CMatrix], predicted: &[CMatrix]) -> f64 {
        measured
            .iter()
            .zip(self.apply(predicted))
            .map(|(m, p)| max_abs(&(m - p)))
            .fold(0.0, f64::max)
    }
}

fn relabel(m: &CMatrix, swap: bool) -> CMatrix {
    if swap {
        CMatrix::from_row_slice(2, 2, &[m[(1, 1)], m[(1, 0)], m[(0, 1)], m[(0, 0)]])
    } else {
        m.clone()
    }
}

/// Outcome of continuing every column of `Psi` once around a loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationRecord {
    pub base: C64,
    /// Column `j` returns on the canonical lift `permutation[j]`.
    pub permutation: Vec<usize>,
    pub vertices: usize,
}

/// Monodromy data of `Psi` for loops based at a common point.
#[derive(Debug, Clone)]
pub struct MonodromyRepresentation {
    pub base: C64,
    /// Branch point indices in the planar order of their loops.
    pub order: Vec<usize>,
    pub loops: Vec<SurfacePath>,
    /// `M_j`, indexed by branch point.
    pub matrices: Vec<CMatrix>,
    pub permutations: Vec<Vec<usize>>,
    /// `t_j^(k) = log(eigenvalue) / 2 pi i` on the principal branch.
    pub exponents: Vec<Vec<C64>>,
}

impl MonodromyRepresentation {
    /// `M_{order[n-1]} ... M_{order[0]}`, which is the identity for a loop
    /// around every branch point.
    pub fn ordered_product(&self) -> CMatrix {
        let n = self.matrices[0].nrows();
        self.order
            .iter()
            .fold(CMatrix::identity(n, n), |acc, &j| &self.matrices[j] * acc)
    }

    pub fn product_residual(&self) -> f64 {
        let p = self.ordered_product();
        max_abs(&(p.clone() - CMatrix::identity(p.nrows(), p.ncols())))
    }

    /// Largest `|det M_j - 1|`.
    pub fn det_residual(&self) -> f64 {
        self.matrices
            .iter()
            .map(|m| (m.determinant() - 1.0).norm())
            .fold(0.0, f64::max)
    }

    /// Whether every `M_j` is a quasi-permutation matrix whose support is the
    /// continuation permutation.
    pub fn support_matches(&self) -> bool {
        self.matrices
            .iter()
            .zip(&self.permutations)
            .all(|(m, perm)| quasi_permutation_support(m).as_ref() == Some(perm))
    }

    /// Pairs `t_j^(l) - t_j^(s)` that are integers (a non-resonance failure).
    pub fn resonant(&self) -> Vec<usize> {
        self.exponents
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                (0..t.len()).any(|a| (a + 1..t.len()).any(|b| {
                    let d = t[a] - t[b];
                    d.im.abs() < 1e-8 && (d.re - d.re.round()).abs() < 1e-8
                }))
            })
            .map(|(j, _)| j)
            .collect()
    }
}

/// Support of a quasi-permutation matrix as `perm[col] = row`, if it is one.
pub fn quasi_permutation_support(m: &CMatrix) -> Option<Vec<usize>> {
    let n = m.nrows();
    let mut perm = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for c in 0..n {
        let rows: Vec<usize> = (0..n).filter(|&r| m[(r, c)].norm() > SUPPORT_TOL).collect();
        if rows.len() != 1 || used[rows[0]] {
            return None;
        }
        used[rows[0]] = true;
        perm[c] = rows[0];
    }
    Some(perm)
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Loop around `lambda_j` based at the probe point: across above the branch
/// points, straight down, once around a circle of half the separation, and back.
pub fn monodromy_loop(curve: &CurveModel, j: usize, nodes: usize) -> SurfacePath {
    let up = curve.up();
    let base = curve.probe_point();
    let pj = curve.points()[j];
    let top = pj + up * (curve.height(base) - curve.height(pj));
    let r = 0.5 * curve.separation_of(j);
    let start = pj + up * r;
    let mut v = vec![base, top, start];
    for m in 1..nodes {
        v.push(pj + up * r * C64::from_polar(1.0, 2.0 * PI * m as f64 / nodes as f64));
    }
    v.extend([start, top, base]);
    SurfacePath::new(0, v)
}

/// Winding number of a closed polyline around `z`.
pub fn winding_number(vertices: &[C64], z: C64) -> i64 {
    let mut total = 0.0;
    for w in vertices.windows(2) {
        total += ((w[1] - z) / (w[0] - z)).arg();
    }
    (total / (2.0 * PI)).round() as i64
}

/// `M_j` with `Psi_continued(base) = Psi(base) M_j` for a closed loop around `lambda_j`.
pub fn measure_monodromy(psi: &PsiEvaluator, j: usize, path: &SurfacePath) -> Result<(CMatrix, ContinuationRecord)> {
    let curve = psi.curve();
    let v = &path.vertices;
    if !path.is_closed() || v.len() < 3 {
        return Err(Error::ContinuationAmbiguous("monodromy loop must be closed".into()));
    }
    let enclosed: Vec<usize> = (0..curve.points().len())
        .filter(|&i| winding_number(v, curve.points()[i]) != 0)
        .collect();
    if enclosed != [j] || winding_number(v, curve.points()[j]) != 1 {
        return Err(Error::LoopEnclosesMultiplePoints(enclosed.len()));
    }
    let base = v[0];
    let start = psi.points(base)?;
    let moved: Vec<KernelPoint> = start
        .par_iter()
        .map(|p| psi.kernel.advance(p, &v[1..]))
        .collect::<Result<_>>()?;
    let mut permutation = Vec::with_capacity(moved.len());
    for p in &moved {
        let d: Vec<f64> = start.iter().map(|s| (s.w - p.w).norm()).collect();
        let best = (0..d.len()).min_by(|a, b| d[*a].total_cmp(&d[*b])).unwrap();
        if d[best] > 1e-6 * p.w.norm().max(1e-300) {
            return Err(Error::ContinuationAmbiguous(format!("loop {j} does not close on a sheet")));
        }
        permutation.push(best);
    }
    let before = psi.from_points(&start)?.psi;
    let after = psi.from_points(&moved)?.psi;
    let inv = before
        .try_inverse()
        .ok_or_else(|| Error::ContinuationAmbiguous("singular Psi at base".into()))?;
    Ok((
        inv * after,
        ContinuationRecord {
            base,
            permutation,
            vertices: v.len(),
        },
    ))
}

/// Measures every `M_j` on the standard loops (64 circle nodes).
pub fn measure_all(psi: &PsiEvaluator) -> Result<MonodromyRepresentation> {
    let curve = psi.curve();
    let n = curve.points().len();
    let loops: Vec<SurfacePath> = (0..n).map(|j| monodromy_loop(curve, j, 64)).collect();
    let results: Vec<(CMatrix, ContinuationRecord)> = (0..n)
        .into_par_iter()
        .map(|j| measure_monodromy(psi, j, &loops[j]))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| curve.abscissa(curve.points()[*a]).total_cmp(&curve.abscissa(curve.points()[*b])));
    let mut matrices = Vec::with_capacity(n);
    let mut permutations = Vec::with_capacity(n);
    let mut exponents = Vec::with_capacity(n);
    for (m, rec) in results {
        let eig = m.clone().schur().eigenvalues().unwrap_or_else(|| CVector::zeros(m.nrows()));
        exponents.push(eig.iter().map(|e| e.ln() / C64::new(0.0, 2.0 * PI)).collect());
        permutations.push(rec.permutation);
        matrices.push(m);
    }
    Ok(MonodromyRepresentation {
        base: curve.probe_point(),
        order,
        loops,
        matrices,
        permutations,
        exponents,
    })
}

/// Residues `A_j` of `Psi_lambda Psi^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchlesingerResidues {
    pub matrices: Vec<CMatrix>,
    /// True when `Psi` is normalized at infinity.
    pub at_infinity: bool,
    pub radii: Vec<f64>,
    /// Largest change of any `A_j` when the node count is doubled (0 if unchecked).
    pub refinement: f64,
}

impl SchlesingerResidues {
    /// `sum_j A_j / (lambda - lambda_j)`.
    pub fn rational(&self, points: &[C64], lambda: C64) -> CMatrix {
        let n = self.matrices[0].nrows();
        self.matrices
            .iter()
            .zip(points)
            .fold(CMatrix::zeros(n, n), |acc, (a, p)| acc + a * (C64::new(1.0, 0.0) / (lambda - p)))
    }

    pub fn trace_residual(&self) -> f64 {
        self.matrices.iter().map(|a| a.trace().norm()).fold(0.0, f64::max)
    }

    pub fn sum_residual(&self) -> f64 {
        let n = self.matrices[0].nrows();
        max_abs(&self.matrices.iter().fold(CMatrix::zeros(n, n), |acc, a| acc + a))
    }
}

/// Residues by the trapezoid rule with 64 nodes, certified against 128.
pub fn residue_matrices(psi: &PsiEvaluator) -> Result<SchlesingerResidues> {
    residue_matrices_with(psi, 64, true)
}

pub fn residue_matrices_with(psi: &PsiEvaluator, nodes: usize, check: bool) -> Result<SchlesingerResidues> {
    let n = psi.curve().points().len();
    let out: Vec<(CMatrix, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let (a, r) = residue(psi, j, nodes)?;
            let delta = if check { max_abs(&(residue(psi, j, 2 * nodes)?.0 - &a)) } else { 0.0 };
            Ok((a, r, delta))
        })
        .collect::<Result<_>>()?;
    Ok(SchlesingerResidues {
        refinement: out.iter().map(|x| x.2).fold(0.0, f64::max),
        radii: out.iter().map(|x| x.1).collect(),
        matrices: out.into_iter().map(|x| x.0).collect(),
        at_infinity: psi.lambda0 == NormalizationPoint::Infinity,
    })
}

/// `A_j` on a circle continued node to node from the point above `lambda_j`.
fn residue(psi: &PsiEvaluator, j: usize, nodes: usize) -> Result<(CMatrix, f64)> {
    let curve = psi.curve();
    let pj = curve.points()[j];
    let up = curve.up();
    let mut r = 0.5 * curve.separation_of(j);
    let mut start = None;
    while r >= curve.exclusion_radius() {
        if let Ok(p) = psi.points(pj + up * r) {
            start = Some(p);
            break;
        }
        r *= 0.8;
    }
    let mut cur = start.ok_or(Error::ContourTouchesCut(j))?;
    let n = psi.sheets();
    let mut acc = CMatrix::zeros(n, n);
    for m in 0..nodes {
        let lam = pj + up * r * C64::from_polar(1.0, 2.0 * PI * m as f64 / nodes as f64);
        if m > 0 {
            cur = cur
                .iter()
                .map(|p| psi.kernel.advance(p, &[lam]))
                .collect::<Result<_>>()?;
        }
        acc += psi.from_points(&cur)?.log_derivative()? * (lam - pj);
    }
    Ok((acc / C64::new(nodes as f64, 0.0), r))
}

/// `max |Psi_lambda Psi^-1 - sum_j A_j / (lambda - lambda_j)|` at `lambda`.
pub fn ode_residual(psi: &PsiEvaluator, res: &SchlesingerResidues, lambda: C64) -> Result<f64> {
    let lhs = psi.evaluate_with_derivative(lambda)?.log_derivative()?;
    Ok(max_abs(&(lhs - res.rational(psi.curve().points(), lambda))))
}

/// `|det Psi(lambda) - 1|`.
pub fn det_residual(psi: &PsiEvaluator, lambda: C64) -> Result<f64> {
    Ok((psi.evaluate(lambda)?.determinant() - 1.0).norm())
}

/// Distance of `Psi(lambda_0)` from the identity, measured through the mean of
/// `Psi` over a circle around `lambda_0` (a large circle for infinity), with the
/// lifts continued node to node so the mean sees a single holomorphic branch.
pub fn normalization_residual(psi: &PsiEvaluator) -> Result<f64> {
    let curve = psi.curve();
    let n = psi.sheets();
    let nodes = 48;
    let (center, r) = match psi.lambda0 {
        NormalizationPoint::Infinity => (curve.center(), 4.0 * curve.outer_radius()),
        NormalizationPoint::Finite(l0) => (l0, 0.25 * curve.nearest_branch(l0).1),
    };
    let node = |m: usize| center + curve.up() * r * C64::from_polar(1.0, 2.0 * PI * m as f64 / nodes as f64);
    let mut cur = psi.points(node(0))?;
    let mut acc = CMatrix::zeros(n, n);
    for m in 0..nodes {
        if m > 0 {
            cur = cur
                .iter()
                .map(|p| psi.kernel.advance(p, &[node(m)]))
                .collect::<Result<_>>()?;
        }
        acc += psi.from_points(&cur)?.psi;
    }
    let mean = acc / C64::new(nodes as f64, 0.0);
    Ok(max_abs(&(mean - CMatrix::identity(n, n))))
}

/// True when `Theta[p;q](0)` is numerically zero.
pub fn on_theta_divisor(kernel: &KernelContext, ch: &ThetaCharacteristic) -> bool {
    kernel
        .theta
        .value(&CVector::zeros(kernel.genus()), ch)
        .norm()
        <= DIVISOR_TOL
}


/// For a half-integer characteristic all `M_j` commute; conjugating by the
/// eigenbasis of `M_1` makes `Psi` diagonal. Returns `G^-1 Psi(lambda) G`.
pub fn diagonal_form(psi: &PsiEvaluator, rep: &MonodromyRepresentation, lambda: C64) -> Result<CMatrix> {
    if psi.sheets() != 2 {
        return Err(Error::NotHyperelliptic);
    }
    let m = -rep.matrices[0][(0, 1)];
    let i = C64::new(0.0, 1.0);
    let g = CMatrix::from_row_slice(2, 2, &[m, m, -i, i]);
    let inv = g.clone().try_inverse().ok_or(Error::StencilDegenerate("eigenbasis".into()))?;
    Ok(inv * psi.evaluate(lambda)? * g)
}

/// Residual of the diagonal form at `lambda`: the off-diagonal size plus the
/// smallest mismatch of `d^4` against `prod_T (lambda - lambda_j) / prod_{not T}`
/// over subsets `T` of size `g + 1`, returned with the best subset.
pub fn diagonal_residual(psi: &PsiEvaluator, rep: &MonodromyRepresentation, lambda: C64) -> Result<(Vec<usize>, f64)> {
    let d = diagonal_form(psi, rep, lambda)?;
    let off = d[(0, 1)].norm().max(d[(1, 0)].norm());
    let pts = psi.curve().points();
    let n = pts.len();
    let d4 = d[(0, 0)].powi(4);
    let mut best = (Vec::new(), f64::INFINITY);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n / 2 {
            continue;
        }
        let mut f = C64::new(1.0, 0.0);
        for (j, p) in pts.iter().enumerate() {
            if mask & (1 << j) != 0 {
                f *= lambda - p;
            } else {
                f /= lambda - p;
            }
        }
        let r = (d4 - f).norm() / f.norm();
        if r < best.1 {
            best = ((0..n).filter(|j| mask & (1 << j) != 0).collect(), r);
        }
    }
    Ok((best.0, best.1.max(off)))
}
