//! Isomonodromic checks: Schlesinger equations for the residues, the closed
//! form of the tau function against its defining log-derivative, Thomae
//! formulas, and scans of the theta divisor along lines in characteristic space.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{CoverKind, CurveModel};
use crate::error::{Error, Result};
use crate::kernels::{KernelContext, KernelPoint, THETA_TOL};
use crate::periods::PeriodData;
use crate::rh::{max_abs, numerator_at_infinity, residue_matrices_with, NormalizationPoint, PsiEvaluator, SchlesingerResidues};
use crate::theta::{ThetaCharacteristic, ThetaEngine, DIVISOR_TOL};
use crate::{CMatrix, CVector, C64};

/// Trapezoid nodes used for residues inside finite-difference stencils.
const STENCIL_NODES: usize = 64;

/// Central differences with steps `h` and `h/2` combined by Richardson
/// extrapolation. Returns the derivative and the change between the two raw
/// differences.
pub fn richardson<F>(h: f64, f: F) -> Result<(Vec<C64>, f64)>
where
    F: Fn(f64) -> Result<Vec<C64>> + Sync,
{
    let steps = [h, -h, 0.5 * h, -0.5 * h];
    let v: Vec<Vec<C64>> = steps.par_iter().map(|s| f(*s)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(v[0].len());
    let mut change: f64 = 0.0;
    for i in 0..v[0].len() {
        let d1 = (v[0][i] - v[1][i]) / (2.0 * h);
        let d2 = (v[2][i] - v[3][i]) / h;
        change = change.max((d2 - d1).norm());
        out.push((4.0 * d2 - d1) / 3.0);
    }
    Ok((out, change))
}

/// Curves obtained from a base configuration by moving one branch point, with
/// the characteristic, the ray direction, the odd characteristic and the
/// spinor branch at infinity all pinned to the base.
#[derive(Debug, Clone)]
pub struct DeformationFamily {
    pub base: CurveModel,
    pub characteristic: ThetaCharacteristic,
    pub kernel: KernelContext,
    pub steps: Vec<f64>,
}

impl DeformationFamily {
    /// Default step `1e-3` times the smallest branch point distance.
    pub fn new(curve: CurveModel, ch: ThetaCharacteristic) -> Result<Self> {
        let kernel = KernelContext::new(PeriodData::new(&curve)?)?;
        if ch.genus() != kernel.genus() {
            return Err(Error::DimensionMismatch(format!(
                "characteristic of length {} for genus {}",
                ch.genus(),
                kernel.genus()
            )));
        }
        if kernel.theta_constant(&ch).is_err() {
            return Err(Error::StencilCrossesThetaDivisor);
        }
        let h = 1e-3 * curve.min_separation();
        let steps = vec![h; curve.points().len()];
        Ok(DeformationFamily {
            base: curve,
            characteristic: ch,
            kernel,
            steps,
        })
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.steps.iter_mut().for_each(|s| *s = h);
        self
    }

    /// Same family with another characteristic.
    pub fn with_characteristic(&self, ch: ThetaCharacteristic) -> Result<Self> {
        if self.kernel.theta_constant(&ch).is_err() {
            return Err(Error::StencilCrossesThetaDivisor);
        }
        Ok(DeformationFamily {
            characteristic: ch,
            ..self.clone()
        })
    }

    pub fn points(&self) -> &[C64] {
        self.base.points()
    }

    /// The base curve with `lambda_j` moved by `delta`.
    pub fn curve_with(&self, j: usize, delta: f64) -> Result<CurveModel> {
        let mut pts = self.base.points().to_vec();
        pts[j] += delta;
        let c = match self.base.kind() {
            CoverKind::Hyperelliptic => CurveModel::hyperelliptic(&pts)?,
            CoverKind::Cyclic => CurveModel::cyclic(&pts, self.base.sheets())?,
        };
        let c = c
            .with_up_direction(self.base.up())
            .with_exclusion_radius(self.base.exclusion_radius());
        if c.min_separation() < 10.0 * self.base.exclusion_radius() {
            return Err(Error::StencilDegenerate(format!("branch points collide when moving {j} by {delta}")));
        }
        Ok(c)
    }

    pub fn periods_with(&self, j: usize, delta: f64) -> Result<PeriodData> {
        if delta == 0.0 {
            return Ok(self.kernel.periods.clone());
        }
        PeriodData::new(&self.curve_with(j, delta)?)
    }

    pub fn kernel_with(&self, j: usize, delta: f64) -> Result<KernelContext> {
        if delta == 0.0 {
            return Ok(self.kernel.clone());
        }
        KernelContext::with_odd(
            self.periods_with(j, delta)?,
            self.kernel.odd.characteristic.clone(),
            Some(&self.kernel.sigma),
        )
    }

    pub fn psi_with(&self, j: usize, delta: f64) -> Result<PsiEvaluator> {
        PsiEvaluator::new(self.kernel_with(j, delta)?, self.characteristic.clone(), NormalizationPoint::Infinity).map_err(|e| match e {
            Error::OnThetaDivisor(_) => Error::StencilCrossesThetaDivisor,
            e => e,
        })
    }

    pub fn base_psi(&self) -> Result<PsiEvaluator> {
        self.psi_with(0, 0.0)
    }

    pub fn base_residues(&self) -> Result<SchlesingerResidues> {
        residue_matrices_with(&self.base_psi()?, STENCIL_NODES, false)
    }
}

fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// `[A_j, A_k] / (lambda_j - lambda_k)` for `j != k`, and `-sum_{l != j}` of
/// those for `j == k`.
pub fn schlesinger_rhs(res: &SchlesingerResidues, points: &[C64], j: usize, k: usize) -> CMatrix {
    let a = &res.matrices;
    if j != k {
        return commutator(&a[j], &a[k]) / (points[j] - points[k]);
    }
    let n = a[j].nrows();
    (0..a.len())
        .filter(|&l| l != j)
        .fold(CMatrix::zeros(n, n), |acc, l| acc - commutator(&a[j], &a[l]) / (points[j] - points[l]))
}

/// Residuals `|dA_j/d lambda_k - rhs_jk|` for every pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchlesingerReport {
    /// `residuals[j][k]`.
    pub residuals: Vec<Vec<f64>>,
    /// Largest change between the `h` and `h/2` differences.
    pub refinement: f64,
}

impl SchlesingerReport {
    pub fn max_off_diagonal(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (j, row) in self.residuals.iter().enumerate() {
            for (k, r) in row.iter().enumerate() {
                if j != k {
                    m = m.max(*r);
                }
            }
        }
        m
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.residuals.len()).map(|j| self.residuals[j][j]).fold(0.0, f64::max)
    }
}

pub fn schlesinger_residual(family: &DeformationFamily) -> Result<SchlesingerReport> {
    let base = family.base_residues()?;
    let pts = family.points();
    let n = pts.len();
    let size = family.base.sheets();
    let mut residuals = vec![vec![0.0; n]; n];
    let mut refinement: f64 = 0.0;
    for k in 0..n {
        let (d, change) = richardson(family.steps[k], |s| {
            let r = residue_matrices_with(&family.psi_with(k, s)?, STENCIL_NODES, false)?;
            Ok(r.matrices.iter().flat_map(|m| m.iter().copied().collect::<Vec<_>>()).collect())
        })?;
        refinement = refinement.max(change);
        for (j, row) in residuals.iter_mut().enumerate() {
            let block = &d[j * size * size..(j + 1) * size * size];
            let da = CMatrix::from_column_slice(size, size, block);
            row[k] = max_abs(&(da - schlesinger_rhs(&base, pts, j, k)));
        }
    }
    Ok(SchlesingerReport { residuals, refinement })
}

/// `tau = (det A)^(-1/2) prod_{j<k} (lambda_j - lambda_k)^(-1/8) Theta[p;q](0|B)`
/// with principal branches per factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauValue {
    pub value: C64,
    pub det_factor: C64,
    pub vandermonde_factor: C64,
    pub theta_factor: C64,
    #[serde(skip)]
    det_a: C64,
    #[serde(skip)]
    differences: Vec<C64>,
}

impl TauValue {
    /// `ln(self / other)` assembled factor by factor, which is free of branch
    /// jumps when the two configurations are close.
    pub fn log_ratio(&self, other: &TauValue) -> C64 {
        let det = -0.5 * (self.det_a / other.det_a).ln();
        let van: C64 = self
            .differences
            .iter()
            .zip(&other.differences)
            .map(|(a, b)| -0.125 * (a / b).ln())
            .sum();
        det + van + (self.theta_factor / other.theta_factor).ln()
    }
}

fn pair_differences(points: &[C64]) -> Vec<C64> {
    let mut d = Vec::new();
    for j in 0..points.len() {
        for k in j + 1..points.len() {
            d.push(points[j] - points[k]);
        }
    }
    d
}

pub fn tau_closed_form(periods: &PeriodData, ch: &ThetaCharacteristic) -> Result<TauValue> {
    if periods.curve.kind() != CoverKind::Hyperelliptic {
        return Err(Error::NotHyperelliptic);
    }
    let theta = ThetaEngine::new(&periods.b_matrix, THETA_TOL)?;
    let t0 = theta.value(&CVector::zeros(periods.genus()), ch);
    if t0.norm() <= DIVISOR_TOL {
        return Err(Error::OnThetaDivisor(t0.norm()));
    }
    Ok(tau_from_parts(periods, t0))
}

fn tau_from_parts(periods: &PeriodData, t0: C64) -> TauValue {
    let det_a = periods.a_matrix.determinant();
    let differences = pair_differences(periods.curve.points());
    let det_factor = det_a.powf(-0.5);
    let vandermonde_factor: C64 = differences.iter().map(|d| d.powf(-0.125)).product();
    TauValue {
        value: det_factor * vandermonde_factor * t0,
        det_factor,
        vandermonde_factor,
        theta_factor: t0,
        det_a,
        differences,
    }
}

/// `sum_{k != j} tr(A_j A_k) / (lambda_j - lambda_k)`.
pub fn tau_logderiv_from_residues(res: &SchlesingerResidues, points: &[C64], j: usize) -> C64 {
    (0..points.len())
        .filter(|&k| k != j)
        .map(|k| (&res.matrices[j] * &res.matrices[k]).trace() / (points[j] - points[k]))
        .sum()
}

/// Per branch point: the finite-difference `d ln tau / d lambda_j`, the
/// residue sum it should equal, and their distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauReport {
    pub closed: Vec<C64>,
    pub predicted: Vec<C64>,
    pub residuals: Vec<f64>,
}

impl TauReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

pub fn tau_logderiv_residuals(family: &DeformationFamily) -> Result<TauReport> {
    let res = family.base_residues()?;
    let base = tau_closed_form(&family.kernel.periods, &family.characteristic)?;
    let n = family.points().len();
    let mut closed = Vec::with_capacity(n);
    let mut predicted = Vec::with_capacity(n);
    for j in 0..n {
        let (d, _) = richardson(family.steps[j], |s| {
            let t = tau_closed_form(&family.periods_with(j, s)?, &family.characteristic).map_err(|e| match e {
                Error::OnThetaDivisor(_) => Error::StencilCrossesThetaDivisor,
                e => e,
            })?;
            Ok(vec![t.log_ratio(&base)])
        })?;
        closed.push(d[0]);
        predicted.push(tau_logderiv_from_residues(&res, family.points(), j));
    }
    let residuals = closed.iter().zip(&predicted).map(|(a, b)| (a - b).norm()).collect();
    Ok(TauReport {
        closed,
        predicted,
        residuals,
    })
}

pub fn tau_logderiv_residual(family: &DeformationFamily, j: usize) -> Result<f64> {
    Ok(tau_logderiv_residuals(family)?.residuals[j])
}

/// `prod_{j<k} (lambda_j - lambda_k)^(s_jk / 8)` with `s_jk = +1` when both or
/// neither lie in `T` and `-1` otherwise: the tau function of the diagonal
/// solution attached to the subset `T`.
pub fn tau_product_formula(points: &[C64], subset: &[usize]) -> C64 {
    let mut v = C64::new(1.0, 0.0);
    for j in 0..points.len() {
        for k in j + 1..points.len() {
            let same = subset.contains(&j) == subset.contains(&k);
            let e = if same { 0.125 } else { -0.125 };
            v *= (points[j] - points[k]).powf(e);
        }
    }
    v
}

/// `d/d lambda_j` of the log of [`tau_product_formula`].
pub fn tau_product_logderiv(points: &[C64], subset: &[usize], j: usize) -> C64 {
    (0..points.len())
        .filter(|&k| k != j)
        .map(|k| {
            let same = subset.contains(&j) == subset.contains(&k);
            let e = if same { 0.125 } else { -0.125 };
            e / (points[j] - points[k])
        })
        .sum()
}

/// Largest distance between `d ln tau / d p_k, d q_k` of the closed form
/// (finite differences) and the analytic derivatives of `ln Theta[p;q](0)`.
pub fn pq_derivative_residual(periods: &PeriodData, ch: &ThetaCharacteristic) -> Result<f64> {
    let g = periods.genus();
    let theta = ThetaEngine::new(&periods.b_matrix, THETA_TOL)?;
    let base = tau_closed_form(periods, ch)?;
    let ev = theta.eval(&CVector::zeros(g), ch);
    let dlog_q = &ev.gradient / ev.value;
    let dlog_p = &periods.b_matrix * &dlog_q + &ch.q * C64::new(0.0, 2.0 * PI);
    let mut worst: f64 = 0.0;
    for (which, analytic) in [(0, &dlog_p), (1, &dlog_q)] {
        for k in 0..g {
            let (d, _) = richardson(1e-3, |s| {
                let mut c = ch.clone();
                let v = if which == 0 { &mut c.p } else { &mut c.q };
                v[k] += s;
                Ok(vec![tau_closed_form(periods, &c)?.log_ratio(&base)])
            })?;
            worst = worst.max((d[0] - analytic[k]).norm());
        }
    }
    Ok(worst)
}

/// `d/d lambda_j` of `ln tau - ln Theta[p;q](0)`, where `ln tau` comes from the
/// residues. It does not depend on the characteristic.
pub fn theta_free_logderiv(family: &DeformationFamily, j: usize) -> Result<C64> {
    let res = family.base_residues()?;
    let g = family.kernel.genus();
    let ch = &family.characteristic;
    let t0 = family.kernel.theta_constant(ch)?;
    let (d, _) = richardson(family.steps[j], |s| {
        let p = family.periods_with(j, s)?;
        let th = ThetaEngine::new(&p.b_matrix, THETA_TOL)?;
        Ok(vec![(th.value(&CVector::zeros(g), ch) / t0).ln()])
    })?;
    Ok(tau_logderiv_from_residues(&res, family.points(), j) - d[0])
}

/// Vector of Riemann constants for the base point `lambda_1`, as a half period.
#[derive(Debug, Clone, PartialEq)]
pub struct RiemannConstant {
    pub vector: CVector,
    pub characteristic: ThetaCharacteristic,
    /// Largest relative size of `Theta(U(D) + K)` over the test divisors.
    pub residual: f64,
}

/// Finds the half period `K` with `Theta(U(D) + K) = 0` for divisors `D` of
/// degree `g - 1` (the empty divisor in genus one).
pub fn riemann_constant(kernel: &KernelContext) -> Result<RiemannConstant> {
    let g = kernel.genus();
    let curve = &kernel.periods.curve;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let divisors = if g == 1 { 1 } else { 4 };
    let mut sums = Vec::with_capacity(divisors);
    for _ in 0..divisors {
        let mut s = CVector::zeros(g);
        let mut count = 0;
        while count + 1 < g {
            let l = curve.center() + C64::from_polar(rng.gen_range(0.3..1.2) * curve.radius(), rng.gen_range(0.0..2.0 * PI));
            if curve.nearest_branch(l).1 < 0.1 * curve.min_separation() {
                continue;
            }
            if let Ok(p) = kernel.point(rng.gen_range(0..curve.sheets()), l) {
                s += p.u;
                count += 1;
            }
        }
        sums.push(s);
    }
    let zero = ThetaCharacteristic::zero(g);
    let cands = ThetaCharacteristic::all_half_integer(g);
    let mut scores = vec![0.0f64; cands.len()];
    for s in &sums {
        let vals: Vec<f64> = cands
            .iter()
            .map(|c| kernel.theta.value(&(s + half_period(&kernel.periods.b_matrix, c)), &zero).norm())
            .collect();
        let scale = vals.iter().copied().fold(0.0, f64::max);
        for (sc, v) in scores.iter_mut().zip(&vals) {
            *sc = sc.max(v / scale);
        }
    }
    let best = (0..cands.len()).min_by(|a, b| scores[*a].total_cmp(&scores[*b])).unwrap();
    let k = RiemannConstant {
        vector: half_period(&kernel.periods.b_matrix, &cands[best]),
        characteristic: cands[best].clone(),
        residual: scores[best],
    };
    if curve.kind() == CoverKind::Hyperelliptic {
        // every (g+1)-subset of branch points must then give an even characteristic
        let n = curve.points().len();
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != g + 1 {
                continue;
            }
            let t: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
            if characteristic_for_subset(&kernel.periods, &k, &t)?.parity() != Some(0) {
                return Err(Error::HomologyDegenerate(format!("subset {t:?} gives an odd characteristic")));
            }
        }
    }
    Ok(k)
}

/// `B p + q`.
pub fn half_period(b: &CMatrix, ch: &ThetaCharacteristic) -> CVector {
    b * &ch.p + &ch.q
}

/// The characteristic with `B p + q = sum_{i in T} U(lambda_i) - K`, reduced to
/// entries in `{0, 1/2}`.
pub fn characteristic_for_subset(periods: &PeriodData, k: &RiemannConstant, subset: &[usize]) -> Result<ThetaCharacteristic> {
    let g = periods.genus();
    let mut v = -&k.vector;
    for &i in subset {
        v += periods.abel_branch(i)?;
    }
    let (m, n) = periods.lattice_coordinates(&v);
    let mut dev: f64 = 0.0;
    let mut half = |x: f64| -> f64 {
        let r = (2.0 * x).round();
        dev = dev.max((2.0 * x - r).abs());
        0.5 * r.rem_euclid(2.0)
    };
    let p: Vec<f64> = n.iter().map(|x| half(*x)).collect();
    let q: Vec<f64> = m.iter().map(|x| half(*x)).collect();
    if dev > 1e-6 {
        return Err(Error::ToleranceUnachievable(dev));
    }
    debug_assert_eq!(p.len(), g);
    Ok(ThetaCharacteristic::real(&p, &q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThomaeResult {
    pub subset: Vec<usize>,
    pub characteristic: ThetaCharacteristic,
    /// Sign on the right-hand side that minimizes the residual.
    pub sign: f64,
    pub residual: f64,
    pub theta4: C64,
    pub rhs: C64,
}

/// Relative residual of
/// `Theta[T](0)^4 = +-(det A)^2 / (2 pi i)^(2g) prod_{j<k in T} (lambda_j - lambda_k) prod_{j<k not in T} (lambda_j - lambda_k)`.
pub fn thomae_residual(kernel: &KernelContext, k: &RiemannConstant, subset: &[usize]) -> Result<ThomaeResult> {
    let periods = &kernel.periods;
    if periods.curve.kind() != CoverKind::Hyperelliptic {
        return Err(Error::NotHyperelliptic);
    }
    let g = periods.genus();
    let n = periods.curve.points().len();
    let mut t = subset.to_vec();
    t.sort_unstable();
    t.dedup();
    if t.len() != g + 1 || subset.len() != g + 1 || t.iter().any(|&i| i >= n) {
        return Err(Error::WrongSubsetSize {
            expected: g + 1,
            got: subset.len(),
        });
    }
    let ch = characteristic_for_subset(periods, k, &t)?;
    if ch.parity() != Some(0) {
        return Err(Error::CharacteristicNotEven);
    }
    let theta4 = kernel.theta.value(&CVector::zeros(g), &ch).powi(4);
    let pts = periods.curve.points();
    let mut rhs = periods.a_matrix.determinant().powi(2) / C64::new(0.0, 2.0 * PI).powi(2 * g as i32);
    for j in 0..n {
        for l in j + 1..n {
            if t.contains(&j) == t.contains(&l) {
                rhs *= pts[j] - pts[l];
            }
        }
    }
    let plus = (theta4 - rhs).norm();
    let minus = (theta4 + rhs).norm();
    let (sign, err) = if plus <= minus { (1.0, plus) } else { (-1.0, minus) };
    Ok(ThomaeResult {
        subset: t,
        characteristic: ch,
        sign,
        residual: err / theta4.norm().max(rhs.norm()),
        theta4,
        rhs,
    })
}

/// Which half of the characteristic a scan moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanParameter {
    P,
    Q,
}

/// Line `p_index` (or `q_index`) from `from` to `to`, the other entries fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanLine {
    pub vary: ScanParameter,
    pub index: usize,
    pub from: f64,
    pub to: f64,
    pub samples: usize,
}

impl ScanLine {
    pub fn at(&self, base: &ThetaCharacteristic, t: f64) -> ThetaCharacteristic {
        let mut c = base.clone();
        match self.vary {
            ScanParameter::P => c.p[self.index] = C64::new(t, 0.0),
            ScanParameter::Q => c.q[self.index] = C64::new(t, 0.0),
        }
        c
    }

    pub fn parameter(&self, i: usize) -> f64 {
        self.from + (self.to - self.from) * i as f64 / (self.samples - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub param: f64,
    pub theta_abs: f64,
    /// `NaN` for cyclic covers, whose tau prefactor is not known in closed form.
    pub tau_abs: f64,
    pub min_singular: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MalgrangeScan {
    pub rows: Vec<ScanRow>,
    pub theta_zeros: Vec<f64>,
    pub tau_zeros: Vec<f64>,
    /// Point where the numerator of `Psi` is sampled.
    pub probe: C64,
}

impl MalgrangeScan {
    /// Largest distance between matched zeros of `|Theta|` and `|tau|`;
    /// infinite when the counts differ.
    pub fn zero_mismatch(&self) -> f64 {
        if self.theta_zeros.len() != self.tau_zeros.len() {
            return f64::INFINITY;
        }
        self.theta_zeros
            .iter()
            .zip(&self.tau_zeros)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Whether the smallest singular value strictly decreases over the last
    /// five samples before `zero` (after it, if no samples precede it).
    pub fn singular_decreases_towards(&self, zero: f64) -> bool {
        let before: Vec<f64> = self.rows.iter().filter(|r| r.param < zero).map(|r| r.min_singular).collect();
        let seq: Vec<f64> = if before.len() >= 5 {
            before[before.len() - 5..].to_vec()
        } else {
            self.rows.iter().rev().filter(|r| r.param > zero).map(|r| r.min_singular).collect()
        };
        if seq.len() < 5 {
            return false;
        }
        let seq = &seq[seq.len() - 5..];
        seq.windows(2).all(|w| w[1] < w[0])
    }
}

/// Tabulates `|Theta[p;q](0)|`, `|tau|` and the smallest singular value of
/// `Theta[p;q](0) Psi(probe)` along a line, and locates zeros.
pub fn malgrange_scan(kernel: &KernelContext, base: &ThetaCharacteristic, line: &ScanLine) -> Result<MalgrangeScan> {
    let g = kernel.genus();
    if line.samples < 3 {
        return Err(Error::Config("scan needs at least 3 samples".into()));
    }
    if line.index >= g || base.genus() != g {
        return Err(Error::DimensionMismatch(format!("scan index {} for genus {}", line.index, g)));
    }
    let curve = &kernel.periods.curve;
    let hyper = curve.kind() == CoverKind::Hyperelliptic;
    let probe = scan_probe(curve);
    let prefactor = hyper.then(|| {
        let t = tau_from_parts(&kernel.periods, C64::new(1.0, 0.0));
        t.det_factor * t.vandermonde_factor
    });
    let zero = CVector::zeros(g);
    let rows: Vec<ScanRow> = (0..line.samples)
        .into_par_iter()
        .map(|i| {
            let t = line.parameter(i);
            let ch = line.at(base, t);
            let th = kernel.theta.value(&zero, &ch);
            let num = numerator_at_infinity(kernel, &ch, probe)?;
            let sv = num.svd(false, false).singular_values;
            Ok(ScanRow {
                param: t,
                theta_abs: th.norm(),
                tau_abs: prefactor.map_or(f64::NAN, |f| (f * th).norm()),
                min_singular: sv.iter().copied().fold(f64::INFINITY, f64::min),
            })
        })
        .collect::<Result<_>>()?;
    let theta_scale = rows.iter().map(|r| r.theta_abs).fold(0.0, f64::max);
    let tau_scale = rows.iter().map(|r| r.tau_abs).fold(0.0, f64::max);
    let mut theta_zeros = Vec::new();
    let mut tau_zeros = Vec::new();
    let last = rows.len() - 1;
    for i in 0..rows.len() {
        let lo = if i == 0 { 0 } else { i - 1 };
        let hi = (i + 1).min(last);
        if rows[i].theta_abs > rows[lo].theta_abs || rows[i].theta_abs > rows[hi].theta_abs {
            continue;
        }
        let (a, b) = (rows[lo].param.min(rows[hi].param), rows[lo].param.max(rows[hi].param));
        let theta_at = |t: f64| kernel.theta.eval(&zero, &line.at(base, t));
        let t = newton_on_line(kernel, base, line, rows[i].param, a, b);
        if theta_at(t).value.norm() <= 1e-10 * theta_scale && !theta_zeros.iter().any(|z: &f64| (z - t).abs() < 1e-9) {
            theta_zeros.push(t);
            if let Some(f) = prefactor {
                let tz = golden_minimum(|s| (f * theta_at(s).value).norm(), a, b);
                if (f * theta_at(tz).value).norm() <= 1e-10 * tau_scale {
                    tau_zeros.push(tz);
                }
            }
        }
    }
    Ok(MalgrangeScan {
        rows,
        theta_zeros,
        tau_zeros,
        probe,
    })
}

/// A point well inside the configuration and away from every branch point.
fn scan_probe(curve: &CurveModel) -> C64 {
    let mut best = (curve.center(), -1.0);
    for k in 0..24 {
        let z = curve.center() + C64::from_polar(0.6 * curve.radius(), 0.3 + 2.0 * PI * k as f64 / 24.0);
        let d = curve.nearest_branch(z).1;
        if d > best.1 {
            best = (z, d);
        }
    }
    best.0
}

/// Newton iteration for a zero of `t -> Theta[p(t);q(t)](0)` on the real line.
fn newton_on_line(kernel: &KernelContext, base: &ThetaCharacteristic, line: &ScanLine, t0: f64, a: f64, b: f64) -> f64 {
    let g = kernel.genus();
    let zero = CVector::zeros(g);
    let mut t = t0;
    for _ in 0..60 {
        let ch = line.at(base, t);
        let ev = kernel.theta.eval(&zero, &ch);
        let d = match line.vary {
            ScanParameter::Q => ev.gradient[line.index],
            ScanParameter::P => {
                (&kernel.periods.b_matrix * &ev.gradient)[line.index] + C64::new(0.0, 2.0 * PI) * ch.q[line.index] * ev.value
            }
        };
        if d.norm() == 0.0 {
            break;
        }
        let step = (d.conj() * ev.value).re / d.norm_sqr();
        let next = (t - step).clamp(a, b);
        if (next - t).abs() < 1e-16 * (1.0 + t.abs()) {
            t = next;
            break;
        }
        t = next;
    }
    t
}

/// Golden-section search for the minimum of `f` on `[a, b]`.
fn golden_minimum<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-14 * (1.0 + a.abs().max(b.abs())) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Relative residual of
/// `1/2 tr(Psi_lambda Psi^-1)^2 = 1/Theta[p;q](0) sum_kl d_k d_l Theta[p;q](0) U'_k U'_l
///  + sum_kl d_k d_l ln Theta[S](U(P) - U(P*)) U'_k(P) U'_l(P*)`
/// at the two lifts `P`, `P*` of `lambda`, for hyperelliptic curves.
pub fn trace_identity_residual(psi: &PsiEvaluator, lambda: C64) -> Result<f64> {
    if psi.sheets() != 2 {
        return Err(Error::NotHyperelliptic);
    }
    let l = psi.evaluate_with_derivative(lambda)?.log_derivative()?;
    let lhs = 0.5 * (&l * &l).trace();
    let k = &psi.kernel;
    let g = k.genus();
    let pts: Vec<KernelPoint> = psi.points(lambda)?;
    let du0 = k.periods.du(pts[0].lambda, pts[0].w);
    let du1 = k.periods.du(pts[1].lambda, pts[1].w);
    let jet = k.theta.jet(&CVector::zeros(g), &psi.characteristic);
    let first = (du0.transpose() * &jet.hessian * &du0)[(0, 0)] / jet.value;
    let s = k.theta.jet(&(&pts[0].u - &pts[1].u), &k.odd.characteristic);
    let log_hess = &s.hessian / s.value - (&s.gradient * s.gradient.transpose()) / (s.value * s.value);
    let second = (du0.transpose() * log_hess * &du1)[(0, 0)];
    let rhs = first + second;
    Ok((lhs - rhs).norm() / lhs.norm().max(rhs.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rh::measure_all;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn legendre() -> CurveModel {
        CurveModel::hyperelliptic(&[c(-2., 0.), c(-1., 0.), c(1., 0.), c(2., 0.)]).unwrap()
    }

    fn family(p: f64, q: f64) -> DeformationFamily {
        DeformationFamily::new(legendre(), ThetaCharacteristic::real(&[p], &[q])).unwrap()
    }

    #[test]
    fn richardson_is_fourth_order() {
        let (d, change) = richardson(1e-2, |s| Ok(vec![C64::new(1.3 + s, 0.0).exp()])).unwrap();
        assert!((d[0] - 1.3f64.exp()).norm() < 1e-9);
        assert!(change > 0.0);
    }

    #[test]
    fn schlesinger_genus_one() {
        let r = schlesinger_residual(&family(0.1, 0.1)).unwrap();
        assert!(r.max_off_diagonal() < 1e-6, "{}", r.max_off_diagonal());
        assert!(r.max_diagonal() < 1e-6, "{}", r.max_diagonal());
    }

    #[test]
    fn family_guards() {
        let odd = ThetaCharacteristic::from_bits(&[1], &[1]);
        assert!(matches!(DeformationFamily::new(legendre(), odd.clone()), Err(Error::StencilCrossesThetaDivisor)));
        assert!(matches!(family(0.1, 0.1).with_characteristic(odd), Err(Error::StencilCrossesThetaDivisor)));
        let wide = family(0.1, 0.1).with_step(1.0);
        assert!(matches!(wide.curve_with(1, 1.999), Err(Error::StencilDegenerate(_))));
        assert!(matches!(
            DeformationFamily::new(legendre(), ThetaCharacteristic::real(&[0.1, 0.1], &[0.0, 0.0])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn tau_log_derivative_genus_one() {
        let r = tau_logderiv_residuals(&family(0.1, 0.1)).unwrap();
        assert!(r.max_residual() < 1e-6, "{:?}", r.residuals);
        assert!(tau_logderiv_residual(&family(0.27, -0.4), 2).unwrap() < 1e-6);
    }

    #[test]
    fn tau_components_multiply() {
        let f = family(0.2, 0.3);
        let t = tau_closed_form(&f.kernel.periods, &f.characteristic).unwrap();
        assert!((t.value - t.det_factor * t.vandermonde_factor * t.theta_factor).norm() < 1e-14 * t.value.norm());
        let odd = ThetaCharacteristic::from_bits(&[1], &[1]);
        assert!(matches!(tau_closed_form(&f.kernel.periods, &odd), Err(Error::OnThetaDivisor(_))));
    }

    #[test]
    fn tau_depends_on_characteristic_through_theta_only() {
        let f = family(0.15, -0.35);
        assert!(pq_derivative_residual(&f.kernel.periods, &f.characteristic).unwrap() < 1e-7);
    }

    #[test]
    fn theta_free_part_is_the_prefactor() {
        let f = family(0.1, 0.1);
        let g = f.with_characteristic(ThetaCharacteristic::real(&[0.31], &[-0.2])).unwrap();
        let pts = f.points();
        for j in 0..4 {
            let a = theta_free_logderiv(&f, j).unwrap();
            let b = theta_free_logderiv(&g, j).unwrap();
            assert!((a - b).norm() < 1e-6);
            let det = richardson(f.steps[j], |s| {
                let p = f.periods_with(j, s).unwrap();
                Ok(vec![(p.a_matrix.determinant() / f.kernel.periods.a_matrix.determinant()).ln()])
            })
            .unwrap()
            .0[0];
            let van: C64 = (0..4).filter(|&k| k != j).map(|k| 1.0 / (pts[j] - pts[k])).sum();
            assert!((a - (-0.5 * det - 0.125 * van)).norm() < 1e-6);
        }
    }

    #[test]
    fn diagonal_solution_tau() {
        let f = family(0.1, 0.1);
        let k = riemann_constant(&f.kernel).unwrap();
        let t = vec![0, 1];
        let ch = characteristic_for_subset(&f.kernel.periods, &k, &t).unwrap();
        let fam = f.with_characteristic(ch).unwrap();
        let res = fam.base_residues().unwrap();
        for j in 0..4 {
            let direct = tau_logderiv_from_residues(&res, fam.points(), j);
            assert!((direct - tau_product_logderiv(fam.points(), &t, j)).norm() < 1e-6);
        }
        let rep = measure_all(&fam.base_psi().unwrap()).unwrap();
        let (subset, r) = crate::rh::diagonal_residual(&fam.base_psi().unwrap(), &rep, c(0.2, 0.9)).unwrap();
        assert!(r < 1e-10);
        assert!(subset == t || subset == vec![2, 3]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn product_formula_log_derivative(x in proptest::collection::vec(-3.0..3.0f64, 6), mask in 0usize..64) {
            let pts: Vec<C64> = x.iter().enumerate().map(|(i, v)| c(*v, i as f64)).collect();
            let t: Vec<usize> = (0..6).filter(|j| mask & (1 << j) != 0).collect();
            let h = 1e-6;
            for j in 0..6 {
                let mut a = pts.clone();
                let mut b = pts.clone();
                a[j] += h;
                b[j] -= h;
                let fd = (tau_product_formula(&a, &t) / tau_product_formula(&b, &t)).ln() / (2.0 * h);
                prop_assert!((fd - tau_product_logderiv(&pts, &t, j)).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn riemann_constant_genus_one_is_odd() {
        let f = family(0.1, 0.1);
        let k = riemann_constant(&f.kernel).unwrap();
        assert_eq!(k.characteristic.parity(), Some(1));
        assert!(k.residual < 1e-12);
    }

    #[test]
    fn thomae_genus_one() {
        let f = family(0.1, 0.1);
        let k = riemann_constant(&f.kernel).unwrap();
        for t in [[0, 1], [0, 2], [1, 3]] {
            let r = thomae_residual(&f.kernel, &k, &t).unwrap();
            assert!(r.residual < 1e-8, "{t:?} {}", r.residual);
        }
        assert!(matches!(
            thomae_residual(&f.kernel, &k, &[0]),
            Err(Error::WrongSubsetSize { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn scan_finds_odd_point() {
        let f = family(0.5, 0.1);
        let line = ScanLine {
            vary: ScanParameter::Q,
            index: 0,
            from: 0.0,
            to: 1.0,
            samples: 41,
        };
        let s = malgrange_scan(&f.kernel, &ThetaCharacteristic::real(&[0.5], &[0.0]), &line).unwrap();
        assert_eq!(s.theta_zeros.len(), 1);
        assert!((s.theta_zeros[0] - 0.5).abs() < 1e-10);
        assert!(s.zero_mismatch() < 1e-8);
        assert!(s.singular_decreases_towards(0.5));
        let at = s.rows.iter().find(|r| (r.param - 0.5).abs() < 1e-12).unwrap();
        assert!(at.min_singular < 1e-10);
    }

    #[test]
    fn scan_without_real_zero() {
        let f = family(0.1, 0.1);
        let line = ScanLine {
            vary: ScanParameter::Q,
            index: 0,
            from: 0.0,
            to: 1.0,
            samples: 21,
        };
        let s = malgrange_scan(&f.kernel, &ThetaCharacteristic::real(&[0.0], &[0.0]), &line).unwrap();
        assert!(s.theta_zeros.is_empty());
        assert!(s.rows.iter().all(|r| r.theta_abs > 1e-3));
    }

    #[test]
    fn scan_along_p() {
        let f = family(0.1, 0.1);
        let line = ScanLine {
            vary: ScanParameter::P,
            index: 0,
            from: 0.2,
            to: 0.9,
            samples: 15,
        };
        let s = malgrange_scan(&f.kernel, &ThetaCharacteristic::real(&[0.0], &[0.5]), &line).unwrap();
        assert_eq!(s.theta_zeros.len(), 1);
        assert!((s.theta_zeros[0] - 0.5).abs() < 1e-10);
        assert!(s.zero_mismatch() < 1e-8);
    }

    #[test]
    fn trace_identity_genus_one() {
        let psi = family(0.1, 0.1).base_psi().unwrap();
        for l in [c(0.3, 0.7), c(-1.4, -0.6), c(2.5, 1.5)] {
            assert!(trace_identity_residual(&psi, l).unwrap() < 1e-5);
        }
    }
}
