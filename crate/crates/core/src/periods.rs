//! Period matrices, normalized holomorphic differentials and the Abel map.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::curve::{CoverKind, CurveModel, HomologyBasis, PathStart, SurfacePath, SurfacePoint};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureSettings;
use crate::{CMatrix, CVector, C64};

/// The holomorphic differential `lambda^power d lambda / w^w_power`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Monomial {
    pub power: usize,
    pub w_power: usize,
}

/// Holomorphic differentials of the form `lambda^a d lambda / w^b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialBasis {
    pub monomials: Vec<Monomial>,
}

impl DifferentialBasis {
    /// `lambda^(k-1) d lambda / w` for hyperelliptic curves; for `w^N = P_n`,
    /// all `(a, b)` with `1 <= b < N` and `0 <= a <= b n / N - 2`.
    pub fn for_curve(curve: &CurveModel) -> Self {
        let n = curve.points().len();
        let big_n = curve.sheets();
        let mut monomials = Vec::new();
        for b in 1..big_n {
            let top = (b * n / big_n) as isize - 2;
            for a in 0..=top.max(-1) {
                if a >= 0 {
                    monomials.push(Monomial {
                        power: a as usize,
                        w_power: b,
                    });
                }
            }
        }
        debug_assert_eq!(monomials.len(), curve.genus());
        DifferentialBasis { monomials }
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    /// Coefficients of `d lambda` at `(lambda, w)`.
    pub fn eval(&self, lambda: C64, w: C64, out: &mut [C64]) {
        let inv_w = 1.0 / w;
        for (o, m) in out.iter_mut().zip(&self.monomials) {
            *o = lambda.powu(m.power as u32) * inv_w.powu(m.w_power as u32);
        }
    }

    /// Values and lambda-derivatives, given `w'/w = (1/N) sum 1/(lambda - lambda_j)`.
    pub fn eval_with_derivative(&self, lambda: C64, w: C64, log_w_prime: C64) -> (Vec<C64>, Vec<C64>) {
        let inv_w = 1.0 / w;
        let mut v = Vec::with_capacity(self.len());
        let mut dv = Vec::with_capacity(self.len());
        for m in &self.monomials {
            let val = lambda.powu(m.power as u32) * inv_w.powu(m.w_power as u32);
            let mut d = -val * log_w_prime * m.w_power as f64;
            if m.power > 0 {
                d += lambda.powu(m.power as u32 - 1) * inv_w.powu(m.w_power as u32) * m.power as f64;
            }
            v.push(val);
            dv.push(d);
        }
        (v, dv)
    }
}

/// An Abel-map value with the path that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AbelValue {
    pub vector: CVector,
    pub path: SurfacePath,
}

/// Period matrices and the normalized Abel map of a curve.
#[derive(Debug, Clone)]
pub struct PeriodData {
    pub curve: CurveModel,
    pub homology: HomologyBasis,
    pub differentials: DifferentialBasis,
    /// `A[j][k]` = integral of the `j`-th raw differential over `a_k`.
    pub a_matrix: CMatrix,
    /// Integrals of the raw differentials over the b-cycles.
    pub b_raw: CMatrix,
    /// `C = A^{-1}`: `dU = C v`.
    pub normalization: CMatrix,
    /// Symmetrized b-period matrix of the normalized basis.
    pub b_matrix: CMatrix,
    /// `max |B - B^T|` before symmetrization.
    pub asymmetry: f64,
    /// Sum of quadrature error estimates over all cycle integrals.
    pub quadrature_error: f64,
    /// Abel map at infinity on each sheet (base point `lambda_1`).
    pub infinity_values: Vec<CVector>,
    pub base_index: usize,
    pub settings: QuadratureSettings,
}

impl PeriodData {
    /// Builds the homology basis and all period data.
    pub fn new(curve: &CurveModel) -> Result<Self> {
        let basis = curve.homology_basis()?;
        period_matrices(curve, &basis)
    }

    /// Same as `new` with explicit quadrature settings.
    pub fn with_settings(curve: &CurveModel, settings: QuadratureSettings) -> Result<Self> {
        let basis = curve.homology_basis()?;
        period_matrices_with(curve, &basis, settings)
    }

    pub fn genus(&self) -> usize {
        self.curve.genus()
    }

    /// Raw differentials at `(lambda, w)`.
    pub fn raw(&self, lambda: C64, w: C64) -> CVector {
        let mut out = vec![C64::new(0.0, 0.0); self.genus()];
        self.differentials.eval(lambda, w, &mut out);
        CVector::from_vec(out)
    }

    /// `dU/d lambda` at `(lambda, w)`.
    pub fn du(&self, lambda: C64, w: C64) -> CVector {
        &self.normalization * self.raw(lambda, w)
    }

    /// `dU/d lambda` and its lambda-derivative at `(lambda, w)`.
    pub fn du_with_derivative(&self, lambda: C64, w: C64) -> (CVector, CVector) {
        let lw: C64 = self.curve.points().iter().map(|p| 1.0 / (lambda - p)).sum::<C64>()
            / self.curve.sheets() as f64;
        let (v, dv) = self.differentials.eval_with_derivative(lambda, w, lw);
        (
            &self.normalization * CVector::from_vec(v),
            &self.normalization * CVector::from_vec(dv),
        )
    }

    /// Integral of `dU` along a lifted path.
    pub fn integrate_du(&self, path: &SurfacePath) -> Result<CVector> {
        let g = self.genus();
        let f = |l: C64, w: C64, out: &mut [C64]| self.differentials.eval(l, w, out);
        let (raw, _) = self.curve.integrate_path(path, g, &f, &self.settings)?;
        Ok(&self.normalization * CVector::from_vec(raw))
    }

    /// Abel map along a path starting at the base branch point.
    pub fn abel_map(&self, path: &SurfacePath) -> Result<AbelValue> {
        match path.start {
            PathStart::BranchPoint { index, .. } if index == self.base_index => Ok(AbelValue {
                vector: self.integrate_du(path)?,
                path: path.clone(),
            }),
            _ => Err(Error::PathStartMismatch),
        }
    }

    /// Value of `U` at infinity on `sheet`.
    pub fn abel_infinity(&self, sheet: usize) -> &CVector {
        &self.infinity_values[sheet]
    }

    /// `U` at the point reached from infinity on `sheet` by the canonical
    /// path ending at `lambda`, together with `w` there.
    pub fn abel_from_infinity(&self, sheet: usize, lambda: C64) -> Result<(CVector, C64)> {
        let path = SurfacePath::from_infinity(sheet, lambda);
        let (_, w) = self.curve.path_end(&path)?;
        Ok((&self.infinity_values[sheet] + self.integrate_du(&path)?, w))
    }

    /// `U` at a surface point given in the cut-system labeling.
    pub fn abel_point(&self, point: &SurfacePoint) -> Result<AbelValue> {
        let target = self.curve.w(point.lambda, point.sheet);
        for k in 0..self.curve.sheets() {
            let path = SurfacePath::from_infinity(k, point.lambda);
            let (_, w) = self.curve.path_end(&path)?;
            if (w - target).norm() < 1e-6 * target.norm() {
                return Ok(AbelValue {
                    vector: &self.infinity_values[k] + self.integrate_du(&path)?,
                    path,
                });
            }
        }
        Err(Error::ContinuationAmbiguous(format!("{}", point.lambda)))
    }

    /// Canonical path from infinity on sheet 0 into branch point `j`.
    pub fn branch_path(&self, j: usize) -> SurfacePath {
        branch_path(&self.curve, 0, j)
    }

    /// `U(lambda_j)` along [`branch_path`](Self::branch_path).
    pub fn abel_branch(&self, j: usize) -> Result<CVector> {
        Ok(&self.infinity_values[0] + self.integrate_du(&self.branch_path(j))?)
    }

    /// Real lattice coordinates `(m, n)` with `z = m + B n`.
    pub fn lattice_coordinates(&self, z: &CVector) -> (Vec<f64>, Vec<f64>) {
        lattice_coordinates(&self.b_matrix, z)
    }

    /// Distance of `z` from the lattice `Z^g + B Z^g`, measured in lattice coordinates.
    pub fn lattice_residual(&self, z: &CVector) -> f64 {
        let (m, n) = self.lattice_coordinates(z);
        m.iter()
            .chain(n.iter())
            .map(|x| (x - x.round()).abs())
            .fold(0.0, f64::max)
    }

    /// `dU_k/d kappa` at branch point `j` for `kappa = sqrt(lambda - lambda_j)`.
    pub fn kappa_derivative(&self, j: usize) -> Result<CVector> {
        if self.curve.kind() != CoverKind::Hyperelliptic {
            return Err(Error::NotSimpleBranchPoint(j));
        }
        let pts = self.curve.points();
        let pj = pts[j];
        let rest: C64 = pts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, p)| pj - p)
            .product();
        let s = rest.sqrt();
        let raw = CVector::from_iterator(
            self.genus(),
            self.differentials.monomials.iter().map(|m| 2.0 * pj.powu(m.power as u32) / s),
        );
        Ok(&self.normalization * raw)
    }

    /// Derivative of the b-period matrix with respect to `lambda_j`:
    /// `pi i (dU_k/d kappa)(dU_l/d kappa)`.
    pub fn rauch_derivative(&self, j: usize) -> Result<CMatrix> {
        let u = self.kappa_derivative(j)?;
        Ok(&u * u.transpose() * C64::new(0.0, PI))
    }

    /// `res_{lambda_j} (dU_k/d lambda)(dU_l/d lambda)` by the trapezoid rule on a circle.
    pub fn residue_product(&self, j: usize, nodes: usize) -> Result<CMatrix> {
        if self.curve.kind() != CoverKind::Hyperelliptic {
            return Err(Error::NotSimpleBranchPoint(j));
        }
        let g = self.genus();
        let pj = self.curve.points()[j];
        let r = 0.4 * self.curve.separation_of(j);
        let mut acc = CMatrix::zeros(g, g);
        for m in 0..nodes {
            let z = C64::from_polar(r, 2.0 * PI * (m as f64 + 0.5) / nodes as f64);
            let lam = pj + z;
            // (dU/d lambda)^2 is rational: w^2 = P(lambda)
            let v = CVector::from_iterator(
                g,
                self.differentials.monomials.iter().map(|mm| lam.powu(mm.power as u32)),
            );
            let u = &self.normalization * v;
            acc += (&u * u.transpose()) * (z / self.curve.polynomial(lam));
        }
        Ok(acc / C64::new(nodes as f64, 0.0))
    }
}

impl PeriodData {
    /// Expected `U(lambda_j)` modulo the lattice for hyperelliptic curves:
    /// `0`, `e/2` with `e = (1,..,1)`, then for `j = 1..g`
    /// `U(lambda_{2j+1}) = B e_j/2 + sum_{k>=j} e_k/2` and
    /// `U(lambda_{2j+2}) = B e_j/2 + sum_{k>j} e_k/2`.
    pub fn half_period_table(&self) -> Result<Vec<CVector>> {
        if self.curve.kind() != CoverKind::Hyperelliptic {
            return Err(Error::NotHyperelliptic);
        }
        let g = self.genus();
        let half = C64::new(0.5, 0.0);
        let mut out = vec![CVector::zeros(g), CVector::from_element(g, half)];
        for j in 0..g {
            let bcol = self.b_matrix.column(j).into_owned() * half;
            let tail = |from: usize| CVector::from_fn(g, |k, _| if k >= from { half } else { C64::new(0.0, 0.0) });
            out.push(&bcol + tail(j));
            out.push(&bcol + tail(j + 1));
        }
        Ok(out)
    }

    /// Largest lattice-coordinate deviation of computed `U(lambda_j)` from the table.
    pub fn half_period_residual(&self) -> Result<f64> {
        let table = self.half_period_table()?;
        let computed: Vec<CVector> = (0..table.len())
            .into_par_iter()
            .map(|j| self.abel_branch(j))
            .collect::<Result<_>>()?;
        Ok(table
            .iter()
            .zip(&computed)
            .map(|(t, u)| self.lattice_residual(&(u - t)))
            .fold(0.0, f64::max))
    }
}

/// Canonical path from infinity on `sheet` into branch point `j`.
pub fn branch_path(curve: &CurveModel, sheet: usize, j: usize) -> SurfacePath {
    let pj = curve.points()[j];
    SurfacePath::from_infinity(sheet, pj + curve.up() * (0.3 * curve.separation_of(j))).ending_at_branch(j)
}

/// Real lattice coordinates `(m, n)` with `z = m + B n`.
pub fn lattice_coordinates(b: &CMatrix, z: &CVector) -> (Vec<f64>, Vec<f64>) {
    let g = z.len();
    let y = nalgebra::DMatrix::<f64>::from_fn(g, g, |i, j| b[(i, j)].im);
    let x = nalgebra::DMatrix::<f64>::from_fn(g, g, |i, j| b[(i, j)].re);
    let zi = nalgebra::DVector::<f64>::from_fn(g, |i, _| z[i].im);
    let zr = nalgebra::DVector::<f64>::from_fn(g, |i, _| z[i].re);
    let n = y.lu().solve(&zi).unwrap_or_else(|| nalgebra::DVector::zeros(g));
    let m = zr - x * &n;
    (m.iter().copied().collect(), n.iter().copied().collect())
}

/// Computes `A`, `B` and the Abel-map constants for a given homology basis.
pub fn period_matrices(curve: &CurveModel, basis: &HomologyBasis) -> Result<PeriodData> {
    period_matrices_with(curve, basis, QuadratureSettings::default())
}

pub fn period_matrices_with(curve: &CurveModel, basis: &HomologyBasis, settings: QuadratureSettings) -> Result<PeriodData> {
    let diffs = DifferentialBasis::for_curve(curve);
    let g = curve.genus();
    let f = |l: C64, w: C64, out: &mut [C64]| diffs.eval(l, w, out);
    let gen_integrals: Vec<(Vec<C64>, f64)> = basis
        .generators
        .par_iter()
        .map(|p| curve.integrate_path(p, g, &f, &settings))
        .collect::<Result<_>>()?;
    let quadrature_error = gen_integrals.iter().map(|r| r.1).sum();
    let ngen = basis.generators.len();
    let gmat = CMatrix::from_fn(g, ngen, |i, k| gen_integrals[k].0[i]);
    let combine = |cycles: &[Vec<i64>]| {
        CMatrix::from_fn(g, g, |i, k| {
            let mut s = C64::new(0.0, 0.0);
            for (m, c) in cycles[k].iter().enumerate() {
                if *c != 0 {
                    s += gmat[(i, m)] * *c as f64;
                }
            }
            s
        })
    };
    let a_matrix = combine(&basis.a_cycles);
    let b_raw = combine(&basis.b_cycles);
    let sv = a_matrix.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-12 * smax) {
        return Err(Error::HomologyDegenerate(format!("a-period matrix singular ({smin:.3e})")));
    }
    let normalization = a_matrix
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::HomologyDegenerate("a-period matrix singular".into()))?;
    let b_full = &normalization * &b_raw;
    let asymmetry = (&b_full - b_full.transpose()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let b_matrix = (&b_full + b_full.transpose()) * C64::new(0.5, 0.0);
    let y = nalgebra::DMatrix::<f64>::from_fn(g, g, |i, j| b_matrix[(i, j)].im);
    if asymmetry > 1e-6 * (1.0 + b_matrix.iter().map(|z| z.norm()).fold(0.0, f64::max))
        || y.cholesky().is_none()
    {
        return Err(Error::NotRiemannMatrix);
    }
    let mut data = PeriodData {
        curve: curve.clone(),
        homology: basis.clone(),
        differentials: diffs,
        a_matrix,
        b_raw,
        normalization,
        b_matrix,
        asymmetry,
        quadrature_error,
        infinity_values: Vec::new(),
        base_index: 0,
        settings,
    };
    let infinity_values: Vec<CVector> = (0..curve.sheets())
        .into_par_iter()
        .map(|k| data.integrate_du(&branch_path(curve, k, 0)).map(|v| -v))
        .collect::<Result<_>>()?;
    data.infinity_values = infinity_values;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn legendre() -> PeriodData {
        let curve = CurveModel::hyperelliptic(&[c(-2., 0.), c(-1., 0.), c(1., 0.), c(2., 0.)]).unwrap();
        PeriodData::new(&curve).unwrap()
    }

    fn agm(mut a: f64, mut b: f64) -> f64 {
        for _ in 0..60 {
            let (na, nb) = ((a + b) / 2.0, (a * b).sqrt());
            a = na;
            b = nb;
        }
        a
    }

    fn complete_k(k: f64) -> f64 {
        PI / (2.0 * agm(1.0, (1.0 - k * k).sqrt()))
    }

    #[test]
    fn legendre_period_matches_agm() {
        let pd = legendre();
        // cross-ratio of (-2,-1,1,2) sends the curve to Legendre form with k^2 = 1/9
        let k: f64 = 1.0 / 3.0;
        let tau = complete_k((1.0 - k * k).sqrt()) / complete_k(k);
        let b = pd.b_matrix[(0, 0)];
        assert!(b.re.abs() < 1e-12, "{b}");
        assert!((b.im - tau).abs() < 1e-11, "{b} vs {tau}");
    }

    #[test]
    fn normalized_a_periods_by_requadrature() {
        let pts = [c(-3., 0.), c(-2., 0.), c(-0.5, 0.), c(0.7, 0.), c(1.9, 0.), c(3.1, 0.)];
        let curve = CurveModel::hyperelliptic(&pts).unwrap();
        let pd = PeriodData::new(&curve).unwrap();
        for (k, cyc) in pd.homology.a_cycles.iter().enumerate() {
            let mut total = CVector::zeros(2);
            for (m, coef) in cyc.iter().enumerate() {
                if *coef != 0 {
                    total += pd.integrate_du(&pd.homology.generators[m]).unwrap() * C64::new(*coef as f64, 0.0);
                }
            }
            for j in 0..2 {
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((total[j] - expect).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn base_point_maps_to_zero() {
        let pd = legendre();
        assert!(pd.abel_branch(0).unwrap().norm() < 1e-12);
    }

    #[test]
    fn abel_map_requires_base_start() {
        let pd = legendre();
        let path = SurfacePath::new(0, vec![c(0., 1.), c(0., 2.)]);
        assert_eq!(pd.abel_map(&path).unwrap_err(), Error::PathStartMismatch);
        let from_base = SurfacePath {
            start: PathStart::BranchPoint { index: 0, sheet: 0 },
            vertices: vec![c(-2.0, 0.5)],
            end_branch: Some(1),
        };
        let u = pd.abel_map(&from_base).unwrap().vector;
        let half = CVector::from_element(1, C64::new(0.5, 0.0));
        assert!(pd.lattice_residual(&(u - half)) < 1e-10);
    }

    #[test]
    fn involution_negates_abel_map() {
        let pd = legendre();
        let lam = c(0.4, 0.9);
        let p = SurfacePoint { lambda: lam, sheet: 0, near_branch: None };
        let q = SurfacePoint { lambda: lam, sheet: 1, near_branch: None };
        let s = pd.abel_point(&p).unwrap().vector + pd.abel_point(&q).unwrap().vector;
        assert!(pd.lattice_residual(&s) < 1e-10);
    }

    #[test]
    fn rauch_is_symmetric_rank_one_and_matches_residue() {
        let pts = [c(-3., 0.), c(-2., 0.), c(-0.5, 0.), c(0.7, 0.), c(1.9, 0.), c(3.1, 0.)];
        let pd = PeriodData::new(&CurveModel::hyperelliptic(&pts).unwrap()).unwrap();
        for j in 0..6 {
            let r = pd.rauch_derivative(j).unwrap();
            assert!((&r - r.transpose()).norm() < 1e-14 * r.norm());
            let sv = r.clone().singular_values();
            assert!(sv.min() < 1e-12 * sv.max());
            let u = pd.kappa_derivative(j).unwrap();
            let res = pd.residue_product(j, 64).unwrap();
            // (dU/d kappa)^2 = 4 res (dU/d lambda)^2
            let diff = &u * u.transpose() - res * C64::new(4.0, 0.0);
            assert!(diff.norm() < 1e-10 * (u.norm() * u.norm()));
        }
    }

    #[test]
    fn half_period_table_holds() {
        let pd = legendre();
        assert!(pd.half_period_residual().unwrap() < 1e-9);
        let pts = [c(-3., 0.), c(-2., 0.), c(-0.5, 0.), c(0.7, 0.), c(1.9, 0.), c(3.1, 0.)];
        let pd = PeriodData::new(&CurveModel::hyperelliptic(&pts).unwrap()).unwrap();
        assert!(pd.half_period_residual().unwrap() < 1e-9);
        let pts = [c(-2., 0.3), c(-1., -0.5), c(0.2, 0.4), c(1.0, -0.3), c(1.8, 0.6), c(2.7, -0.2)];
        let pd = PeriodData::new(&CurveModel::hyperelliptic(&pts).unwrap()).unwrap();
        assert!(pd.half_period_residual().unwrap() < 1e-9);
    }

    #[test]
    fn symmetric_configuration_has_imaginary_b() {
        let pts = [c(-3., 0.), c(-1.5, 0.), c(1.5, 0.), c(3., 0.)];
        let pd = PeriodData::new(&CurveModel::hyperelliptic(&pts).unwrap()).unwrap();
        assert!(pd.b_matrix[(0, 0)].re.abs() < 1e-11);
    }

    #[test]
    fn cyclic_genus_four_periods() {
        let six: Vec<C64> = (0..6).map(|k| C64::from_polar(1.0, k as f64 * PI / 3.0 + 0.2)).collect();
        let pd = PeriodData::new(&CurveModel::cyclic(&six, 3).unwrap()).unwrap();
        assert_eq!(pd.b_matrix.nrows(), 4);
        assert!(pd.asymmetry < 1e-9, "{}", pd.asymmetry);
    }
}
