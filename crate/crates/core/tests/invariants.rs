use proptest::prelude::*;

use szego_rh::config::{examples, Number};
use szego_rh::curve::CurveModel;
use szego_rh::kernels::KernelContext;
use szego_rh::periods::PeriodData;
use szego_rh::rh::{det_residual, measure_all, normalization_residual, residue_matrices, NormalizationPoint, PsiEvaluator};
use szego_rh::theta::ThetaCharacteristic;
use szego_rh::{Error, C64};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Real branch points with gaps in `[0.5, 2]`, jittered off the axis.
fn branch_points(n: usize) -> impl Strategy<Value = Vec<C64>> {
    (proptest::collection::vec(0.5..2.0f64, n), proptest::collection::vec(-0.3..0.3f64, n)).prop_map(|(gaps, jitter)| {
        let mut x = -gaps.iter().sum::<f64>() / 2.0;
        gaps.iter()
            .zip(&jitter)
            .map(|(g, j)| {
                x += g;
                c(x, *j)
            })
            .collect()
    })
}

fn legendre() -> KernelContext {
    let pts = [-2.0, -1.0, 1.0, 2.0].map(|x| c(x, 0.0));
    KernelContext::new(PeriodData::new(&CurveModel::hyperelliptic(&pts).unwrap()).unwrap()).unwrap()
}

fn off_divisor(k: &KernelContext, p: f64, q: f64) -> Option<ThetaCharacteristic> {
    let ch = ThetaCharacteristic::real(&[p], &[q]);
    k.theta_constant(&ch).ok().filter(|t| t.norm() > 1e-3).map(|_| ch)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn riemann_matrix(pts in prop_oneof![branch_points(4), branch_points(6)]) {
        let pd = PeriodData::new(&CurveModel::hyperelliptic(&pts).unwrap()).unwrap();
        let b = &pd.b_matrix;
        prop_assert!(pd.asymmetry < 1e-9);
        let y = nalgebra::DMatrix::<f64>::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)].im);
        prop_assert!(y.cholesky().is_some());
        let id = &pd.normalization * &pd.a_matrix;
        for i in 0..id.nrows() {
            for j in 0..id.ncols() {
                let e = if i == j { 1.0 } else { 0.0 };
                prop_assert!((id[(i, j)] - e).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn involution_negates_abel_map(x in -3.0..3.0f64, y in 0.3..3.0f64) {
        let k = legendre();
        let p = k.point(0, c(x, y)).unwrap();
        let q = k.point(1, c(x, y)).unwrap();
        prop_assert!(k.periods.lattice_residual(&(&p.u + &q.u)) < 1e-10);
    }

    #[test]
    fn psi_is_unimodular_and_normalized(p in 0.0..1.0f64, q in 0.0..1.0f64, x in -3.0..3.0f64, y in 0.2..3.0f64) {
        let k = legendre();
        if let Some(ch) = off_divisor(&k, p, q) {
            let psi = PsiEvaluator::new(k, ch, NormalizationPoint::Infinity).unwrap();
            prop_assert!(det_residual(&psi, c(x, y)).unwrap() < 1e-10);
            prop_assert!(normalization_residual(&psi).unwrap() < 1e-10);
        }
    }

    #[test]
    fn monodromies_are_quasi_permutations(p in 0.0..1.0f64, q in 0.0..1.0f64) {
        let k = legendre();
        if let Some(ch) = off_divisor(&k, p, q) {
            let rep = measure_all(&PsiEvaluator::new(k, ch, NormalizationPoint::Infinity).unwrap()).unwrap();
            prop_assert!(rep.support_matches());
            prop_assert!(rep.det_residual() < 1e-8);
            prop_assert!(rep.product_residual() < 1e-8);
        }
    }

    #[test]
    fn residues_have_quarter_spectrum(p in 0.0..1.0f64, q in 0.0..1.0f64) {
        let k = legendre();
        if let Some(ch) = off_divisor(&k, p, q) {
            let res = residue_matrices(&PsiEvaluator::new(k, ch, NormalizationPoint::Infinity).unwrap()).unwrap();
            prop_assert!(res.trace_residual() < 1e-8);
            prop_assert!(res.sum_residual() < 1e-8);
            for a in &res.matrices {
                prop_assert!((a.determinant() + 1.0 / 16.0).norm() < 1e-6);
            }
        }
    }
}

proptest! {
    #[test]
    fn parity_of_half_integer_characteristics(a in proptest::collection::vec(0u8..2, 3), b in proptest::collection::vec(0u8..2, 3)) {
        let ch = ThetaCharacteristic::from_bits(&a, &b);
        prop_assert!(ch.is_half_integer());
        let dot: u32 = a.iter().zip(&b).map(|(x, y)| (*x as u32) * (*y as u32)).sum();
        prop_assert_eq!(ch.parity(), Some((dot % 2) as u8));
    }

    #[test]
    fn characteristic_length_must_match_genus(len in 0usize..5) {
        let mut config = examples().swap_remove(1).1;
        config.characteristic.p = vec![Number::Real(0.1); len];
        let r = config.prepare();
        if len == 2 {
            prop_assert!(r.is_ok());
        } else {
            prop_assert!(matches!(r, Err(Error::DimensionMismatch(_))));
        }
    }

    #[test]
    fn tolerances_must_be_positive(t in -1.0..0.0f64, which in 0usize..4) {
        let mut config = examples().swap_remove(0).1;
        let tol = &mut config.tolerances;
        *[&mut tol.quadrature, &mut tol.theta, &mut tol.divisor, &mut tol.residual].into_iter().nth(which).unwrap() = t;
        prop_assert!(matches!(config.prepare(), Err(Error::Config(_))));
    }
}
