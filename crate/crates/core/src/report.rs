//! Pipelines behind the command line and the report they produce.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Mode, Prepared, RunConfig};
use crate::curve::{CoverKind, CurveModel};
use crate::error::{Error, Result};
use crate::isomon::{
    malgrange_scan, pq_derivative_residual, richardson, riemann_constant, schlesinger_residual,
    tau_closed_form, tau_logderiv_residuals, thomae_residual, trace_identity_residual, DeformationFamily, ScanRow, TauValue,
};
use crate::kernels::{fay_trisecant_residual, szego_determinant_residual, KernelContext, KernelPoint};
use crate::periods::PeriodData;
use crate::quadrature::QuadratureSettings;
use crate::rh::{
    det_residual, measure_all, normalization_residual, ode_residual, predicted_monodromies_hyperelliptic,
    residue_matrices, MonodromyCalibration, PsiEvaluator,
};
use crate::theta::ThetaCharacteristic;
use crate::{CMatrix, CVector, C64};

pub const CSV_HEADER: &str = "param,theta_abs,tau_abs,min_singular";

/// Bounds for identities that hold exactly, independent of configured tolerances.
const EXACT_TOL: f64 = 1e-10;
const MONODROMY_TOL: f64 = 1e-8;
const FAY_TOL: f64 = 1e-9;
const THOMAE_TOL: f64 = 1e-8;
const SCAN_TOL: f64 = 1e-8;

const SAMPLE_POINTS: usize = 20;
const FAY_SETS: usize = 10;

type Matrix = Vec<Vec<C64>>;

fn matrix(m: &CMatrix) -> Matrix {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonodromySection {
    pub base: C64,
    pub order: Vec<usize>,
    pub permutations: Vec<Vec<usize>>,
    pub measured: Vec<Matrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Vec<Matrix>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<MonodromyCalibration>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanSummary {
    pub samples: usize,
    pub probe: C64,
    pub theta_zeros: Vec<f64>,
    pub tau_zeros: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub tool: ToolInfo,
    pub seed: u64,
    pub config: RunConfig,
    pub genus: usize,
    pub sheets: usize,
    pub b_matrix: Matrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monodromy: Option<MonodromySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residues: Option<Vec<Matrix>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<TauValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanSummary>,
    pub checks: Vec<Check>,
    pub timings: Vec<Timing>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A report plus the scan table, if any.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub rows: Option<Vec<ScanRow>>,
}

/// A module error with the pipeline stage it came from.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct RunError {
    pub stage: &'static str,
    pub source: Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, RunError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, RunError> {
        self.map_err(|source| RunError { stage, source })
    }
}

struct Clock {
    timings: Vec<Timing>,
    last: Instant,
}

impl Clock {
    fn new() -> Self {
        Clock {
            timings: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(Timing {
            stage: stage.into(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

/// Writes the scan table with the fixed header.
pub fn write_csv<W: Write>(rows: &[ScanRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Random `lambda` in a box around the branch points, away from them and from
/// the cut rays below them (lifts are reached along vertical rays from infinity).
pub fn sample_lambdas(curve: &CurveModel, rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    let r = 1.5 * curve.radius().max(curve.min_separation());
    let keep = 0.1 * curve.min_separation();
    let near_cut = |l: C64| {
        curve
            .points()
            .iter()
            .any(|&b| curve.height(l) < curve.height(b) && (curve.abscissa(l) - curve.abscissa(b)).abs() < keep)
    };
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let l = curve.center() + C64::new(rng.gen_range(-r..r), rng.gen_range(-r..r));
        if curve.nearest_branch(l).1 > keep && !near_cut(l) {
            out.push(l);
        }
    }
    out
}

/// Random points of the surface, on random sheets.
pub fn sample_points(kernel: &KernelContext, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<KernelPoint>> {
    let curve = &kernel.periods.curve;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let l = sample_lambdas(curve, rng, 1)[0];
        match kernel.point(rng.gen_range(0..curve.sheets()), l) {
            Ok(p) => out.push(p),
            Err(Error::TooCloseToBranchPoint(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Largest Fay trisecant and Szego determinant residuals over random point sets.
pub fn fay_residuals(kernel: &KernelContext, ch: &ThetaCharacteristic, rng: &mut ChaCha8Rng, sets: usize) -> Result<(f64, f64)> {
    let g = kernel.genus();
    let n = kernel.periods.curve.sheets();
    let mut fay: f64 = 0.0;
    let mut det: f64 = 0.0;
    for _ in 0..sets {
        let pts = sample_points(kernel, rng, 4)?;
        let z = CVector::from_fn(g, |_, _| C64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2)));
        fay = fay.max(fay_trisecant_residual(kernel, [&pts[0], &pts[1], &pts[2], &pts[3]], &z)?);
        let ps = sample_points(kernel, rng, n)?;
        let qs = sample_points(kernel, rng, n)?;
        det = det.max(szego_determinant_residual(kernel, ch, &ps, &qs)?);
    }
    Ok((fay, det))
}

/// Largest entry of `rauch_derivative - dB/d lambda_j` over all `j`, the
/// derivative taken by Richardson extrapolation.
pub fn rauch_residual(family: &DeformationFamily) -> Result<f64> {
    let periods = &family.kernel.periods;
    let mut worst: f64 = 0.0;
    for j in 0..family.points().len() {
        let (d, _) = richardson(family.steps[j], |s| Ok(family.periods_with(j, s)?.b_matrix.iter().copied().collect()))?;
        let exact = periods.rauch_derivative(j)?;
        let diff = exact.iter().zip(&d).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    Ok(worst)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn run_scan(config: &RunConfig, prepared: &Prepared, kernel: &KernelContext, clock: &mut Clock) -> std::result::Result<(Vec<Check>, ScanSummary, Vec<ScanRow>), RunError> {
    let line = config.scan.as_ref().expect("validated");
    let scan = malgrange_scan(kernel, &prepared.characteristic, line).stage("scan")?;
    clock.lap("scan");
    let mut checks = Vec::new();
    if prepared.curve.kind() == CoverKind::Hyperelliptic {
        checks.push(Check::new("scan_zero_mismatch", scan.zero_mismatch(), SCAN_TOL));
    }
    let bad = scan.theta_zeros.iter().filter(|&&z| !scan.singular_decreases_towards(z)).count();
    checks.push(Check::new("scan_singular_not_decreasing", bad as f64, 0.0));
    let summary = ScanSummary {
        samples: scan.rows.len(),
        probe: scan.probe,
        theta_zeros: scan.theta_zeros.clone(),
        tau_zeros: scan.tau_zeros.clone(),
    };
    Ok((checks, summary, scan.rows))
}

/// Runs the pipeline selected by `config.mode`.
pub fn run(config: &RunConfig) -> std::result::Result<Outcome, RunError> {
    let mut clock = Clock::new();
    let prepared = config.prepare().stage("config")?;
    let tol = config.tolerances;
    let curve = &prepared.curve;
    let ch = &prepared.characteristic;
    let hyper = curve.kind() == CoverKind::Hyperelliptic;
    let g = curve.genus();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let settings = QuadratureSettings {
        tolerance: tol.quadrature,
        ..QuadratureSettings::default()
    };
    let periods = PeriodData::with_settings(curve, settings).stage("periods")?;
    let kernel = KernelContext::new(periods).stage("kernels")?;
    clock.lap("periods");
    let ev = kernel.theta.eval(&CVector::zeros(g), ch);
    let mut checks = vec![
        Check::new("quadrature_error", kernel.periods.quadrature_error, tol.quadrature),
        Check::new("theta_truncation", ev.error_bound, tol.theta),
    ];
    let mut report = Report {
        tool: ToolInfo {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        seed: config.seed,
        config: config.clone(),
        genus: g,
        sheets: curve.sheets(),
        b_matrix: matrix(&kernel.periods.b_matrix),
        monodromy: None,
        residues: None,
        tau: None,
        scan: None,
        checks: Vec::new(),
        timings: Vec::new(),
    };

    if config.mode == Mode::Scan {
        let (c, summary, rows) = run_scan(config, &prepared, &kernel, &mut clock)?;
        checks.extend(c);
        report.scan = Some(summary);
        report.checks = checks;
        report.timings = clock.timings;
        return Ok(Outcome { report, rows: Some(rows) });
    }

    if ev.value.norm() <= tol.divisor {
        return Err(Error::OnThetaDivisor(ev.value.norm())).stage("characteristic");
    }
    let psi = PsiEvaluator::new(kernel.clone(), ch.clone(), prepared.lambda0).stage("psi")?;
    let lambdas = sample_lambdas(curve, &mut rng, SAMPLE_POINTS);
    let det = lambdas
        .par_iter()
        .map(|&l| det_residual(&psi, l))
        .collect::<Result<Vec<_>>>()
        .stage("det")?;
    checks.push(Check::new("det_psi", det.iter().copied().fold(0.0, f64::max), EXACT_TOL));
    checks.push(Check::new("normalization", normalization_residual(&psi).stage("normalization")?, EXACT_TOL));
    clock.lap("psi");

    let rep = measure_all(&psi).stage("monodromy")?;
    let mut section = MonodromySection {
        base: rep.base,
        order: rep.order.clone(),
        permutations: rep.permutations.clone(),
        measured: rep.matrices.iter().map(matrix).collect(),
        predicted: None,
        calibration: None,
    };
    checks.push(Check::new("monodromy_det", rep.det_residual(), MONODROMY_TOL));
    checks.push(Check::new("monodromy_product", rep.product_residual(), MONODROMY_TOL));
    let bad_support = if rep.support_matches() { 0.0 } else { 1.0 };
    checks.push(Check::new("monodromy_support_mismatch", bad_support, 0.0));
    if hyper {
        let zero = ThetaCharacteristic::zero(g);
        let psi0 = PsiEvaluator::new(kernel.clone(), zero.clone(), prepared.lambda0).stage("calibration")?;
        let rep0 = measure_all(&psi0).stage("calibration")?;
        let fitted = MonodromyCalibration::fit(&rep0.matrices, &predicted_monodromies_hyperelliptic(&zero, g));
        let table = predicted_monodromies_hyperelliptic(ch, g);
        let value = match &fitted {
            Ok(cal) => cal.residual(&rep.matrices, &table),
            Err(_) => f64::INFINITY,
        };
        checks.push(Check::new("monodromy_table", value, MONODROMY_TOL));
        if let Ok(cal) = fitted {
            section.predicted = Some(cal.apply(&table).iter().map(matrix).collect());
            section.calibration = Some(cal);
        }
    }
    report.monodromy = Some(section);
    clock.lap("monodromy");

    let res = residue_matrices(&psi).stage("residues")?;
    checks.push(Check::new("residue_refinement", res.refinement, tol.residual));
    checks.push(Check::new(
        "residue_trace",
        res.matrices.iter().map(|a| a.trace().norm()).fold(0.0, f64::max),
        tol.residual,
    ));
    let ode = lambdas
        .par_iter()
        .map(|&l| ode_residual(&psi, &res, l))
        .collect::<Result<Vec<_>>>()
        .stage("ode")?;
    checks.push(Check::new("ode", ode.iter().copied().fold(0.0, f64::max), tol.residual));
    report.residues = Some(res.matrices.iter().map(matrix).collect());
    clock.lap("residues");

    if hyper {
        report.tau = Some(tau_closed_form(&kernel.periods, ch).stage("tau")?);
    }

    if config.mode == Mode::Verify {
        checks.extend(verify(&prepared, &kernel, &mut rng, tol.residual, &mut clock)?);
    }
    report.checks = checks;
    report.timings = clock.timings;
    Ok(Outcome { report, rows: None })
}

fn verify(
    prepared: &Prepared,
    kernel: &KernelContext,
    rng: &mut ChaCha8Rng,
    residual: f64,
    clock: &mut Clock,
) -> std::result::Result<Vec<Check>, RunError> {
    let curve = &prepared.curve;
    let ch = &prepared.characteristic;
    let hyper = curve.kind() == CoverKind::Hyperelliptic;
    let g = curve.genus();
    let mut checks = Vec::new();

    let (fay, det) = fay_residuals(kernel, ch, rng, FAY_SETS).stage("fay")?;
    checks.push(Check::new("fay_trisecant", fay, FAY_TOL));
    checks.push(Check::new("szego_determinant", det, FAY_TOL));
    clock.lap("fay");

    let family = DeformationFamily::new(curve.clone(), ch.clone()).stage("family")?;
    if hyper {
        checks.push(Check::new("rauch", rauch_residual(&family).stage("rauch")?, residual));
    }
    let sch = schlesinger_residual(&family).stage("schlesinger")?;
    checks.push(Check::new("schlesinger_off_diagonal", sch.max_off_diagonal(), residual));
    checks.push(Check::new("schlesinger_diagonal", sch.max_diagonal(), residual));
    clock.lap("schlesinger");

    if hyper {
        let psi = family.base_psi().stage("trace identity")?;
        let trace = sample_lambdas(curve, rng, 5)
            .par_iter()
            .map(|&l| trace_identity_residual(&psi, l))
            .collect::<Result<Vec<_>>>()
            .stage("trace identity")?;
        checks.push(Check::new("trace_identity", trace.iter().copied().fold(0.0, f64::max), residual));
        let tau = tau_logderiv_residuals(&family).stage("tau")?;
        checks.push(Check::new("tau_logderiv", tau.max_residual(), residual));
        checks.push(Check::new("tau_pq_derivative", pq_derivative_residual(&kernel.periods, ch).stage("tau")?, residual));
        clock.lap("tau");

        checks.push(Check::new("half_periods", kernel.periods.half_period_residual().stage("half periods")?, THOMAE_TOL));
        let k = riemann_constant(kernel).stage("riemann constant")?;
        let n = curve.points().len();
        let worst = subsets(n, g + 1)
            .par_iter()
            .map(|t| thomae_residual(kernel, &k, t).map(|r| r.residual))
            .collect::<Result<Vec<_>>>()
            .stage("thomae")?
            .into_iter()
            .fold(0.0, f64::max);
        checks.push(Check::new("thomae", worst, THOMAE_TOL));
        clock.lap("thomae");
    }
    Ok(checks)
}
