//! Decomposition of lifted paths into pieces on which `w` is known in closed form.

use super::{principal_root, CurveModel, PathStart, SurfacePath};
use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadratureSettings};
use crate::C64;

/// Step size as a fraction of the distance to the nearest branch point.
const STEP_FRACTION: f64 = 0.5;
/// A segment heading into branch point `j` switches to the local parameter once
/// it is this fraction of `separation_of(j)` away.
const TERMINAL_FRACTION: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    /// Straight step `a -> b` short enough for the local product formula.
    Regular { a: C64, b: C64, w_a: C64 },
    /// From `a` straight into branch point `branch`, parameterized by
    /// `lambda = lambda_j + (a - lambda_j) u^N`.
    Terminal { a: C64, branch: usize, w_a: C64 },
    /// From infinity on `sheet` down the `up` ray to `b`.
    FromInfinity { b: C64, sheet: usize },
}

/// One piece of a lifted path, parameterized by `t` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    kind: Kind,
    reversed: bool,
}

impl Piece {
    /// `(lambda, w, d lambda / dt)` at parameter `t` (in traversal direction).
    pub fn eval(&self, curve: &CurveModel, t: f64) -> (C64, C64, C64) {
        let s = if self.reversed { 1.0 - t } else { t };
        let sign = if self.reversed { -1.0 } else { 1.0 };
        match self.kind {
            Kind::Regular { a, b, w_a } => {
                let lam = a + (b - a) * s;
                (lam, curve.continue_local(a, w_a, lam), (b - a) * sign)
            }
            Kind::Terminal { a, branch, w_a } => {
                let n = curve.sheets();
                let pj = curve.points()[branch];
                let u = 1.0 - s;
                let un = u.powi(n as i32);
                let lam = pj + (a - pj) * un;
                let inv_n = 1.0 / n as f64;
                let mut w = w_a * u;
                for (i, p) in curve.points().iter().enumerate() {
                    if i != branch {
                        w *= principal_root(C64::new(1.0, 0.0) + (lam - a) / (a - p), inv_n);
                    }
                }
                let dlam = -(a - pj) * (n as f64 * u.powi(n as i32 - 1));
                (lam, w, dlam * sign)
            }
            Kind::FromInfinity { b, sheet } => {
                let l = curve.outer_radius();
                let up = curve.up();
                let lam = b + up * (l * (1.0 - s) / s);
                (lam, curve.w(lam, sheet), -up * (l / (s * s)) * sign)
            }
        }
    }

    /// Value of `w` where the traversal ends (zero at a branch point).
    pub fn end_w(&self, curve: &CurveModel) -> C64 {
        let t = if self.reversed { 0.0 } else { 1.0 };
        self.endpoint(curve, t).1
    }

    /// `lambda` where the traversal ends.
    pub fn end_lambda(&self, curve: &CurveModel) -> C64 {
        let t = if self.reversed { 0.0 } else { 1.0 };
        self.endpoint(curve, t).0
    }

    /// `(lambda, w)` at raw parameter `s` in `{0, 1}` where `eval` may be singular.
    fn endpoint(&self, curve: &CurveModel, s: f64) -> (C64, C64) {
        match self.kind {
            Kind::Regular { a, b, w_a } => {
                if s == 0.0 {
                    (a, w_a)
                } else {
                    (b, curve.continue_local(a, w_a, b))
                }
            }
            Kind::Terminal { a, branch, w_a } => {
                if s == 0.0 {
                    (a, w_a)
                } else {
                    (curve.points()[branch], C64::new(0.0, 0.0))
                }
            }
            Kind::FromInfinity { b, sheet } => {
                if s == 0.0 {
                    (C64::new(f64::INFINITY, f64::INFINITY), C64::new(f64::INFINITY, 0.0))
                } else {
                    (b, curve.w(b, sheet))
                }
            }
        }
    }

    pub fn is_from_infinity(&self) -> bool {
        matches!(self.kind, Kind::FromInfinity { .. })
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.kind, Kind::Terminal { .. })
    }

    pub fn reversed(&self) -> bool {
        self.reversed
    }
}

impl CurveModel {
    /// Splits a lifted path into pieces with closed-form `w`.
    pub fn pieces(&self, path: &SurfacePath) -> Result<Vec<Piece>> {
        let first = *path.vertices.first().ok_or(Error::PathStartMismatch)?;
        let mut out = Vec::new();
        let (mut x, mut w) = match path.start {
            PathStart::Sheet(k) => {
                self.check_sheet(k)?;
                self.check_clear(first)?;
                (first, self.w(first, k))
            }
            PathStart::Infinity(k) => {
                self.check_sheet(k)?;
                let top = self.top_point(first);
                out.push(Piece {
                    kind: Kind::FromInfinity { b: top, sheet: k },
                    reversed: false,
                });
                let w_top = self.w(top, k);
                let (w_first, mut seg) = self.segment(top, w_top, first, None)?;
                out.append(&mut seg);
                (first, w_first)
            }
            PathStart::BranchPoint { index, sheet } => {
                self.check_sheet(sheet)?;
                if index >= self.points().len() {
                    return Err(Error::DimensionMismatch(format!("branch index {index}")));
                }
                let w_first = self.w(first, sheet);
                let (_, seg) = self.segment(first, w_first, self.points()[index], Some(index))?;
                out.extend(seg.into_iter().rev().map(|p| Piece {
                    reversed: !p.reversed,
                    ..p
                }));
                (first, w_first)
            }
        };
        for &v in &path.vertices[1..] {
            let (w_next, mut seg) = self.segment(x, w, v, None)?;
            out.append(&mut seg);
            x = v;
            w = w_next;
        }
        if let Some(j) = path.end_branch {
            let (_, mut seg) = self.segment(x, w, self.points()[j], Some(j))?;
            out.append(&mut seg);
        }
        Ok(out)
    }

    /// Pieces of the polyline `start -> vertices...` continuing `w` from `w_start`.
    pub fn pieces_from(&self, start: C64, w_start: C64, vertices: &[C64]) -> Result<Vec<Piece>> {
        let mut out = Vec::new();
        let (mut x, mut w) = (start, w_start);
        for &v in vertices {
            let (w_next, mut seg) = self.segment(x, w, v, None)?;
            out.append(&mut seg);
            x = v;
            w = w_next;
        }
        Ok(out)
    }

    fn segment(&self, from: C64, w_from: C64, to: C64, terminal: Option<usize>) -> Result<(C64, Vec<Piece>)> {
        let mut pieces = Vec::new();
        let mut x = from;
        let mut w = w_from;
        for _ in 0..1_000_000 {
            if let Some(j) = terminal {
                let pj = self.points()[j];
                if (x - pj).norm() <= TERMINAL_FRACTION * self.separation_of(j) {
                    pieces.push(Piece {
                        kind: Kind::Terminal { a: x, branch: j, w_a: w },
                        reversed: false,
                    });
                    return Ok((C64::new(0.0, 0.0), pieces));
                }
            }
            let remaining = (to - x).norm();
            if remaining == 0.0 {
                return Ok((w, pieces));
            }
            let (j, d) = self.nearest_branch(x);
            if d < self.exclusion_radius() {
                return Err(Error::PathTooCloseToBranchPoint { index: j, distance: d });
            }
            let step = STEP_FRACTION * d;
            let y = if remaining <= step { to } else { x + (to - x) * (step / remaining) };
            // the far endpoint must also respect the exclusion radius
            let (jy, dy) = self.nearest_branch(y);
            if terminal.is_none() && dy < self.exclusion_radius() {
                return Err(Error::PathTooCloseToBranchPoint { index: jy, distance: dy });
            }
            pieces.push(Piece {
                kind: Kind::Regular { a: x, b: y, w_a: w },
                reversed: false,
            });
            w = self.continue_local(x, w, y);
            x = y;
        }
        Err(Error::ContinuationAmbiguous(format!("{from} -> {to}: too many steps")))
    }

    /// `(lambda, w)` at the end of a lifted path, by the local product formula.
    pub fn path_end(&self, path: &SurfacePath) -> Result<(C64, C64)> {
        let pieces = self.pieces(path)?;
        let last = pieces.last().ok_or(Error::PathStartMismatch)?;
        Ok((last.end_lambda(self), last.end_w(self)))
    }

    /// Integrates `f(lambda, w, out) d lambda` along a lifted path.
    ///
    /// `f` writes `dim` components of the coefficient of `d lambda`. Pieces are
    /// integrated in order and summed left to right.
    pub fn integrate_path<F>(
        &self,
        path: &SurfacePath,
        dim: usize,
        f: &F,
        settings: &QuadratureSettings,
    ) -> Result<(Vec<C64>, f64)>
    where
        F: Fn(C64, C64, &mut [C64]) + Sync,
    {
        let pieces = self.pieces(path)?;
        self.integrate_pieces(&pieces, dim, f, settings)
    }

    pub fn integrate_pieces<F>(
        &self,
        pieces: &[Piece],
        dim: usize,
        f: &F,
        settings: &QuadratureSettings,
    ) -> Result<(Vec<C64>, f64)>
    where
        F: Fn(C64, C64, &mut [C64]) + Sync,
    {
        let mut total = vec![C64::new(0.0, 0.0); dim];
        let mut err = 0.0;
        for piece in pieces {
            let g = |t: f64, out: &mut [C64]| {
                let (lam, w, dl) = piece.eval(self, t);
                f(lam, w, out);
                for o in out.iter_mut() {
                    *o *= dl;
                }
            };
            let r = integrate(&g, dim, 0.0, 1.0, settings)?;
            for (t, v) in total.iter_mut().zip(r.value) {
                *t += v;
            }
            err += r.error;
        }
        Ok((total, err))
    }
}
