//! Hyperelliptic curves `w^2 = prod (lambda - lambda_j)` and cyclic covers
//! `w^N = prod (lambda - lambda_j)` realized as sheeted covers of the lambda-plane.
//!
//! Sheets are labeled through an explicit cut system:
//!
//! * hyperelliptic: straight cuts `[lambda_1, lambda_2], [lambda_3, lambda_4], ...`,
//!   sheet 0 behaving as `+lambda^(g+1)` at infinity;
//! * cyclic: a star of segments joining every branch point to an auxiliary
//!   point, sheet `k` equal to `exp(2 pi i k / N)` times the principal branch.
//!
//! Both labelings agree with the expansion at infinity, so sheets over a
//! neighbourhood of infinity carry the same labels in both descriptions.

mod continuation;
pub mod homology;

pub use continuation::Piece;
pub use homology::{Cycle, HomologyBasis};

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::C64;

/// Which family of plane curves a model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverKind {
    Hyperelliptic,
    Cyclic,
}

/// Branch points, number of sheets and ramification multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchConfiguration {
    pub points: Vec<C64>,
    pub cover_degree: usize,
    pub multiplicities: Vec<usize>,
}

impl BranchConfiguration {
    /// Genus from the Riemann–Hurwitz formula `g = sum(m_j)/2 - N + 1`.
    pub fn genus(&self) -> usize {
        let total: usize = self.multiplicities.iter().sum();
        total / 2 + 1 - self.cover_degree
    }
}

/// Local parameter `kappa = (lambda - lambda_j)^(1/(m_j+1))` at a branch point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalParameter {
    pub index: usize,
    pub kappa: C64,
}

/// A point of the curve: a lambda value together with a sheet label of the cut system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub lambda: C64,
    pub sheet: usize,
    pub near_branch: Option<LocalParameter>,
}

/// Where a lifted path begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStart {
    /// At the first vertex, on the given sheet.
    Sheet(usize),
    /// At the point at infinity on the given sheet; the path arrives at the first
    /// vertex along the straight ray pointing in the curve's `up` direction.
    Infinity(usize),
    /// At a branch point; the given sheet is the one reached at the first vertex.
    BranchPoint { index: usize, sheet: usize },
}

/// A polyline in the lambda-plane lifted to the curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePath {
    pub start: PathStart,
    pub vertices: Vec<C64>,
    /// The path terminates at this branch point after its last vertex.
    pub end_branch: Option<usize>,
}

impl SurfacePath {
    pub fn new(start_sheet: usize, vertices: Vec<C64>) -> Self {
        SurfacePath {
            start: PathStart::Sheet(start_sheet),
            vertices,
            end_branch: None,
        }
    }

    /// Canonical path from infinity on `sheet` straight down to `lambda`.
    pub fn from_infinity(sheet: usize, lambda: C64) -> Self {
        SurfacePath {
            start: PathStart::Infinity(sheet),
            vertices: vec![lambda],
            end_branch: None,
        }
    }

    pub fn ending_at_branch(mut self, index: usize) -> Self {
        self.end_branch = Some(index);
        self
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.start, PathStart::Sheet(_))
            && self.end_branch.is_none()
            && self.vertices.len() > 2
            && self.vertices.first() == self.vertices.last()
    }

    /// The same polyline traversed backwards; only defined for closed paths
    /// (the caller supplies the sheet at the new start).
    pub fn reversed(&self, start_sheet: usize) -> Self {
        let mut v = self.vertices.clone();
        v.reverse();
        SurfacePath::new(start_sheet, v)
    }
}

/// Immutable model of a branched cover of the lambda-sphere.
#[derive(Debug, Clone)]
pub struct CurveModel {
    config: BranchConfiguration,
    kind: CoverKind,
    genus: usize,
    center: C64,
    radius: f64,
    outer_radius: f64,
    star_point: C64,
    min_separation: f64,
    exclusion_radius: f64,
    up: C64,
}

impl CurveModel {
    /// Builds `w^2 = prod (lambda - lambda_j)` with `2g + 2` finite branch points.
    pub fn hyperelliptic(points: &[C64]) -> Result<Self> {
        let n = points.len();
        check_distinct(points)?;
        if n % 2 == 1 {
            return Err(Error::OddPointCount(n));
        }
        if n < 4 {
            return Err(Error::TooFewPoints(n));
        }
        let config = BranchConfiguration {
            points: points.to_vec(),
            cover_degree: 2,
            multiplicities: vec![1; n],
        };
        Ok(Self::assemble(config, CoverKind::Hyperelliptic))
    }

    /// Builds `w^N = prod (lambda - lambda_j)` with `n` divisible by `N`, so that
    /// infinity is unramified. `N = 2` yields the hyperelliptic model.
    pub fn cyclic(points: &[C64], degree: usize) -> Result<Self> {
        let n = points.len();
        check_distinct(points)?;
        if degree < 2 || !n.is_multiple_of(degree) || n == 0 {
            return Err(Error::DegreeMismatch { points: n, degree });
        }
        if degree == 2 {
            return Self::hyperelliptic(points);
        }
        let config = BranchConfiguration {
            points: points.to_vec(),
            cover_degree: degree,
            multiplicities: vec![degree - 1; n],
        };
        Ok(Self::assemble(config, CoverKind::Cyclic))
    }

    fn assemble(config: BranchConfiguration, kind: CoverKind) -> Self {
        let pts = &config.points;
        let n = pts.len();
        let center = pts.iter().sum::<C64>() / n as f64;
        let radius = pts.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
        let mut min_separation = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                min_separation = min_separation.min((pts[i] - pts[j]).norm());
            }
        }
        let genus = config.genus();
        let star_point = choose_star_point(pts, center, min_separation);
        let up = -choose_ray_direction(pts);
        CurveModel {
            config,
            kind,
            genus,
            center,
            radius,
            outer_radius: 2.0 * radius.max(min_separation),
            star_point,
            min_separation,
            exclusion_radius: 1e-3 * min_separation,
            up,
        }
    }

    /// Overrides the exclusion radius used by path checks.
    pub fn with_exclusion_radius(mut self, r: f64) -> Self {
        self.exclusion_radius = r;
        self
    }

    /// Overrides the direction from which canonical paths arrive from infinity
    /// (unit complex number). Deformation families pin this to the base curve.
    pub fn with_up_direction(mut self, up: C64) -> Self {
        self.up = up / up.norm();
        self
    }

    pub fn kind(&self) -> CoverKind {
        self.kind
    }
    pub fn genus(&self) -> usize {
        self.genus
    }
    pub fn sheets(&self) -> usize {
        self.config.cover_degree
    }
    pub fn points(&self) -> &[C64] {
        &self.config.points
    }
    pub fn config(&self) -> &BranchConfiguration {
        &self.config
    }
    pub fn center(&self) -> C64 {
        self.center
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    /// Radius of a disk around `center` containing every cut.
    pub fn outer_radius(&self) -> f64 {
        self.outer_radius
    }
    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }
    pub fn exclusion_radius(&self) -> f64 {
        self.exclusion_radius
    }
    pub fn up(&self) -> C64 {
        self.up
    }
    pub fn star_point(&self) -> Option<C64> {
        match self.kind {
            CoverKind::Cyclic => Some(self.star_point),
            CoverKind::Hyperelliptic => None,
        }
    }

    /// Height of `lambda` above the center, measured along `up`.
    pub fn height(&self, lambda: C64) -> f64 {
        ((lambda - self.center) * self.up.conj()).re
    }

    /// Coordinate of `lambda` transverse to `up` (grows to the right).
    pub fn abscissa(&self, lambda: C64) -> f64 {
        ((lambda - self.center) * (self.up * C64::new(0.0, -1.0)).conj()).re
    }

    /// Exponent `n / N` of the growth `w ~ lambda^(n/N)` at infinity.
    pub fn growth(&self) -> usize {
        self.config.points.len() / self.config.cover_degree
    }

    /// `prod_j (lambda - lambda_j)`.
    pub fn polynomial(&self, lambda: C64) -> C64 {
        self.config.points.iter().map(|p| lambda - p).product()
    }

    /// Distance to the nearest branch point and its index.
    pub fn nearest_branch(&self, lambda: C64) -> (usize, f64) {
        self.config
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (lambda - p).norm()))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    }

    /// Smallest distance from branch point `j` to any other branch point.
    pub fn separation_of(&self, j: usize) -> f64 {
        let pj = self.config.points[j];
        self.config
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, p)| (p - pj).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Value of `w` at `lambda` on `sheet` of the cut system.
    pub fn w(&self, lambda: C64, sheet: usize) -> C64 {
        let n = self.sheets();
        let base = match self.kind {
            CoverKind::Hyperelliptic => {
                let mut acc = C64::new(1.0, 0.0);
                for pair in self.config.points.chunks(2) {
                    let (a, b) = (pair[0], pair[1]);
                    acc *= (lambda - b) * ((lambda - a) / (lambda - b)).sqrt();
                }
                acc
            }
            CoverKind::Cyclic => {
                let c = self.star_point;
                let d = lambda - c;
                let mut acc = d.powu(self.growth() as u32);
                let inv_n = 1.0 / n as f64;
                for p in &self.config.points {
                    acc *= principal_root((lambda - p) / d, inv_n);
                }
                acc
            }
        };
        base * root_of_unity(sheet, n)
    }

    /// All sheet values of `w` over `lambda`.
    pub fn w_all(&self, lambda: C64) -> Vec<C64> {
        let w0 = self.w(lambda, 0);
        (0..self.sheets()).map(|k| w0 * root_of_unity(k, self.sheets())).collect()
    }

    /// Sheet label whose `w` value is nearest to `w`; `None` when the match is
    /// not unambiguous (nearest distance not below half of the runner-up).
    pub fn identify_sheet(&self, lambda: C64, w: C64) -> Option<usize> {
        let all = self.w_all(lambda);
        let mut d: Vec<(usize, f64)> = all.iter().enumerate().map(|(k, v)| (k, (v - w).norm())).collect();
        d.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if d.len() == 1 || d[0].1 < 0.5 * d[1].1 {
            Some(d[0].0)
        } else {
            None
        }
    }

    /// Continues `w` from `(a, w_a)` to `b` using the local product
    /// `w(b) = w(a) prod_j (1 + (b - a)/(a - lambda_j))^(1/N)`. Exact as long as
    /// `|b - a|` is below the distance from `a` to every branch point.
    pub fn continue_local(&self, a: C64, w_a: C64, b: C64) -> C64 {
        let inv_n = 1.0 / self.sheets() as f64;
        let step = b - a;
        let mut w = w_a;
        for p in &self.config.points {
            w *= principal_root(C64::new(1.0, 0.0) + step / (a - p), inv_n);
        }
        w
    }

    /// Number of sheets cycled by a small counterclockwise loop around branch point `j`:
    /// sheet `k` continues to sheet `k + shift (mod N)`.
    pub fn local_monodromy_shift(&self) -> usize {
        1
    }

    /// Continues a point along `path` by stepping with nearest-root matching.
    ///
    /// Each step is bounded by half the distance to the nearest branch point;
    /// a step is accepted when a single step and two half-steps select the same
    /// root and both selections are unambiguous, otherwise it is halved.
    pub fn continue_path(&self, path: &SurfacePath) -> Result<SurfacePoint> {
        self.continue_path_with(path, 0.5)
    }

    /// As [`continue_path`](Self::continue_path) with a custom step fraction.
    pub fn continue_path_with(&self, path: &SurfacePath, eta: f64) -> Result<SurfacePoint> {
        let (mut x, mut w, rest): (C64, C64, &[C64]) = match path.start {
            PathStart::Sheet(k) => {
                self.check_sheet(k)?;
                let x0 = *path.vertices.first().ok_or(Error::PathStartMismatch)?;
                self.check_clear(x0)?;
                (x0, self.w(x0, k), &path.vertices[1..])
            }
            PathStart::Infinity(k) => {
                self.check_sheet(k)?;
                let target = *path.vertices.first().ok_or(Error::PathStartMismatch)?;
                let top = self.top_point(target);
                (top, self.w(top, k), &path.vertices[..])
            }
            PathStart::BranchPoint { sheet, .. } => {
                self.check_sheet(sheet)?;
                let x0 = *path.vertices.first().ok_or(Error::PathStartMismatch)?;
                (x0, self.w(x0, sheet), &path.vertices[1..])
            }
        };
        for &target in rest {
            while (target - x).norm() > 0.0 {
                let (j, d) = self.nearest_branch(x);
                if d < self.exclusion_radius {
                    return Err(Error::PathTooCloseToBranchPoint { index: j, distance: d });
                }
                let mut h = ((target - x).norm()).min(eta * d);
                let dir = (target - x) / (target - x).norm();
                let mut accepted = None;
                for _ in 0..40 {
                    let y = if h >= (target - x).norm() { target } else { x + dir * h };
                    let mid = x + (y - x) * 0.5;
                    let full = self.nearest_root(y, w);
                    let half = self.nearest_root(mid, w).and_then(|wm| self.nearest_root(y, wm));
                    match (full, half) {
                        (Some(a), Some(b)) if (a - b).norm() <= 1e-9 * a.norm().max(1e-300) => {
                            accepted = Some((y, a));
                            break;
                        }
                        _ => h *= 0.5,
                    }
                }
                let (y, wy) = accepted.ok_or_else(|| Error::ContinuationAmbiguous(format!("{x}")))?;
                x = y;
                w = wy;
            }
        }
        let mut point = SurfacePoint {
            lambda: x,
            sheet: self
                .identify_sheet(x, w)
                .ok_or_else(|| Error::ContinuationAmbiguous(format!("{x}")))?,
            near_branch: None,
        };
        if let Some(j) = path.end_branch {
            let pj = self.config.points[j];
            let m = self.config.multiplicities[j] as f64 + 1.0;
            point.near_branch = Some(LocalParameter {
                index: j,
                kappa: principal_root(x - pj, 1.0 / m),
            });
        }
        Ok(point)
    }

    fn nearest_root(&self, y: C64, w: C64) -> Option<C64> {
        let all = self.w_all(y);
        let mut d: Vec<(C64, f64)> = all.into_iter().map(|v| (v, (v - w).norm())).collect();
        d.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if d.len() == 1 || d[0].1 < 0.5 * d[1].1 {
            Some(d[0].0)
        } else {
            None
        }
    }

    fn check_sheet(&self, k: usize) -> Result<()> {
        if k >= self.sheets() {
            return Err(Error::DimensionMismatch(format!("sheet {k} of {}", self.sheets())));
        }
        Ok(())
    }

    fn check_clear(&self, x: C64) -> Result<()> {
        let (j, d) = self.nearest_branch(x);
        if d < self.exclusion_radius {
            return Err(Error::PathTooCloseToBranchPoint { index: j, distance: d });
        }
        Ok(())
    }

    /// Point where the canonical ray from infinity towards `target` enters the
    /// disk of radius `outer_radius` (or `target` itself if it lies above it).
    pub fn top_point(&self, target: C64) -> C64 {
        let t = (self.outer_radius - self.height(target)).max(0.0);
        target + self.up * t
    }

    /// A fixed probe point above every branch point, used as a base for loops.
    pub fn probe_point(&self) -> C64 {
        self.center + self.up * self.outer_radius
    }
}

/// `z^e` on the principal branch.
pub fn principal_root(z: C64, e: f64) -> C64 {
    if z == C64::new(0.0, 0.0) {
        return z;
    }
    (z.ln() * e).exp()
}

/// `exp(2 pi i k / n)`.
pub fn root_of_unity(k: usize, n: usize) -> C64 {
    if k.is_multiple_of(n) {
        return C64::new(1.0, 0.0);
    }
    if 2 * (k % n) == n {
        return C64::new(-1.0, 0.0);
    }
    C64::from_polar(1.0, 2.0 * PI * (k % n) as f64 / n as f64)
}

fn check_distinct(points: &[C64]) -> Result<()> {
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if (points[i] - points[j]).norm() <= 1e-14 * (1.0 + points[i].norm()) {
                return Err(Error::DuplicateBranchPoint(i, j));
            }
        }
    }
    Ok(())
}

/// Direction of the ray cuts used by canonical paths. Prefers straight down and
/// otherwise the direction keeping lines through branch points furthest apart.
fn choose_ray_direction(points: &[C64]) -> C64 {
    let metric = |dir: C64| -> f64 {
        let mut m = f64::INFINITY;
        for (i, a) in points.iter().enumerate() {
            for (j, b) in points.iter().enumerate() {
                if i != j {
                    m = m.min(((b - a) * dir.conj()).im.abs());
                }
            }
        }
        m
    };
    let down = C64::new(0.0, -1.0);
    let mut best = (down, metric(down));
    for k in 1..36 {
        for sign in [1.0, -1.0] {
            let dir = down * C64::from_polar(1.0, sign * k as f64 * PI / 72.0);
            let m = metric(dir);
            if m > best.1 * (1.0 + 1e-6) + 1e-300 {
                best = (dir, m);
            }
        }
    }
    best.0
}

/// Center of the star cut system: a point near the centroid off every line
/// through two branch points.
fn choose_star_point(points: &[C64], center: C64, sep: f64) -> C64 {
    let mut best = (center, -1.0);
    for k in 0..64 {
        let r = 0.37 * sep * (1.0 + 0.13 * k as f64);
        let cand = center + C64::from_polar(r.min(0.45 * sep * 4.0), 0.7 + 2.399963 * k as f64);
        let mut m = f64::INFINITY;
        for (i, a) in points.iter().enumerate() {
            m = m.min((cand - a).norm());
            for b in points.iter().skip(i + 1) {
                let dir = (b - a) / (b - a).norm();
                m = m.min(((cand - a) * dir.conj()).im.abs());
            }
        }
        if m > best.1 {
            best = (cand, m);
        }
        if best.1 > 0.2 * sep {
            break;
        }
    }
    best.0
}
