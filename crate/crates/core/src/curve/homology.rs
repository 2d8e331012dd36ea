//! Canonical homology bases drawn as explicit polylines, and a geometric
//! intersection-number routine for lifted closed paths.
//!
//! A cycle is stored as an integer combination of closed generator paths. For
//! hyperelliptic curves the generators are the canonical cycles themselves; for
//! cyclic covers they are figure-eight loops around pairs of adjacent branch
//! points, reduced to a symplectic basis with the intersection form.

use std::f64::consts::PI;

use super::{CoverKind, CurveModel, SurfacePath};
use crate::error::{Error, Result};
use crate::C64;

/// Integer coefficients over [`HomologyBasis::generators`].
pub type Cycle = Vec<i64>;

#[derive(Debug, Clone)]
pub struct HomologyBasis {
    pub generators: Vec<SurfacePath>,
    pub a_cycles: Vec<Cycle>,
    pub b_cycles: Vec<Cycle>,
    /// Pairwise intersection numbers of the generators.
    pub generator_intersections: Vec<Vec<i64>>,
    /// b-cycles whose orientation was reversed during calibration.
    pub flipped_b: Vec<bool>,
}

impl HomologyBasis {
    pub fn genus(&self) -> usize {
        self.a_cycles.len()
    }

    /// Intersection number of two chains.
    pub fn intersect(&self, x: &Cycle, y: &Cycle) -> i64 {
        let k = &self.generator_intersections;
        let mut s = 0;
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0 {
                continue;
            }
            for (j, yj) in y.iter().enumerate() {
                s += xi * yj * k[i][j];
            }
        }
        s
    }

    /// The `2g x 2g` intersection matrix in the order `a_1..a_g, b_1..b_g`.
    pub fn intersection_matrix(&self) -> Vec<Vec<i64>> {
        let all: Vec<&Cycle> = self.a_cycles.iter().chain(self.b_cycles.iter()).collect();
        all.iter()
            .map(|x| all.iter().map(|y| self.intersect(x, y)).collect())
            .collect()
    }

    pub fn is_canonical(&self) -> bool {
        let g = self.genus();
        let m = self.intersection_matrix();
        (0..2 * g).all(|i| {
            (0..2 * g).all(|j| {
                let expect = if j == i + g && i < g {
                    1
                } else if i == j + g && j < g {
                    -1
                } else {
                    0
                };
                m[i][j] == expect
            })
        })
    }

    /// Reverses the orientation of `b_j`.
    pub fn flip_b(&mut self, j: usize) {
        for c in self.b_cycles[j].iter_mut() {
            *c = -*c;
        }
        self.flipped_b[j] = !self.flipped_b[j];
    }

    /// Replaces `a_j` by `-a_j` and `b_j` by `-b_j` (keeps the basis canonical).
    pub fn negate_pair(&mut self, j: usize) {
        for c in self.a_cycles[j].iter_mut() {
            *c = -*c;
        }
        self.flip_b(j);
    }
}

/// A closed path lifted densely: vertices with their `w` values, consecutive
/// vertices close enough for the local product formula.
struct Lifted {
    lam: Vec<C64>,
    w: Vec<C64>,
    lo: C64,
    hi: C64,
}

fn lift(curve: &CurveModel, path: &SurfacePath) -> Result<Lifted> {
    let pieces = curve.pieces(path)?;
    let mut lam = Vec::with_capacity(pieces.len() + 1);
    let mut w = Vec::with_capacity(pieces.len() + 1);
    for p in &pieces {
        let (l, ww, _) = p.eval(curve, 0.0);
        lam.push(l);
        w.push(ww);
    }
    let last = pieces.last().ok_or(Error::PathStartMismatch)?;
    lam.push(last.end_lambda(curve));
    w.push(last.end_w(curve));
    let lo = C64::new(
        lam.iter().map(|z| z.re).fold(f64::INFINITY, f64::min),
        lam.iter().map(|z| z.im).fold(f64::INFINITY, f64::min),
    );
    let hi = C64::new(
        lam.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max),
        lam.iter().map(|z| z.im).fold(f64::NEG_INFINITY, f64::max),
    );
    Ok(Lifted { lam, w, lo, hi })
}

fn cross(a: C64, b: C64) -> f64 {
    (a.conj() * b).im
}

/// Parameters `(s, t)` of the proper crossing of `[p0, p1]` and `[q0, q1]`.
fn segment_crossing(p0: C64, p1: C64, q0: C64, q1: C64) -> Option<(f64, f64)> {
    let r = p1 - p0;
    let s = q1 - q0;
    let den = cross(r, s);
    if den.abs() <= 1e-300 {
        return None;
    }
    let d = q0 - p0;
    let u = cross(d, s) / den;
    let v = cross(d, r) / den;
    if (0.0..1.0).contains(&u) && (0.0..1.0).contains(&v) {
        Some((u, v))
    } else {
        None
    }
}

fn intersection_number(curve: &CurveModel, x: &Lifted, y: &Lifted) -> i64 {
    if x.hi.re < y.lo.re || y.hi.re < x.lo.re || x.hi.im < y.lo.im || y.hi.im < x.lo.im {
        return 0;
    }
    let mut total = 0;
    for i in 0..x.lam.len() - 1 {
        let (p0, p1) = (x.lam[i], x.lam[i + 1]);
        let (pmin_re, pmax_re) = (p0.re.min(p1.re), p0.re.max(p1.re));
        let (pmin_im, pmax_im) = (p0.im.min(p1.im), p0.im.max(p1.im));
        if pmax_re < y.lo.re || pmin_re > y.hi.re || pmax_im < y.lo.im || pmin_im > y.hi.im {
            continue;
        }
        for j in 0..y.lam.len() - 1 {
            let (q0, q1) = (y.lam[j], y.lam[j + 1]);
            if q0.re.max(q1.re) < pmin_re
                || q0.re.min(q1.re) > pmax_re
                || q0.im.max(q1.im) < pmin_im
                || q0.im.min(q1.im) > pmax_im
            {
                continue;
            }
            if let Some((u, _)) = segment_crossing(p0, p1, q0, q1) {
                let z = p0 + (p1 - p0) * u;
                let wx = curve.continue_local(p0, x.w[i], z);
                let wy = curve.continue_local(q0, y.w[j], z);
                if (wx - wy).norm() < 0.1 * wx.norm() {
                    total += cross(p1 - p0, q1 - q0).signum() as i64;
                }
            }
        }
    }
    total
}

/// Intersection number of two closed lifted paths.
pub fn intersection(curve: &CurveModel, x: &SurfacePath, y: &SurfacePath) -> Result<i64> {
    Ok(intersection_number(curve, &lift(curve, x)?, &lift(curve, y)?))
}

fn unit(z: C64) -> C64 {
    z / z.norm()
}

fn point_segment_distance(p: C64, a: C64, b: C64) -> f64 {
    let d = b - a;
    let t = (((p - a) * d.conj()).re / d.norm_sqr()).clamp(0.0, 1.0);
    (p - (a + d * t)).norm()
}

fn segment_distance(a0: C64, a1: C64, b0: C64, b1: C64) -> f64 {
    if segment_crossing(a0, a1, b0, b1).is_some() {
        return 0.0;
    }
    point_segment_distance(a0, b0, b1)
        .min(point_segment_distance(a1, b0, b1))
        .min(point_segment_distance(b0, a0, a1))
        .min(point_segment_distance(b1, a0, a1))
}

/// Clearance of the spine polyline `lambda_1 -> ... -> lambda_n`; zero when it
/// is not simple.
fn spine_clearance(pts: &[C64]) -> f64 {
    let n = pts.len();
    let mut m = f64::INFINITY;
    for i in 0..n - 1 {
        m = m.min((pts[i + 1] - pts[i]).norm());
        for j in i + 2..n - 1 {
            m = m.min(segment_distance(pts[i], pts[i + 1], pts[j], pts[j + 1]));
        }
        for (k, p) in pts.iter().enumerate() {
            if k != i && k != i + 1 {
                m = m.min(point_segment_distance(*p, pts[i], pts[i + 1]));
            }
        }
    }
    m
}

/// Polyline at signed distance `dist` (positive to the left) from `q`; arcs on
/// the outside of turns, miters on the inside.
fn offset(q: &[C64], dist: f64) -> Vec<C64> {
    let i = C64::new(0.0, 1.0);
    let m = q.len();
    let mut out = vec![q[0] + i * unit(q[1] - q[0]) * dist];
    for k in 1..m - 1 {
        let d1 = unit(q[k] - q[k - 1]);
        let d2 = unit(q[k + 1] - q[k]);
        let n1 = i * d1;
        let n2 = i * d2;
        let turn = cross(d1, d2);
        if turn.abs() < 1e-12 {
            out.push(q[k] + n1 * dist);
        } else if dist * turn > 0.0 {
            let dot = (n1 * n2.conj()).re;
            out.push(q[k] + (n1 + n2) * (dist / (1.0 + dot)));
        } else {
            let a0 = (n1 * dist).arg();
            let mut da = (n2 * dist).arg() - a0;
            while da > PI {
                da -= 2.0 * PI;
            }
            while da < -PI {
                da += 2.0 * PI;
            }
            let steps = ((da.abs() / (PI / 18.0)).ceil() as usize).max(1);
            for s in 0..=steps {
                out.push(q[k] + C64::from_polar(dist.abs(), a0 + da * s as f64 / steps as f64));
            }
        }
    }
    out.push(q[m - 1] + i * unit(q[m - 1] - q[m - 2]) * dist);
    out
}

/// Counterclockwise stadium at distance `rho` around the segment `[a, b]`.
fn stadium(a: C64, b: C64, rho: f64) -> Vec<C64> {
    let d = unit(b - a);
    let n = C64::new(0.0, 1.0) * d;
    let arc = 24;
    let mut v = vec![a - n * rho, b - n * rho];
    let base = (-n).arg();
    for s in 1..arc {
        v.push(b + C64::from_polar(rho, base + PI * s as f64 / arc as f64));
    }
    v.push(b + n * rho);
    v.push(a + n * rho);
    let base = n.arg();
    for s in 1..arc {
        v.push(a + C64::from_polar(rho, base + PI * s as f64 / arc as f64));
    }
    v.push(a - n * rho);
    v
}

fn full_circle(center: C64, through: C64, ccw: bool, m: usize) -> Vec<C64> {
    let r = (through - center).norm();
    let a0 = (through - center).arg();
    let sgn = if ccw { 1.0 } else { -1.0 };
    let mut v: Vec<C64> = (0..=m)
        .map(|k| center + C64::from_polar(r, a0 + sgn * 2.0 * PI * k as f64 / m as f64))
        .collect();
    v[0] = through;
    v[m] = through;
    v
}

impl CurveModel {
    /// Canonical homology basis (`a_j . b_k = delta_jk`, other pairings zero).
    pub fn homology_basis(&self) -> Result<HomologyBasis> {
        match self.kind() {
            CoverKind::Hyperelliptic => self.hyperelliptic_basis(),
            CoverKind::Cyclic => self.cyclic_basis(),
        }
    }

    fn generator_matrix(&self, gens: &[SurfacePath]) -> Result<Vec<Vec<i64>>> {
        let lifted: Vec<Lifted> = gens.iter().map(|p| lift(self, p)).collect::<Result<_>>()?;
        for (k, l) in lifted.iter().enumerate() {
            let (w0, w1) = (l.w[0], *l.w.last().unwrap());
            if (w0 - w1).norm() > 1e-8 * w0.norm() {
                return Err(Error::HomologyDegenerate(format!("generator {k} does not close")));
            }
        }
        let n = gens.len();
        let mut k = vec![vec![0i64; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = intersection_number(self, &lifted[i], &lifted[j]);
                k[i][j] = v;
                k[j][i] = -v;
            }
        }
        Ok(k)
    }

    fn hyperelliptic_basis(&self) -> Result<HomologyBasis> {
        let pts = self.points();
        let g = self.genus();
        let clearance = spine_clearance(pts);
        if clearance <= 1e-9 * self.min_separation() {
            return Err(Error::UnsupportedCutLayout);
        }
        let delta = 0.25 * clearance;
        let mut gens = Vec::with_capacity(2 * g);
        for j in 0..g {
            let v = stadium(pts[2 * j + 2], pts[2 * j + 3], 0.35 * delta);
            gens.push(SurfacePath::new(0, v));
        }
        for j in 0..g {
            let dj = delta * (1.0 - 0.25 * j as f64 / g as f64);
            let t0 = 0.42 + 0.16 * j as f64 / g as f64;
            let mut q = vec![pts[0] + (pts[1] - pts[0]) * t0];
            q.extend_from_slice(&pts[1..=2 * j + 2]);
            q.push(pts[2 * j + 2] + (pts[2 * j + 3] - pts[2 * j + 2]) * 0.5);
            let left = offset(&q, dj);
            let right = offset(&q, -dj);
            let mut v = vec![right[0]];
            v.extend_from_slice(&left);
            v.extend(right.iter().rev());
            gens.push(SurfacePath::new(0, v));
        }
        let k = self.generator_matrix(&gens)?;
        let unitv = |i: usize| {
            let mut e = vec![0i64; 2 * g];
            e[i] = 1;
            e
        };
        let mut basis = HomologyBasis {
            generators: gens,
            a_cycles: (0..g).map(unitv).collect(),
            b_cycles: (g..2 * g).map(unitv).collect(),
            generator_intersections: k,
            flipped_b: vec![false; g],
        };
        for j in 0..g {
            if basis.intersect(&basis.a_cycles[j], &basis.b_cycles[j]) == -1 {
                basis.flip_b(j);
            }
        }
        basis.flipped_b = vec![false; g];
        if !basis.is_canonical() {
            return Err(Error::HomologyDegenerate(format!(
                "intersection matrix {:?}",
                basis.intersection_matrix()
            )));
        }
        Ok(basis)
    }

    fn cyclic_basis(&self) -> Result<HomologyBasis> {
        let pts = self.points();
        let n = pts.len();
        let sheets = self.sheets();
        let g = self.genus();
        let margin = 0.1 * self.min_separation();
        let mut gens = Vec::new();
        for i in 0..n - 1 {
            let e = pts[i + 1] - pts[i];
            let nrm = C64::new(0.0, 1.0) * unit(e);
            for k in 0..sheets {
                let t = 0.5 + 0.05 * k as f64 + 0.013 * i as f64;
                let x = pts[i] + e * t + nrm * (0.02 * e.norm() * (1.0 + k as f64));
                for (center, idx) in [(pts[i + 1], i + 1), (pts[i], i)] {
                    let r = (x - center).norm();
                    let bad = pts
                        .iter()
                        .enumerate()
                        .any(|(m, p)| m != idx && ((p - center).norm() - r).abs() < margin || m != idx && (p - center).norm() < r);
                    if bad || r < margin {
                        return Err(Error::UnsupportedCutLayout);
                    }
                }
                let mut v = full_circle(pts[i + 1], x, true, 96);
                v.extend_from_slice(&full_circle(pts[i], x, false, 96)[1..]);
                gens.push(SurfacePath::new(k, v));
            }
        }
        let kmat = self.generator_matrix(&gens)?;
        let (a, b) = symplectic_reduce(&kmat, g)?;
        let basis = HomologyBasis {
            generators: gens,
            a_cycles: a,
            b_cycles: b,
            generator_intersections: kmat,
            flipped_b: vec![false; g],
        };
        if !basis.is_canonical() {
            return Err(Error::HomologyDegenerate("symplectic reduction failed".into()));
        }
        Ok(basis)
    }
}

fn form(k: &[Vec<i64>], x: &[i64], y: &[i64]) -> i64 {
    let mut s = 0;
    for (i, xi) in x.iter().enumerate() {
        if *xi != 0 {
            for (j, yj) in y.iter().enumerate() {
                s += xi * k[i][j] * yj;
            }
        }
    }
    s
}

/// Symplectic Gram–Schmidt over the integers: extracts `g` pairs with
/// `K(a_i, b_j) = delta_ij` from the unit vectors of the generator lattice.
pub fn symplectic_reduce(k: &[Vec<i64>], g: usize) -> Result<(Vec<Cycle>, Vec<Cycle>)> {
    let n = k.len();
    let mut pool: Vec<Vec<i64>> = (0..n)
        .map(|i| {
            let mut e = vec![0; n];
            e[i] = 1;
            e
        })
        .collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    while a.len() < g {
        let mut found = None;
        'search: for i in 0..pool.len() {
            for j in i + 1..pool.len() {
                let v = form(k, &pool[i], &pool[j]);
                if v.abs() == 1 {
                    found = Some((i, j, v));
                    break 'search;
                }
            }
        }
        let (i, j, v) = found.ok_or_else(|| {
            Error::HomologyDegenerate(format!("only {} symplectic pairs found, genus {g}", a.len()))
        })?;
        let (x, y) = if v == 1 {
            (pool[i].clone(), pool[j].clone())
        } else {
            (pool[j].clone(), pool[i].clone())
        };
        pool.remove(j);
        pool.remove(i);
        for v in pool.iter_mut() {
            let kvy = form(k, v, &y);
            let kvx = form(k, v, &x);
            for m in 0..n {
                v[m] = v[m] - kvy * x[m] + kvx * y[m];
            }
        }
        a.push(x);
        b.push(y);
    }
    for v in &pool {
        for u in &pool {
            if form(k, v, u) != 0 {
                return Err(Error::HomologyDegenerate("intersection form has excess rank".into()));
            }
        }
    }
    Ok((a, b))
}
