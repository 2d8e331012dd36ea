//! Gauss–Legendre rules and an adaptive driver for complex vector integrands.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::C64;

/// Nodes and weights of an n-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn rule_high() -> &'static GaussLegendre {
    static R: OnceLock<GaussLegendre> = OnceLock::new();
    R.get_or_init(|| GaussLegendre::new(24))
}

fn rule_low() -> &'static GaussLegendre {
    static R: OnceLock<GaussLegendre> = OnceLock::new();
    R.get_or_init(|| GaussLegendre::new(16))
}

/// Settings of the adaptive driver.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSettings {
    /// Absolute error target per output component.
    pub tolerance: f64,
    pub max_depth: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            tolerance: 1e-13,
            max_depth: 30,
        }
    }
}

/// Result of an adaptive integration: integral and a conservative error estimate.
#[derive(Debug, Clone)]
pub struct Integral {
    pub value: Vec<C64>,
    pub error: f64,
}

/// Integrates a vector-valued function over `[a, b]`.
///
/// `f(t, out)` must write `dim` components into `out`. Intervals are bisected
/// until the 24- and 16-point rules agree to the tolerance.
pub fn integrate<F>(f: &F, dim: usize, a: f64, b: f64, settings: &QuadratureSettings) -> Result<Integral>
where
    F: Fn(f64, &mut [C64]),
{
    let mut value = vec![C64::new(0.0, 0.0); dim];
    let mut error = 0.0;
    let mut scratch = vec![C64::new(0.0, 0.0); dim];
    // explicit stack keeps summation order deterministic (left to right)
    let mut stack = vec![(a, b, 0usize)];
    let mut hi = vec![C64::new(0.0, 0.0); dim];
    let mut lo = vec![C64::new(0.0, 0.0); dim];
    while let Some((x0, x1, depth)) = stack.pop() {
        apply_rule(f, rule_high(), x0, x1, &mut hi, &mut scratch);
        apply_rule(f, rule_low(), x0, x1, &mut lo, &mut scratch);
        let est = hi
            .iter()
            .zip(lo.iter())
            .map(|(h, l)| (h - l).norm())
            .fold(0.0, f64::max);
        let local_tol = settings.tolerance * ((x1 - x0) / (b - a)).abs().max(1e-3);
        if est <= local_tol || depth >= settings.max_depth {
            if est > local_tol && depth >= settings.max_depth {
                return Err(Error::QuadratureNotConverged(est));
            }
            for (v, h) in value.iter_mut().zip(hi.iter()) {
                *v += h;
            }
            error += est;
        } else {
            let mid = 0.5 * (x0 + x1);
            stack.push((mid, x1, depth + 1));
            stack.push((x0, mid, depth + 1));
        }
    }
    Ok(Integral { value, error })
}

fn apply_rule<F>(f: &F, rule: &GaussLegendre, a: f64, b: f64, out: &mut [C64], scratch: &mut [C64])
where
    F: Fn(f64, &mut [C64]),
{
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
    for (x, w) in rule.nodes.iter().zip(rule.weights.iter()) {
        f(mid + half * x, scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o += s * (w * half);
        }
    }
}
