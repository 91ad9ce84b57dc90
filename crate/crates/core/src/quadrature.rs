//! Gauss–Legendre rules and composite panel integration.

use std::ops::{Add, Mul};
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the rule by Newton iteration on the Legendre polynomial.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess
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
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Shared 32-point rule.
    pub fn gl32() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(32))
    }

    /// Integrates `f` over `[a, b]` with this rule.
    pub fn integrate<T, F>(&self, a: f64, b: f64, f: F) -> T
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T> + Default,
        F: Fn(f64) -> T,
    {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = T::default();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc = acc + f(mid + half * x) * (w * half);
        }
        acc
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite rule with `panels` equal panels of the shared 32-point rule.
pub fn composite<T, F>(a: f64, b: f64, panels: usize, f: &F) -> T
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T> + Default,
    F: Fn(f64) -> T,
{
    let rule = GaussLegendre::gl32();
    let h = (b - a) / panels as f64;
    let mut acc = T::default();
    for p in 0..panels {
        let lo = a + h * p as f64;
        acc = acc + rule.integrate(lo, lo + h, f);
    }
    acc
}

/// Doubles the panel count until two successive levels agree to `rel_tol`
/// (relative to `max(|I|, abs_floor)`).
pub fn integrate_refined<F>(
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_floor: f64,
    start_panels: usize,
    max_panels: usize,
    f: F,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut panels = start_panels.max(1);
    let mut prev: f64 = composite(a, b, panels, &f);
    while panels < max_panels {
        panels *= 2;
        let cur: f64 = composite(a, b, panels, &f);
        if (cur - prev).abs() <= rel_tol * cur.abs().max(abs_floor) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::Quadrature(format!(
        "panel refinement on [{a}, {b}] reached {max_panels} panels without meeting rel. tol {rel_tol:e}"
    )))
}

/// Globally adaptive bisection: panels are split until a 32-point estimate
/// agrees with the sum over its two halves to `tol` (absolute, per unit length).
pub fn integrate_adaptive<T, F>(a: f64, b: f64, tol: f64, max_depth: u32, f: &F) -> Result<T>
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T> + Default + Norm,
    F: Fn(f64) -> T,
{
    let rule = GaussLegendre::gl32();
    let whole: T = rule.integrate(a, b, f);
    adapt(rule, a, b, whole, tol, max_depth, f)
}

fn adapt<T, F>(rule: &GaussLegendre, a: f64, b: f64, whole: T, tol: f64, depth: u32, f: &F) -> Result<T>
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T> + Default + Norm,
    F: Fn(f64) -> T,
{
    let m = 0.5 * (a + b);
    let left: T = rule.integrate(a, m, f);
    let right: T = rule.integrate(m, b, f);
    let both = left + right;
    if (both + whole * -1.0).norm() <= tol * (b - a) {
        return Ok(both);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "adaptive bisection exhausted depth on [{a}, {b}]"
        )));
    }
    Ok(adapt(rule, a, m, left, tol, depth - 1, f)? + adapt(rule, m, b, right, tol, depth - 1, f)?)
}

/// Magnitude used by the adaptive error test.
pub trait Norm {
    fn norm(&self) -> f64;
}

impl Norm for f64 {
    fn norm(&self) -> f64 {
        self.abs()
    }
}

impl Norm for num_complex::Complex64 {
    fn norm(&self) -> f64 {
        num_complex::Complex64::norm(*self)
    }
}
