//! Dyson Brownian motion with shared noise, the difference generator and
//! its short-range truncation, the truncated propagator, and the observables
//! built from a coupled pair of flows.
//!
//! Two integrators are provided. [`Scheme::ExplicitEuler`] is plain
//! Euler–Maruyama with gap-adaptive steps and rejection on ordering
//! violations. [`Scheme::SemiImplicit`] treats interactions between
//! particles at most `band` indices apart implicitly, so the logarithmic
//! barrier keeps the ordering for any step, and the rest explicitly. In both
//! cases the Brownian path is fixed on the `dt_max` grid and refined by
//! Brownian bridges, and every decision depends symmetrically on the two
//! systems, so swapping the initial data swaps the outputs bit for bit.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensembles::RngStream;
use crate::error::{Error, Result};
use crate::spectral::ComplexEnergy;

/// Particle configuration at a given time, strictly descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub time: f64,
    pub x: Vec<f64>,
}

impl ParticleState {
    pub fn new(time: f64, x: Vec<f64>) -> Result<Self> {
        check_ordered(&x)?;
        Ok(Self { time, x })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }
}

fn check_ordered(x: &[f64]) -> Result<()> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::domain(format!("non-finite particle position at index {}", i + 1)));
    }
    match first_violation(x) {
        Some(i) => Err(Error::Coincident { i: i + 1, j: i + 2 }),
        None => Ok(()),
    }
}

fn first_violation(x: &[f64]) -> Option<usize> {
    x.windows(2).position(|w| !(w[0] > w[1]))
}

fn min_gap(x: &[f64]) -> (f64, usize) {
    x.windows(2)
        .enumerate()
        .map(|(i, w)| (w[0] - w[1], i))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
}

/// `(1/N)Σ_{j≠i} 1/(x_i−x_j) − x_i/2`.
pub fn dbm_drift(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let mut d = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let diff = x[i] - x[j];
            if diff == 0.0 {
                return Err(Error::Coincident { i: i + 1, j: j + 1 });
            }
            let r = 1.0 / diff;
            d[i] += r;
            d[j] -= r;
        }
    }
    let inv_n = 1.0 / n as f64;
    for (di, xi) in d.iter_mut().zip(x) {
        *di = *di * inv_n - 0.5 * xi;
    }
    Ok(d)
}

/// Interaction part of the drift restricted to pairs with `|i−j| > band`.
///
/// The row sums use four fixed accumulator lanes, so the result is the same
/// whether or not the wide-vector path is taken.
fn far_interaction(x: &[f64], band: usize, out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the required CPU feature was detected at runtime.
            unsafe { far_interaction_avx2(x, band, out) };
            return;
        }
    }
    far_interaction_lanes(x, band, out);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn far_interaction_avx2(x: &[f64], band: usize, out: &mut [f64]) {
    far_interaction_lanes(x, band, out);
}

#[inline(always)]
fn far_interaction_lanes(x: &[f64], band: usize, out: &mut [f64]) {
    let n = x.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let start = i + band + 1;
        if start >= n {
            break;
        }
        let xi = x[i];
        let (head, tail) = out.split_at_mut(start);
        let xs = &x[start..];
        let mut acc = [0.0_f64; 4];
        let mut xc = xs.chunks_exact(4);
        let mut oc = tail.chunks_exact_mut(4);
        for (xv, ov) in (&mut xc).zip(&mut oc) {
            for l in 0..4 {
                let r = 1.0 / (xi - xv[l]);
                acc[l] += r;
                ov[l] -= r;
            }
        }
        for (xv, ov) in xc.remainder().iter().zip(oc.into_remainder()) {
            let r = 1.0 / (xi - xv);
            acc[0] += r;
            *ov -= r;
        }
        head[i] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
    }
    let inv_n = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v *= inv_n);
}

/// Integrator selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Scheme {
    /// Euler–Maruyama with `Δt ≤ c·min gap / max |drift|`.
    ExplicitEuler,
    /// Implicit in interactions with `|i−j| ≤ band` and the confinement,
    /// explicit in the remaining interactions.
    SemiImplicit { band: usize },
}

/// Step-control parameters for [`evolve_coupled`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub scheme: Scheme,
    /// Largest step; `None` means `t_final / 2000`.
    pub dt_max: Option<f64>,
    /// The constant `c` of the explicit gap rule.
    pub gap_factor: f64,
    pub min_dt: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::ExplicitEuler,
            dt_max: None,
            gap_factor: 0.25,
            min_dt: 1e-12,
        }
    }
}

impl FlowConfig {
    pub fn semi_implicit(band: usize, dt_max: f64) -> Self {
        Self {
            scheme: Scheme::SemiImplicit { band },
            dt_max: Some(dt_max),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
}

/// Two flows driven by the same Brownian motions, recorded at checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledTrajectory {
    pub lambda_path: Vec<ParticleState>,
    pub mu_path: Vec<ParticleState>,
    pub shared_seed: RngStream,
    pub beta: f64,
    pub step_stats: StepStats,
}

impl CoupledTrajectory {
    pub fn n(&self) -> usize {
        self.lambda_path[0].n()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.lambda_path.iter().map(|s| s.time)
    }

    fn position(&self, t: f64) -> Result<usize> {
        find_checkpoint(&self.lambda_path, t)
    }

    /// `(λ(t), μ(t))` at a recorded checkpoint.
    pub fn at(&self, t: f64) -> Result<(&ParticleState, &ParticleState)> {
        let p = self.position(t)?;
        Ok((&self.lambda_path[p], &self.mu_path[p]))
    }

    /// Writes `time,index,lambda,mu` rows, index 1-based.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,index,lambda,mu")?;
        for (l, m) in self.lambda_path.iter().zip(&self.mu_path) {
            for (i, (a, b)) in l.x.iter().zip(&m.x).enumerate() {
                writeln!(w, "{},{},{},{}", l.time, i + 1, a, b)?;
            }
        }
        Ok(())
    }
}

fn find_checkpoint(path: &[ParticleState], t: f64) -> Result<usize> {
    let tol = 1e-12 * t.abs().max(1.0);
    path.iter()
        .position(|s| (s.time - t).abs() <= tol)
        .ok_or(Error::MissingCheckpoint(t))
}

const SYSTEM_NAMES: [&str; 2] = ["lambda", "mu"];

/// Evolves `l0` and `m0` to `t_final` with identical Brownian increments.
///
/// The returned paths always contain `t = 0`, every requested checkpoint in
/// `[0, t_final]` and `t_final`, each landed on exactly.
pub fn evolve_coupled(
    l0: &[f64],
    m0: &[f64],
    t_final: f64,
    beta: f64,
    stream: &RngStream,
    checkpoints: &[f64],
    cfg: &FlowConfig,
) -> Result<CoupledTrajectory> {
    if l0.len() != m0.len() {
        return Err(Error::DimensionMismatch {
            expected: l0.len(),
            got: m0.len(),
        });
    }
    let (mut paths, step_stats) = integrate(vec![l0.to_vec(), m0.to_vec()], t_final, beta, stream, checkpoints, cfg)?;
    let mu_path = paths.pop().expect("two systems");
    let lambda_path = paths.pop().expect("two systems");
    Ok(CoupledTrajectory {
        lambda_path,
        mu_path,
        shared_seed: *stream,
        beta,
        step_stats,
    })
}

/// A single flow, with the same conventions as [`evolve_coupled`].
pub fn evolve_single(
    x0: &[f64],
    t_final: f64,
    beta: f64,
    stream: &RngStream,
    checkpoints: &[f64],
    cfg: &FlowConfig,
) -> Result<(Vec<ParticleState>, StepStats)> {
    let (mut paths, stats) = integrate(vec![x0.to_vec()], t_final, beta, stream, checkpoints, cfg)?;
    Ok((paths.pop().expect("one system"), stats))
}

/// Initial data `ν·λ0 + (1−ν)·μ0` of the interpolating flow.
pub fn interpolated_initial(l0: &[f64], m0: &[f64], nu: f64) -> Result<Vec<f64>> {
    if l0.len() != m0.len() {
        return Err(Error::DimensionMismatch {
            expected: l0.len(),
            got: m0.len(),
        });
    }
    let x: Vec<f64> = l0.iter().zip(m0).map(|(a, b)| nu * a + (1.0 - nu) * b).collect();
    check_ordered(&x)?;
    Ok(x)
}

/// Fixed-step integration driven by prescribed Brownian increments
/// `dw[step][i]` of step `h`; returns the final `(λ, μ)`. Intended for
/// convergence studies where several resolutions must share one path.
pub fn evolve_coupled_driven(
    l0: &[f64],
    m0: &[f64],
    beta: f64,
    scheme: Scheme,
    h: f64,
    dw: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = l0.len();
    if m0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: m0.len() });
    }
    check_ordered(l0)?;
    check_ordered(m0)?;
    let sigma = (2.0 / (n as f64 * beta)).sqrt();
    let mut stepper = Stepper::new(n, scheme);
    let mut systems = vec![l0.to_vec(), m0.to_vec()];
    for (k, w) in dw.iter().enumerate() {
        if w.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: w.len() });
        }
        systems = stepper.try_step(&systems, h, sigma, w).ok_or_else(|| {
            Error::domain(format!("fixed step {k} of size {h:e} rejected"))
        })?;
    }
    let m = systems.pop().expect("two systems");
    let l = systems.pop().expect("two systems");
    Ok((l, m))
}

struct Segment {
    t_end: f64,
    dw: Vec<f64>,
}

fn integrate(
    mut systems: Vec<Vec<f64>>,
    t_final: f64,
    beta: f64,
    stream: &RngStream,
    checkpoints: &[f64],
    cfg: &FlowConfig,
) -> Result<(Vec<Vec<ParticleState>>, StepStats)> {
    if !(0.0..=1.0).contains(&t_final) {
        return Err(Error::domain(format!("t_final must lie in [0, 1], got {t_final}")));
    }
    if beta != 1.0 && beta != 2.0 {
        return Err(Error::domain(format!("beta must be 1 or 2, got {beta}")));
    }
    let n = systems[0].len();
    if n == 0 {
        return Err(Error::domain("empty particle configuration"));
    }
    for s in &systems {
        check_ordered(s)?;
    }
    let mut targets: Vec<f64> = Vec::with_capacity(checkpoints.len() + 2);
    targets.push(0.0);
    for &c in checkpoints {
        if !(0.0..=t_final).contains(&c) {
            return Err(Error::domain(format!("checkpoint {c} outside [0, {t_final}]")));
        }
        targets.push(c);
    }
    targets.push(t_final);
    targets.sort_by(f64::total_cmp);
    targets.dedup();

    let dt_max = cfg.dt_max.unwrap_or(t_final / 2000.0);
    if t_final > 0.0 && !(dt_max > 0.0) {
        return Err(Error::domain(format!("dt_max must be positive, got {dt_max}")));
    }
    let sigma = (2.0 / (n as f64 * beta)).sqrt();
    let mut rng = stream.rng();
    let mut stats = StepStats::default();
    let mut paths: Vec<Vec<ParticleState>> = vec![Vec::with_capacity(targets.len()); systems.len()];
    let mut stepper = Stepper::new(n, cfg.scheme);

    let mut t = 0.0;
    let mut pending: Vec<Segment> = Vec::new();
    for &target in &targets {
        while t < target {
            let seg = match pending.pop() {
                Some(s) => s,
                None => {
                    let mut t_end = t + dt_max;
                    if t_end >= target - 1e-9 * dt_max {
                        t_end = target;
                    }
                    let h = t_end - t;
                    let sd = h.sqrt();
                    let dw = (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
                    Segment { t_end, dw }
                }
            };
            let h = seg.t_end - t;
            let h_allowed = stepper.allowed_step(&systems, cfg);
            let outcome = if h > h_allowed {
                None
            } else {
                stepper.try_step(&systems, h, sigma, &seg.dw)
            };
            match outcome {
                Some(next) => {
                    systems = next;
                    t = seg.t_end;
                    stats.accepted += 1;
                }
                None => {
                    if h <= h_allowed {
                        stats.rejected += 1;
                    }
                    if h / 2.0 < cfg.min_dt {
                        let (sys, (_, i)) = systems
                            .iter()
                            .map(|s| min_gap(s))
                            .enumerate()
                            .fold((0, (f64::INFINITY, 0)), |a, b| if b.1 .0 < a.1 .0 { b } else { a });
                        return Err(Error::StepUnderflow {
                            dt: h,
                            t,
                            i: i + 1,
                            j: i + 2,
                            system: SYSTEM_NAMES[sys.min(1)],
                        });
                    }
                    let (first, second) = bridge_split(t, seg, &mut rng);
                    pending.push(second);
                    pending.push(first);
                }
            }
        }
        for (p, s) in paths.iter_mut().zip(&systems) {
            p.push(ParticleState { time: target, x: s.clone() });
        }
    }
    Ok((paths, stats))
}

/// Splits a Brownian increment over `[t, t_end]` at the midpoint.
fn bridge_split<R: Rng>(t: f64, seg: Segment, rng: &mut R) -> (Segment, Segment) {
    let h = seg.t_end - t;
    let t_mid = t + 0.5 * h;
    let sd = (0.25 * h).sqrt();
    let first: Vec<f64> = seg
        .dw
        .iter()
        .map(|w| 0.5 * w + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let second = seg.dw.iter().zip(&first).map(|(w, a)| w - a).collect();
    (
        Segment { t_end: t_mid, dw: first },
        Segment {
            t_end: seg.t_end,
            dw: second,
        },
    )
}

struct Stepper {
    scheme: Scheme,
    buf: Vec<f64>,
    band: BandSolver,
}

impl Stepper {
    fn new(n: usize, scheme: Scheme) -> Self {
        let w = match scheme {
            Scheme::SemiImplicit { band } => band.clamp(1, n.max(2) - 1),
            Scheme::ExplicitEuler => 1,
        };
        Self {
            scheme,
            buf: vec![0.0; n],
            band: BandSolver::new(n, w),
        }
    }

    fn allowed_step(&self, systems: &[Vec<f64>], cfg: &FlowConfig) -> f64 {
        match self.scheme {
            Scheme::SemiImplicit { .. } => f64::INFINITY,
            Scheme::ExplicitEuler => {
                let mut h = f64::INFINITY;
                for s in systems {
                    if s.len() < 2 {
                        continue;
                    }
                    let (g, _) = min_gap(s);
                    let d = dbm_drift(s).map(|d| d.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
                    match d {
                        Ok(m) if m > 0.0 => h = h.min(cfg.gap_factor * g / m),
                        Ok(_) => {}
                        Err(_) => return 0.0,
                    }
                }
                h
            }
        }
    }

    fn try_step(&mut self, systems: &[Vec<f64>], h: f64, sigma: f64, dw: &[f64]) -> Option<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(systems.len());
        for s in systems {
            let next = match self.scheme {
                Scheme::ExplicitEuler => {
                    let d = dbm_drift(s).ok()?;
                    let x: Vec<f64> = s
                        .iter()
                        .zip(&d)
                        .zip(dw)
                        .map(|((x, d), w)| x + h * d + sigma * w)
                        .collect();
                    if first_violation(&x).is_some() {
                        return None;
                    }
                    x
                }
                Scheme::SemiImplicit { .. } => {
                    let w = self.band.w;
                    far_interaction(s, w, &mut self.buf);
                    let y: Vec<f64> = s
                        .iter()
                        .zip(&self.buf)
                        .zip(dw)
                        .map(|((x, f), w)| x + h * f + sigma * w)
                        .collect();
                    self.band.solve_prox(s, &y, h)?
                }
            };
            out.push(next);
        }
        Some(out)
    }
}

const NEWTON_MAX_ITER: usize = 60;

/// Newton solver for the banded implicit step.
///
/// Minimizes `Φ(x) = |x−y|²/2 + h(Σx²/4 − (1/N)Σ_{0<j−i≤w} log(x_i−x_j))`,
/// whose stationarity condition is `x = y + h(near(x) − x/2)`.
struct BandSolver {
    n: usize,
    w: usize,
    /// Hessian band on input to the factorization, then the unit lower
    /// factor: `l[i*(w+1)+k]` is the entry at row `i`, column `i−k`.
    l: Vec<f64>,
    d: Vec<f64>,
    inv_d: Vec<f64>,
    grad: Vec<f64>,
    step: Vec<f64>,
}

impl BandSolver {
    fn new(n: usize, w: usize) -> Self {
        Self {
            n,
            w,
            l: vec![0.0; n * (w + 1)],
            d: vec![0.0; n],
            inv_d: vec![0.0; n],
            grad: vec![0.0; n],
            step: vec![0.0; n],
        }
    }

    /// Fills the gradient and the banded `LDLᵀ` factorization of the Hessian.
    fn linearize(&mut self, x: &[f64], y: &[f64], h: f64) -> bool {
        let (n, w) = (self.n, self.w);
        let wp = w + 1;
        let hn = h / n as f64;
        self.l.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            self.grad[i] = x[i] - y[i] + 0.5 * h * x[i];
            self.l[i * wp] = 1.0 + 0.5 * h;
        }
        for i in 0..n {
            for j in i + 1..(i + wp).min(n) {
                let r = 1.0 / (x[i] - x[j]);
                self.grad[i] -= hn * r;
                self.grad[j] += hn * r;
                let c = hn * r * r;
                self.l[i * wp] += c;
                self.l[j * wp] += c;
                self.l[j * wp + (j - i)] -= c;
            }
        }
        for i in 0..n {
            let kmax = w.min(i);
            for k in (1..=kmax).rev() {
                let j = i - k;
                let mut s = self.l[i * wp + k];
                for p in 1..=(w - k).min(j) {
                    s -= self.l[i * wp + k + p] * self.d[j - p] * self.l[j * wp + p];
                }
                self.l[i * wp + k] = s * self.inv_d[j];
            }
            let mut dii = self.l[i * wp];
            for k in 1..=kmax {
                let lik = self.l[i * wp + k];
                dii -= lik * lik * self.d[i - k];
            }
            if !(dii > 0.0) {
                return false;
            }
            self.d[i] = dii;
            self.inv_d[i] = 1.0 / dii;
        }
        true
    }

    /// Overwrites `step` with `−H⁻¹ grad`.
    fn newton_direction(&mut self) {
        let (n, w) = (self.n, self.w);
        let wp = w + 1;
        for i in 0..n {
            let mut s = -self.grad[i];
            for k in 1..=w.min(i) {
                s -= self.l[i * wp + k] * self.step[i - k];
            }
            self.step[i] = s;
        }
        for i in 0..n {
            self.step[i] *= self.inv_d[i];
        }
        for i in (0..n).rev() {
            let mut s = self.step[i];
            for k in 1..=w.min(n - 1 - i) {
                s -= self.l[(i + k) * wp + k] * self.step[i + k];
            }
            self.step[i] = s;
        }
    }

    /// Explicit predictor `y + h(near(x_prev) − x_prev/2)`, pulled back
    /// towards `x_prev` as far as needed to keep the ordering.
    fn predictor(&self, x_prev: &[f64], y: &[f64], h: f64) -> Vec<f64> {
        let (n, w) = (self.n, self.w);
        let hn = h / n as f64;
        let mut p: Vec<f64> = x_prev.iter().zip(y).map(|(x, y)| y - 0.5 * h * x).collect();
        for i in 0..n {
            for j in i + 1..(i + w + 1).min(n) {
                let r = hn / (x_prev[i] - x_prev[j]);
                p[i] += r;
                p[j] -= r;
            }
        }
        let mut theta = 1.0_f64;
        for i in 0..n - 1 {
            let g0 = x_prev[i] - x_prev[i + 1];
            let g1 = p[i] - p[i + 1];
            if g1 < 0.5 * g0 {
                theta = theta.min(0.5 * g0 / (g0 - g1));
            }
        }
        if theta < 1.0 {
            for (pi, xi) in p.iter_mut().zip(x_prev) {
                *pi = xi + theta * (*pi - xi);
            }
        }
        p
    }

    fn solve_prox(&mut self, x_prev: &[f64], y: &[f64], h: f64) -> Option<Vec<f64>> {
        let n = self.n;
        let mut x = self.predictor(x_prev, y, h);
        for _ in 0..NEWTON_MAX_ITER {
            if !self.linearize(&x, y, h) {
                return None;
            }
            self.newton_direction();
            let size = self.step.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if size <= 1e-15 {
                return Some(x);
            }
            // stay a fixed fraction away from the nearest collision
            let mut alpha = 1.0_f64;
            for i in 0..n - 1 {
                let dg = self.step[i] - self.step[i + 1];
                if dg < 0.0 {
                    alpha = alpha.min(0.9 * (x[i] - x[i + 1]) / -dg);
                }
            }
            for i in 0..n {
                x[i] += alpha * self.step[i];
            }
            if alpha == 1.0 && size < 1e-12 {
                return Some(x);
            }
        }
        None
    }
}

/// `u_i(t) = e^{t/2}(λ_i(t) − μ_i(t))` at a checkpoint.
pub fn finite_difference_u(traj: &CoupledTrajectory, t: f64) -> Result<Vec<f64>> {
    let (l, m) = traj.at(t)?;
    let s = (0.5 * l.time).exp();
    Ok(l.x.iter().zip(&m.x).map(|(a, b)| s * (a - b)).collect())
}

/// `(ℬv)_i = (1/N)Σ_{j≠i}(v_j−v_i)/(x_i−x_j)²`.
pub fn full_generator_apply(x: &[f64], v: &[f64]) -> Vec<f64> {
    banded_apply(x, v, 0, x.len())
}

/// Exact generator of `u = e^{t/2}(λ−μ)`: `du/dt = ℬ̃u` with weights
/// `1/((λ_i−λ_j)(μ_i−μ_j))`.
pub fn difference_generator_apply(lambda: &[f64], mu: &[f64], v: &[f64]) -> Vec<f64> {
    let n = lambda.len();
    let inv_n = 1.0 / n as f64;
    let mut out = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = inv_n / ((lambda[i] - lambda[j]) * (mu[i] - mu[j]));
            let d = v[j] - v[i];
            out[i] += c * d;
            out[j] -= c * d;
        }
    }
    out
}

/// Applies the part of `ℬ` coupling indices with `lo ≤ |i−j| < hi`.
fn banded_apply(x: &[f64], v: &[f64], lo: usize, hi: usize) -> Vec<f64> {
    let n = x.len();
    let inv_n = 1.0 / n as f64;
    let mut out = vec![0.0; n];
    for i in 0..n {
        for j in (i + lo.max(1))..(i + hi).min(n) {
            let g = x[i] - x[j];
            let c = inv_n / (g * g) * (v[j] - v[i]);
            out[i] += c;
            out[j] -= c;
        }
    }
    out
}

/// The band-`ℓ` truncation `𝒮` of `ℬ` at a frozen configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortRangeOperator {
    pub ell: usize,
    pub x: Vec<f64>,
    /// `off[i*(ℓ−1) + (d−1)] = (𝒮)_{i,i+d}` for `1 ≤ d < ℓ`.
    off: Vec<f64>,
    diag: Vec<f64>,
}

/// Builds `𝒮` with `(𝒮)_{ij} = (1/N)/(x_i−x_j)²` for `0 < |i−j| < ℓ`.
pub fn short_range_generator(x: &ParticleState, ell: usize) -> Result<ShortRangeOperator> {
    if ell == 0 {
        return Err(Error::domain("band half-width must be at least 1"));
    }
    check_ordered(&x.x)?;
    let n = x.n();
    let ell = ell.min(n.max(1));
    let wb = ell - 1;
    let inv_n = 1.0 / n as f64;
    let mut off = vec![0.0; n * wb];
    let mut diag = vec![0.0; n];
    for i in 0..n {
        for d in 1..=wb {
            let j = i + d;
            if j >= n {
                break;
            }
            let g = x.x[i] - x.x[j];
            let c = inv_n / (g * g);
            off[i * wb + d - 1] = c;
            diag[i] -= c;
            diag[j] -= c;
        }
    }
    Ok(ShortRangeOperator {
        ell,
        x: x.x.clone(),
        off,
        diag,
    })
}

impl ShortRangeOperator {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let d = b - a;
        if d >= self.ell {
            0.0
        } else {
            self.off[a * (self.ell - 1) + d - 1]
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        out
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n();
        let wb = self.ell - 1;
        for i in 0..n {
            out[i] = self.diag[i] * v[i];
        }
        for i in 0..n {
            for d in 1..=wb.min(n - 1 - i) {
                let c = self.off[i * wb + d - 1];
                out[i] += c * v[i + d];
                out[i + d] += c * v[i];
            }
        }
    }

    /// Applies `𝒮` to every column of `m` in place of `out`.
    fn apply_matrix(&self, m: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        for c in 0..m.ncols() {
            self.apply_into(m.column(c).as_slice(), out.column_mut(c).as_mut_slice());
        }
    }

    /// `max_i Σ_j |𝒮_ij| = 2 max_i |𝒮_ii|`.
    pub fn norm_inf(&self) -> f64 {
        2.0 * self.diag.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.entry(i, j))
    }
}

/// `ℒv = ℬv − 𝒮v`: the interactions with `|i−j| ≥ ℓ`.
pub fn long_range_apply(x: &ParticleState, v: &[f64], ell: usize) -> Result<Vec<f64>> {
    if v.len() != x.n() {
        return Err(Error::DimensionMismatch {
            expected: x.n(),
            got: v.len(),
        });
    }
    Ok(banded_apply(&x.x, v, ell.max(1), x.n()))
}

/// Time-stepping controls for [`evolve_semigroup`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemigroupConfig {
    /// Number of intervals on which the generator is frozen.
    pub substeps: usize,
    /// Each frozen interval is subdivided so that `dt·‖𝒮‖_∞` stays below
    /// this value.
    pub stiffness_limit: f64,
}

impl Default for SemigroupConfig {
    fn default() -> Self {
        Self {
            substeps: 512,
            stiffness_limit: 0.5,
        }
    }
}

/// The propagator `𝒰^𝒮(u, t)` of `∂_s𝒰 = 𝒮_s𝒰` along a recorded path.
pub fn evolve_semigroup(path: &[ParticleState], ell: usize, u: f64, t: f64, cfg: &SemigroupConfig) -> Result<DMatrix<f64>> {
    let n = path.first().ok_or_else(|| Error::domain("empty path"))?.n();
    propagate(path, ell, u, t, DMatrix::identity(n, n), cfg)
}

/// `𝒰^𝒮(u, t)·v0` for a block of column vectors `v0`.
///
/// The generator on each of the `substeps` intervals is built from the
/// recorded state closest to the interval midpoint and integrated with the
/// classical fourth-order Runge–Kutta scheme.
pub fn propagate(path: &[ParticleState], ell: usize, u: f64, t: f64, v0: DMatrix<f64>, cfg: &SemigroupConfig) -> Result<DMatrix<f64>> {
    let first = path.first().ok_or_else(|| Error::domain("empty path"))?;
    let last = path.last().expect("nonempty");
    let n = first.n();
    if v0.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v0.nrows(),
        });
    }
    if !(u <= t) {
        return Err(Error::domain(format!("semigroup requires u <= t, got u = {u}, t = {t}")));
    }
    let slack = 1e-12 * t.abs().max(1.0);
    if u < first.time - slack || t > last.time + slack {
        return Err(Error::domain(format!(
            "path covers [{}, {}], requested [{u}, {t}]",
            first.time, last.time
        )));
    }
    if cfg.substeps == 0 || !(cfg.stiffness_limit > 0.0) {
        return Err(Error::domain("semigroup substeps and stiffness limit must be positive"));
    }
    let mut m = v0;
    if u == t {
        return Ok(m);
    }
    let dt_outer = (t - u) / cfg.substeps as f64;
    let mut k1 = DMatrix::zeros(n, m.ncols());
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    for s in 0..cfg.substeps {
        let mid = u + (s as f64 + 0.5) * dt_outer;
        let state = nearest_state(path, mid);
        let op = short_range_generator(state, ell)?;
        let inner = ((dt_outer * op.norm_inf() / cfg.stiffness_limit).ceil() as usize).max(1);
        let h = dt_outer / inner as f64;
        for _ in 0..inner {
            op.apply_matrix(&m, &mut k1);
            tmp.copy_from(&m);
            axpy(&mut tmp, 0.5 * h, &k1);
            op.apply_matrix(&tmp, &mut k2);
            tmp.copy_from(&m);
            axpy(&mut tmp, 0.5 * h, &k2);
            op.apply_matrix(&tmp, &mut k3);
            tmp.copy_from(&m);
            axpy(&mut tmp, h, &k3);
            op.apply_matrix(&tmp, &mut k4);
            axpy(&mut m, h / 6.0, &k1);
            axpy(&mut m, h / 3.0, &k2);
            axpy(&mut m, h / 3.0, &k3);
            axpy(&mut m, h / 6.0, &k4);
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::SubstepTooCoarse(format!("non-finite entries after substep {s}")));
        }
    }
    Ok(m)
}

fn axpy(y: &mut DMatrix<f64>, a: f64, x: &DMatrix<f64>) {
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += a * xi;
    }
}

fn nearest_state(path: &[ParticleState], t: f64) -> &ParticleState {
    let p = path.partition_point(|s| s.time < t);
    if p == 0 {
        &path[0]
    } else if p == path.len() {
        &path[p - 1]
    } else if t - path[p - 1].time <= path[p].time - t {
        &path[p - 1]
    } else {
        &path[p]
    }
}

/// Checks a propagator for the doubly stochastic structure and returns the
/// largest row- or column-sum defect.
pub fn stochastic_defect(m: &DMatrix<f64>) -> Result<f64> {
    let min = m.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min < -1e-10 {
        return Err(Error::SubstepTooCoarse(format!("negative propagator entry {min:e}")));
    }
    let rows = m.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    let cols = m.column_iter().map(|c| (c.sum() - 1.0).abs()).fold(0.0, f64::max);
    Ok(rows.max(cols))
}

/// Keeps `w_j` for `|j−k| < b` (1-based `j`, `k`) and writes `value`
/// elsewhere.
pub fn flat_op(w: &[f64], k: usize, b: usize, value: f64) -> Vec<f64> {
    w.iter()
        .enumerate()
        .map(|(idx, &wj)| if (idx + 1).abs_diff(k) < b { wj } else { value })
        .collect()
}

/// Average of `flat_op(w, k, b, value)` over the `R` radii `R ≤ b < 2R`.
pub fn av_op(w: &[f64], k: usize, r: usize, value: f64) -> Result<Vec<f64>> {
    if r == 0 {
        return Err(Error::domain("averaging radius must be at least 1"));
    }
    let mut acc = vec![0.0; w.len()];
    for b in r..2 * r {
        for (a, v) in acc.iter_mut().zip(flat_op(w, k, b, value)) {
            *a += v;
        }
    }
    let inv = 1.0 / r as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// `f_t(z) = e^{−t/2}Σ_i u_i(t)/(λ_i(t)−z)`.
pub fn observable_f(traj: &CoupledTrajectory, t: f64, z: ComplexEnergy) -> Result<Complex64> {
    if !(z.im > 0.0) {
        return Err(Error::domain("observable requires Im z > 0"));
    }
    let u = finite_difference_u(traj, t)?;
    let (l, _) = traj.at(t)?;
    let z = z.to_complex();
    let sum: Complex64 = u.iter().zip(&l.x).map(|(ui, xi)| ui / (xi - z)).sum();
    Ok(sum * (-0.5 * t).exp())
}

/// Empirical Stieltjes transform `(1/N)Σ_i 1/(x_i−z)`.
pub fn observable_s(state: &ParticleState, z: ComplexEnergy) -> Result<Complex64> {
    if !(z.im > 0.0) {
        return Err(Error::domain("observable requires Im z > 0"));
    }
    let z = z.to_complex();
    let sum: Complex64 = state.x.iter().map(|x| 1.0 / (x - z)).sum();
    Ok(sum / state.n() as f64)
}
