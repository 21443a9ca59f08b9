//! The nonlinear integral equation for the auxiliary function `a`.
//!
//! In the Trotter limit
//! `ln a(l) = -2 tau eta - beta e(l) - oint K(l - m) ln(1 + a(m)) dm / (2 pi i)`,
//! at finite Trotter number `N` the bare-energy term is replaced by
//! `(N/2) ln[sh(l - b) sh(l + b + eta) / (sh(l + b) sh(l - b + eta))]`
//! with `b = beta / N`. Both are solved by damped fixed-point iteration on
//! the nodes of an outer contour, tracking a continuous branch of
//! `ln(1 + a)` along the contour.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::contour::QuadratureGrid;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::model::{bare_energy_raw, kernel_raw, ln_sinh, pole_distance, reduce_period, ModelParams, I};
use crate::par;

/// Settings of the damped fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Mixing weight `theta` in `x <- (1 - theta) x + theta F(x)`.
    pub damping: f64,
}

impl Default for IterConfig {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 500, damping: 0.5 }
    }
}

/// Trotter number of a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trotter {
    Infinite,
    Finite(usize),
}

/// Anything that can evaluate the auxiliary function off the grid.
pub trait AuxFunction: Sync {
    fn params(&self) -> &ModelParams;
    fn twist(&self) -> Complex64;
    fn aux(&self, lambda: Complex64) -> Result<Complex64>;
}

/// Converged solution of the NLIE on a grid.
#[derive(Debug, Clone)]
pub struct AuxSolution {
    pub grid: QuadratureGrid,
    pub params: ModelParams,
    pub twist: Complex64,
    pub trotter: Trotter,
    /// Continuous branch of `ln a` at the nodes.
    pub log_a_values: Vec<Complex64>,
    /// Continuous branch of `ln(1 + a)` at the nodes.
    pub log1p_a_values: Vec<Complex64>,
    /// Branch mismatch of `ln(1 + a)` after one lap, in units of `2 pi i`.
    pub winding: Complex64,
    pub iterations: usize,
    pub residual: f64,
}

/// `ln(1 + e^x)` without overflow. The branch is fixed later by tracking.
fn log1p_exp(x: Complex64) -> Complex64 {
    if x.re > 0.0 {
        x + (1.0 + (-x).exp()).ln()
    } else {
        (1.0 + x.exp()).ln()
    }
}

fn nearest_branch(value: Complex64, target: Complex64) -> Complex64 {
    let k = ((target - value).im / (2.0 * PI)).round();
    value + 2.0 * PI * I * k
}

/// Continuous branch of `ln(1 + exp(log_a))` along the closed node sequence.
///
/// Starts from the principal value at node 0 and predicts each next value
/// with the trapezoidal rule for `d ln(1 + a) = a / (1 + a) d ln a`. Returns
/// the values and the closure mismatch divided by `2 pi i`.
pub fn track_log1p(log_a: &[Complex64]) -> (Vec<Complex64>, Complex64) {
    let n = log_a.len();
    if n == 0 {
        return (Vec::new(), Complex64::new(0.0, 0.0));
    }
    let frac = |x: Complex64| {
        // a / (1 + a) = 1 / (1 + e^-x)
        if x.re > 0.0 { 1.0 / (1.0 + (-x).exp()) } else { x.exp() / (1.0 + x.exp()) }
    };
    let mut out = Vec::with_capacity(n);
    out.push(log1p_exp(log_a[0]));
    let mut prev_frac = frac(log_a[0]);
    for k in 1..n {
        let fk = frac(log_a[k]);
        let pred = out[k - 1] + 0.5 * (fk + prev_frac) * (log_a[k] - log_a[k - 1]);
        out.push(nearest_branch(log1p_exp(log_a[k]), pred));
        prev_frac = fk;
    }
    let pred = out[n - 1] + 0.5 * (frac(log_a[0]) + prev_frac) * (log_a[0] - log_a[n - 1]);
    let winding = (pred - out[0]) / (2.0 * PI * I);
    (out, winding)
}

/// Continuous branch of `sum_k c_k ln sh(l_j + s_k)` along a node sequence,
/// each logarithm unwrapped separately.
fn unwrapped_log_sinh_sum(nodes: &[Complex64], terms: &[(f64, Complex64)]) -> Vec<Complex64> {
    let mut total = vec![Complex64::new(0.0, 0.0); nodes.len()];
    for &(c, s) in terms {
        let mut prev: Option<Complex64> = None;
        for (j, z) in nodes.iter().enumerate() {
            let mut v = ln_sinh(z + s);
            if let Some(p) = prev {
                v = nearest_branch(v, p);
            }
            prev = Some(v);
            total[j] += c * v;
        }
    }
    total
}

fn finite_terms(p: &ModelParams, n: usize) -> [(f64, Complex64); 4] {
    let b = p.beta / n as f64;
    let h = n as f64 / 2.0;
    [(h, -b), (h, b + p.eta), (-h, b), (-h, -b + p.eta)]
}

/// Points where the finite-`N` driving term is singular (mod `i pi`).
pub fn driving_singularities(p: &ModelParams, n: usize) -> [Complex64; 4] {
    let b = p.beta / n as f64;
    [b, -b, -b - p.eta, b - p.eta]
}

/// Driving term at arbitrary points (principal branch for finite `N`).
pub fn driving(p: &ModelParams, twist: Complex64, trotter: Trotter, lambda: Complex64) -> Complex64 {
    let base = -2.0 * twist * p.eta;
    match trotter {
        Trotter::Infinite => base - p.beta * bare_energy_raw(lambda, p.eta),
        Trotter::Finite(n) => {
            base + finite_terms(p, n).iter().map(|(c, s)| *c * ln_sinh(lambda + s)).sum::<Complex64>()
        }
    }
}

/// Kernel matrix `K(mu_k - mu_l) w_l / (2 pi i)` of a grid, reusable across
/// temperatures, fields and twists with the same `gamma`.
#[derive(Debug, Clone)]
pub struct NlieOperator {
    pub grid: QuadratureGrid,
    pub eta: Complex64,
    matrix: CMatrix,
}

impl NlieOperator {
    pub fn new(p: &ModelParams, grid: &QuadratureGrid) -> Self {
        let nodes = &grid.nodes;
        let w = &grid.weights;
        let eta = p.eta;
        let scale = 1.0 / (2.0 * PI * I);
        let matrix = linalg::assemble(grid.len(), |k, l| kernel_raw(nodes[k] - nodes[l], eta) * w[l] * scale);
        Self { grid: grid.clone(), eta, matrix }
    }

    fn driving_on_grid(&self, p: &ModelParams, twist: Complex64, trotter: Trotter) -> Result<Vec<Complex64>> {
        let nodes = &self.grid.nodes;
        let base = -2.0 * twist * p.eta;
        match trotter {
            Trotter::Infinite => Ok(nodes.iter().map(|z| base - p.beta * bare_energy_raw(*z, p.eta)).collect()),
            Trotter::Finite(n) => {
                check_finite_geometry(p, n, &self.grid)?;
                let v = unwrapped_log_sinh_sum(nodes, &finite_terms(p, n));
                Ok(v.into_iter().map(|x| x + base).collect())
            }
        }
    }

    /// Solve for the given twist and Trotter number, optionally warm-started.
    pub fn solve(
        &self,
        p: &ModelParams,
        twist: Complex64,
        trotter: Trotter,
        cfg: &IterConfig,
        initial: Option<&[Complex64]>,
    ) -> Result<AuxSolution> {
        if (p.eta - self.eta).norm() > 1e-15 {
            return Err(Error::InvalidParams("operator was built for a different eta".into()));
        }
        if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
            return Err(Error::InvalidParams(format!("damping {} outside (0, 1]", cfg.damping)));
        }
        let drv = self.driving_on_grid(p, twist, trotter)?;
        let mut la = match initial {
            Some(x) if x.len() == drv.len() => x.to_vec(),
            _ => drv.clone(),
        };
        let theta = cfg.damping;
        let mut residual = f64::INFINITY;
        for it in 0..=cfg.max_iter {
            let (l1p, winding) = track_log1p(&la);
            let conv = linalg::matvec(&self.matrix, &l1p);
            let rhs: Vec<Complex64> = drv.iter().zip(&conv).map(|(d, c)| d - c).collect();
            residual = linalg::sup_diff(&rhs, &la);
            if !residual.is_finite() {
                break;
            }
            if residual < cfg.tol {
                return Ok(AuxSolution {
                    grid: self.grid.clone(),
                    params: *p,
                    twist,
                    trotter,
                    log_a_values: la,
                    log1p_a_values: l1p,
                    winding,
                    iterations: it,
                    residual,
                });
            }
            for (x, r) in la.iter_mut().zip(&rhs) {
                *x = (1.0 - theta) * *x + theta * r;
            }
        }
        Err(Error::NoConvergence { iterations: cfg.max_iter, residual })
    }
}

fn check_finite_geometry(p: &ModelParams, n: usize, grid: &QuadratureGrid) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidParams(format!("Trotter number must be even and >= 2, got {n}")));
    }
    let b = p.beta / n as f64;
    let c = &grid.contour;
    if !(c.contains(b) && c.contains(-b)) {
        return Err(Error::OutOfDomain {
            at: b,
            reason: format!("+-beta/N must lie inside the contour of half-height {}", c.d),
        });
    }
    for s in driving_singularities(p, n) {
        for z in &grid.nodes {
            let distance = pole_distance(z - s);
            if distance < 1e-6 {
                return Err(Error::SingularDriving { at: s, distance });
            }
        }
    }
    Ok(())
}

/// Solve the Trotter-limit NLIE on `grid`.
pub fn solve_aux_limit(p: &ModelParams, twist: Complex64, grid: &QuadratureGrid, cfg: &IterConfig) -> Result<AuxSolution> {
    NlieOperator::new(p, grid).solve(p, twist, Trotter::Infinite, cfg, None)
}

/// Solve the finite-Trotter NLIE on `grid`.
pub fn solve_aux_finite(p: &ModelParams, twist: Complex64, n: usize, grid: &QuadratureGrid, cfg: &IterConfig) -> Result<AuxSolution> {
    NlieOperator::new(p, grid).solve(p, twist, Trotter::Finite(n), cfg, None)
}

impl AuxSolution {
    /// `ln a(lambda)` by re-evaluating the right-hand side of the equation.
    /// For finite `N` the driving term uses principal logarithms, so the
    /// result is defined modulo `2 pi i`.
    pub fn eval_log_aux(&self, lambda: Complex64) -> Result<Complex64> {
        let p = &self.params;
        let reduced = reduce_period(lambda);
        if reduced.im.abs() > p.gamma / 2.0 {
            return Err(Error::OutOfDomain {
                at: lambda,
                reason: format!("|Im lambda| mod pi must not exceed gamma/2 = {}", p.gamma / 2.0),
            });
        }
        if let Trotter::Finite(n) = self.trotter {
            for s in driving_singularities(p, n) {
                if pole_distance(lambda - s) < 1e-10 {
                    return Err(Error::OutOfDomain { at: lambda, reason: "driving term is singular here".into() });
                }
            }
        }
        let nodes = &self.grid.nodes;
        let conv: Complex64 = nodes
            .iter()
            .zip(&self.grid.weights)
            .zip(&self.log1p_a_values)
            .map(|((m, w), l)| kernel_raw(lambda - m, p.eta) * w * l)
            .sum::<Complex64>()
            / (2.0 * PI * I);
        Ok(driving(p, self.twist, self.trotter, lambda) - conv)
    }

    /// `a(lambda)` off the grid.
    pub fn eval_aux(&self, lambda: Complex64) -> Result<Complex64> {
        Ok(self.eval_log_aux(lambda)?.exp())
    }

    /// `a` at the grid nodes.
    pub fn aux_values(&self) -> Vec<Complex64> {
        self.log_a_values.iter().map(|x| x.exp()).collect()
    }

    /// `tau eta + oint e(mu - lambda) ln(1 + a(mu)) dmu / (2 pi i)`, the
    /// logarithm of the dominant eigenvalue for `lambda` inside the contour.
    pub fn log_eigenvalue(&self, lambda: Complex64) -> Result<Complex64> {
        self.check_interior(lambda)?;
        let eta = self.params.eta;
        let integral = self
            .grid
            .integrate_fn_indexed(|k, mu| bare_energy_raw(mu - lambda, eta) * self.log1p_a_values[k]);
        Ok(self.twist * eta + integral)
    }

    /// `oint ln(1 + a) dlambda / (2 pi i)`.
    pub fn log1p_integral(&self) -> Complex64 {
        self.grid.integrate(&self.log1p_a_values)
    }

    fn check_interior(&self, lambda: Complex64) -> Result<()> {
        let c = &self.grid.contour;
        let (dist, min) = self.grid.resolution(lambda);
        if !c.contains(lambda) || dist < min {
            return Err(Error::OutOfDomain {
                at: lambda,
                reason: format!("need a point inside the contour at distance >= {min:e}, got {dist:e}"),
            });
        }
        Ok(())
    }

    /// Whether `other` lives on the same grid with the same model.
    pub fn shares_grid(&self, other: &AuxSolution) -> bool {
        self.grid.nodes == other.grid.nodes && self.params == other.params && self.trotter == other.trotter
    }
}

impl AuxFunction for AuxSolution {
    fn params(&self) -> &ModelParams {
        &self.params
    }
    fn twist(&self) -> Complex64 {
        self.twist
    }
    fn aux(&self, lambda: Complex64) -> Result<Complex64> {
        self.eval_aux(lambda)
    }
}

/// Trotter-limit eigenvalue ratio
/// `rho(l) = exp(alpha eta + oint e(m - l) [ln(1 + a(m|k+alpha)) - ln(1 + a(m|k))] dm/(2 pi i))`
/// with `alpha = twist(sol_ka) - twist(sol_k)`.
pub fn rho_trotter_limit(sol_k: &AuxSolution, sol_ka: &AuxSolution, lambda: Complex64) -> Result<Complex64> {
    if !sol_k.shares_grid(sol_ka) {
        return Err(Error::MeasureMismatch("solutions live on different grids or models".into()));
    }
    Ok((sol_ka.log_eigenvalue(lambda)? - sol_k.log_eigenvalue(lambda)?).exp())
}

/// Phase of `a` along `[x0, x1] + i y`, sampled finely enough that
/// consecutive samples differ by less than `max_step` radians.
fn phase_samples(sol: &AuxSolution, x0: f64, x1: f64, y: f64, max_step: f64, coarse: usize) -> Result<Vec<(f64, f64)>> {
    let at = |x: f64| sol.eval_log_aux(Complex64::new(x, y)).map(|v| v.im);
    let xs: Vec<f64> = (0..=coarse).map(|i| x0 + (x1 - x0) * i as f64 / coarse as f64).collect();
    let vals = par::map(&xs, |x| at(*x));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, (&x, v)) in xs.iter().zip(vals).enumerate() {
        let v = v?;
        if i == 0 {
            out.push((x, v));
            continue;
        }
        let (xp, vp) = *out.last().expect("non-empty");
        refine_phase(&at, xp, vp, x, wrap_near(v, vp), max_step, &mut out, 0)?;
    }
    Ok(out)
}

fn wrap_near(v: f64, target: f64) -> f64 {
    v + 2.0 * PI * ((target - v) / (2.0 * PI)).round()
}

#[allow(clippy::too_many_arguments)]
fn refine_phase<F: Fn(f64) -> Result<f64>>(
    at: &F,
    x0: f64,
    v0: f64,
    x1: f64,
    v1: f64,
    max_step: f64,
    out: &mut Vec<(f64, f64)>,
    depth: usize,
) -> Result<()> {
    if (v1 - v0).abs() <= max_step || depth > 40 || x1 - x0 < 1e-9 {
        out.push((x1, v1));
        return Ok(());
    }
    let xm = 0.5 * (x0 + x1);
    let vm = wrap_near(at(xm)?, v0);
    refine_phase(at, x0, v0, xm, vm, max_step, out, depth + 1)?;
    let v1 = wrap_near(v1, vm);
    refine_phase(at, xm, vm, x1, v1, max_step, out, depth + 1)
}

fn newton_deflated<F: Fn(Complex64) -> Result<Complex64>>(f: &F, mut z: Complex64, known: &[Complex64]) -> Option<Complex64> {
    let h = 1e-6;
    for _ in 0..80 {
        let fz = f(z).ok()?;
        let df = (f(z + h).ok()? - f(z - h).ok()?) / (2.0 * h);
        let corr: Complex64 = known.iter().map(|r| 1.0 / (z - r)).sum();
        let denom = df - fz * corr;
        if !(denom.norm() > 0.0) {
            return None;
        }
        let mut dz = fz / denom;
        // Cap the step so a bad seed cannot jump across the strip.
        if dz.norm() > 0.5 {
            dz *= 0.5 / dz.norm();
        }
        z -= dz;
        if !(z.re.is_finite() && z.im.is_finite()) {
            return None;
        }
        if dz.norm() < 1e-15 * z.norm().max(1.0) {
            break;
        }
    }
    Some(z)
}

/// Zeros of `1 + a` strictly inside the contour of a finite-`N` solution.
///
/// Seeds come from the counting function: the phase of `a` along the real
/// axis crosses odd multiples of `pi` near each root. Each seed is polished
/// by Newton's method with deflation by the roots already found. If the
/// count is short, an interior mesh scan supplies further seeds.
pub fn locate_bethe_roots(sol: &AuxSolution) -> Result<Vec<Complex64>> {
    let Trotter::Finite(n) = sol.trotter else {
        return Err(Error::InvalidParams("root location needs a finite Trotter number".into()));
    };
    let expected = n / 2;
    let c = sol.grid.contour;
    let f = |z: Complex64| sol.eval_aux(z).map(|a| 1.0 + a);
    let mut roots: Vec<Complex64> = Vec::new();
    let accept = |z: Complex64, roots: &[Complex64]| {
        c.contains(z)
            && f(z).map(|v| v.norm() < 1e-9).unwrap_or(false)
            && roots.iter().all(|r| (z - r).norm() > 1e-7)
    };

    let xr = c.r * 0.995;
    // The zero of `a` at beta/N and its pole at -beta/N, both of order N/2,
    // sit at distance |beta/N| from the real axis; the initial sampling step
    // keeps the phase change per step well below pi.
    let b = (sol.params.beta / n as f64).norm();
    let coarse = sample_count(2.0 * xr, n as f64 / b);
    let samples = phase_samples(sol, -xr, xr, 0.0, 0.3, coarse)?;
    let mut seeds = Vec::new();
    for w in samples.windows(2) {
        let (xa, va) = w[0];
        let (xb, vb) = w[1];
        let ka = ((va - PI) / (2.0 * PI)).floor();
        let kb = ((vb - PI) / (2.0 * PI)).floor();
        if ka != kb {
            let target = PI + 2.0 * PI * ka.max(kb);
            let t = if vb != va { (target - va) / (vb - va) } else { 0.5 };
            seeds.push(Complex64::new(xa + t * (xb - xa), 0.0));
        }
    }
    for s in &seeds {
        if roots.len() >= expected {
            break;
        }
        if let Some(z) = newton_deflated(&f, *s, &roots) {
            if accept(z, &roots) {
                roots.push(z);
            }
        }
    }
    if roots.len() < expected {
        let (nx, ny) = (40usize, 12usize);
        let mut mesh = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = -xr + 2.0 * xr * (i as f64 + 0.5) / nx as f64;
                let y = c.d * 0.9 * (2.0 * (j as f64 + 0.5) / ny as f64 - 1.0);
                mesh.push(Complex64::new(x, y));
            }
        }
        let vals = par::map(&mesh, |z| f(*z).map(|v| v.norm()).unwrap_or(f64::INFINITY));
        let mut cand: Vec<(f64, Complex64)> = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let v = vals[j * nx + i];
                let mut is_min = v.is_finite();
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (jj, ii) = (j as i64 + dj, i as i64 + di);
                        if (dj, di) != (0, 0) && jj >= 0 && ii >= 0 && (jj as usize) < ny && (ii as usize) < nx {
                            is_min &= v <= vals[jj as usize * nx + ii as usize];
                        }
                    }
                }
                if is_min {
                    cand.push((v, mesh[j * nx + i]));
                }
            }
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, s) in cand {
            if roots.len() >= expected {
                break;
            }
            if let Some(z) = newton_deflated(&f, s, &roots) {
                if accept(z, &roots) {
                    roots.push(z);
                }
            }
        }
    }
    if roots.is_empty() && expected > 0 {
        return Err(Error::NewtonDivergence("no seed converged to a zero of 1 + a".into()));
    }
    if roots.len() != expected {
        return Err(Error::RootCountMismatch { found: roots.len(), expected });
    }
    roots.sort_by(|a, b| a.re.total_cmp(&b.re));
    Ok(roots)
}

fn sample_count(length: f64, max_rate: f64) -> usize {
    ((length * max_rate / 0.25).ceil() as usize).clamp(200, 1_000_000)
}

/// Winding number of `f` along the counterclockwise boundary of the
/// rectangle with corners `lo` (bottom-left) and `hi` (top-right).
///
/// `max_rate` bounds `|d arg f / d z|` on the boundary; it sets the initial
/// sampling step, after which steps are bisected until the phase changes by
/// less than 0.3 rad.
pub fn winding_number<F>(f: F, lo: Complex64, hi: Complex64, max_rate: f64) -> Result<f64>
where
    F: Fn(Complex64) -> Result<Complex64> + Sync,
{
    let corners = [lo, Complex64::new(hi.re, lo.im), hi, Complex64::new(lo.re, hi.im), lo];
    let mut total = 0.0;
    for w in corners.windows(2) {
        let (a, b) = (w[0], w[1]);
        let arg = |t: f64| f(a + (b - a) * t).map(|v| v.arg());
        let coarse = sample_count((b - a).norm(), max_rate);
        let ts: Vec<f64> = (0..=coarse).map(|i| i as f64 / coarse as f64).collect();
        let vals = par::map(&ts, |t| arg(*t));
        let mut prev: Option<(f64, f64)> = None;
        let mut pts = Vec::new();
        for (t, v) in ts.iter().zip(vals) {
            let v = v?;
            match prev {
                None => pts.push((*t, v)),
                Some((tp, vp)) => refine_phase(&arg, tp, vp, *t, wrap_near(v, vp), 0.3, &mut pts, 0)?,
            }
            prev = pts.last().copied();
        }
        total += pts.last().expect("samples").1 - pts[0].1;
    }
    Ok(total / (2.0 * PI))
}

/// Number of zeros of `1 + a` inside the contour by the argument principle.
///
/// `1 + a` also has a pole of order `N/2` at `-beta/N`, so the count uses
/// the largest rectangle inside the contour that excludes it: the strip
/// between `Im(-beta/N)/2` and `0.9 d` on the far side.
pub fn count_roots_argument_principle(sol: &AuxSolution) -> Result<f64> {
    let Trotter::Finite(n) = sol.trotter else {
        return Err(Error::InvalidParams("root counting needs a finite Trotter number".into()));
    };
    let c = sol.grid.contour;
    let pole = -sol.params.beta / n as f64;
    let (ylo, yhi) = if pole.im < 0.0 { (pole.im / 2.0, 0.9 * c.d) } else { (-0.9 * c.d, pole.im / 2.0) };
    let x = 0.98 * c.r;
    // Phase rate near the order-N/2 pole at distance |Im pole|/2 from the edge.
    let rate = n as f64 / pole.im.abs();
    winding_number(|z| sol.eval_aux(z).map(|a| 1.0 + a), Complex64::new(-x, ylo), Complex64::new(x, yhi), rate)
}
