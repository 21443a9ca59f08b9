//! Free energy and magnetization in the Trotter limit, with the
//! magnetization from the dressed charge, from the density `G` and from a
//! finite difference of the free energy.

use num_complex::Complex64;

use crate::contour::{build_nlie_grid, GridConfig, QuadratureGrid};
use crate::error::{Error, Result};
use crate::lie::{build_measure_from_values, dressed_trick_check, solve_g_plain, solve_sigma_plain, DressedCharge, GSolution, MeasureVariant, MeasureWeights, RhoBackend};
use crate::model::{bare_energy_raw, ModelParams};
use crate::nlie::{AuxSolution, IterConfig, NlieOperator, Trotter};
use crate::par;

/// Numerical settings for [`compute_thermo`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoConfig {
    pub grid: GridConfig,
    pub iter: IterConfig,
    /// Field step of the central differences.
    pub delta_h: f64,
}

impl Default for ThermoConfig {
    fn default() -> Self {
        Self { grid: GridConfig::default(), iter: IterConfig::default(), delta_h: 1e-4 }
    }
}

/// Observables at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermoResult {
    pub params: ModelParams,
    pub f: Complex64,
    pub m_sigma: Complex64,
    pub m_g: Complex64,
    /// `-(f(h + dh) - f(h - dh)) / (2 dh)`.
    pub m_fd: Complex64,
    /// Richardson combination of the `dh` and `dh/2` differences.
    pub m_fd_richardson: Complex64,
    pub nlie_residual: f64,
    pub nlie_iterations: usize,
    pub sigma_residual: f64,
    pub g_residual: f64,
    pub dressed_trick_residual: f64,
    pub condition: f64,
    pub nodes: usize,
}

impl ThermoResult {
    /// `|Im f| / max(1, |f|)`.
    pub fn f_imag_ratio(&self) -> f64 {
        self.f.im.abs() / self.f.norm().max(1.0)
    }
}

/// `f = -h/2 - T oint e(l) ln(1 + a(l)) dl / (2 pi i)`.
pub fn free_energy(sol: &AuxSolution, p: &ModelParams) -> Result<Complex64> {
    if sol.params != *p {
        return Err(Error::InvalidParams("solution belongs to different parameters".into()));
    }
    let integral = sol.grid.integrate_fn_indexed(|k, mu| bare_energy_raw(mu, p.eta) * sol.log1p_a_values[k]);
    Ok(-0.5 * p.h - p.t * integral)
}

/// Plain measure on the NLIE grid.
pub fn plain_measure(sol: &AuxSolution) -> Result<MeasureWeights> {
    build_measure_from_values(&sol.grid, &sol.params, sol.aux_values(), None, MeasureVariant::Plain, RhoBackend::None)
}

/// `m = -1/2 - oint e(-l) sigma(l) / (1 + a(l)) dl / (2 pi i)`.
pub fn magnetization_sigma(sigma: &DressedCharge, m: &MeasureWeights) -> Result<Complex64> {
    if sigma.values.len() != m.len() || m.variant != MeasureVariant::Plain {
        return Err(Error::MeasureMismatch("sigma must come from this plain measure".into()));
    }
    let eta = m.params.eta;
    let v: Vec<Complex64> = m.nodes().iter().zip(&sigma.values).map(|(z, s)| bare_energy_raw(-z, eta) * s).collect();
    Ok(-0.5 - m.integrate(&v))
}

/// `m = -1/2 - oint G(l) / (1 + a(l)) dl / (2 pi i)`.
pub fn magnetization_g(g: &GSolution, m: &MeasureWeights) -> Result<Complex64> {
    if g.values.len() != m.len() || m.variant != MeasureVariant::Plain {
        return Err(Error::MeasureMismatch("G must come from this plain measure".into()));
    }
    Ok(-0.5 - m.integrate(&g.values))
}

/// NLIE solutions at several fields sharing one operator.
pub struct FieldScan<'a> {
    op: &'a NlieOperator,
    base: &'a AuxSolution,
    iter: IterConfig,
}

impl<'a> FieldScan<'a> {
    pub fn new(op: &'a NlieOperator, base: &'a AuxSolution, iter: IterConfig) -> Self {
        Self { op, base, iter }
    }

    /// Solve at field `h`, warm-started from the base solution.
    pub fn solve(&self, h: f64) -> Result<AuxSolution> {
        let p = self.base.params.with_field(h)?;
        self.op.solve(&p, p.kappa, Trotter::Infinite, &self.iter, Some(&self.base.log_a_values))
    }

    /// Solutions at all `fields`, in order.
    pub fn solve_all(&self, fields: &[f64]) -> Result<Vec<AuxSolution>> {
        par::map(fields, |h| self.solve(*h)).into_iter().collect()
    }
}

/// `-(f(h + dh) - f(h - dh)) / (2 dh)` and its Richardson improvement from
/// the step `dh/2`.
pub fn magnetization_fd(scan: &FieldScan<'_>, delta_h: f64) -> Result<(Complex64, Complex64)> {
    let h = scan.base.params.h;
    let fields = [h + delta_h, h - delta_h, h + 0.5 * delta_h, h - 0.5 * delta_h];
    let sols = scan.solve_all(&fields)?;
    let f: Vec<Complex64> = sols.iter().map(|s| free_energy(s, &s.params)).collect::<Result<_>>()?;
    let d1 = -(f[0] - f[1]) / (2.0 * delta_h);
    let d2 = -(f[2] - f[3]) / delta_h;
    Ok((d1, (4.0 * d2 - d1) / 3.0))
}

/// `sigma(l) = -T [ln a(l|h + dh) - ln a(l|h - dh)] / (2 dh)` at the nodes.
pub fn sigma_via_h_derivative(scan: &FieldScan<'_>, delta_h: f64) -> Result<Vec<Complex64>> {
    let h = scan.base.params.h;
    let sols = scan.solve_all(&[h + delta_h, h - delta_h])?;
    let t = scan.base.params.t;
    Ok(sols[0]
        .log_a_values
        .iter()
        .zip(&sols[1].log_a_values)
        .map(|(a, b)| -t * (a - b) / (2.0 * delta_h))
        .collect())
}

/// All observables at `p` on the NLIE grid built from `cfg`.
pub fn compute_thermo(p: &ModelParams, cfg: &ThermoConfig) -> Result<ThermoResult> {
    let grid = build_nlie_grid(p, &cfg.grid, &[])?;
    compute_thermo_on(p, cfg, &grid)
}

/// [`compute_thermo`] on a given grid.
pub fn compute_thermo_on(p: &ModelParams, cfg: &ThermoConfig, grid: &QuadratureGrid) -> Result<ThermoResult> {
    let op = NlieOperator::new(p, grid);
    let sol = op.solve(p, p.kappa, Trotter::Infinite, &cfg.iter, None)?;
    let f = free_energy(&sol, p)?;
    let m = plain_measure(&sol)?;
    let sigma = solve_sigma_plain(&m)?;
    let g = solve_g_plain(&m)?;
    let m_sigma = magnetization_sigma(&sigma, &m)?;
    let m_g = magnetization_g(&g, &m)?;
    let dressed = dressed_trick_check(&sigma, &g, &m)?;
    let scan = FieldScan::new(&op, &sol, cfg.iter);
    let (m_fd, m_fd_richardson) = magnetization_fd(&scan, cfg.delta_h)?;
    Ok(ThermoResult {
        params: *p,
        f,
        m_sigma,
        m_g,
        m_fd,
        m_fd_richardson,
        nlie_residual: sol.residual,
        nlie_iterations: sol.iterations,
        sigma_residual: sigma.residual,
        g_residual: g.residual,
        dressed_trick_residual: dressed,
        condition: sigma.condition,
        nodes: grid.len(),
    })
}

/// Points of the `(T, h, gamma)` lattice at `J = 1`.
pub fn lattice_points() -> Vec<ModelParams> {
    use std::f64::consts::PI;
    let mut out = Vec::new();
    for gamma in [PI / 6.0, PI / 4.0, PI / 3.0] {
        for t in [0.2, 0.5, 1.0, 2.0] {
            for h in [0.0, 0.1, 0.5] {
                out.push(ModelParams::from_field(gamma, 1.0, t, h).expect("lattice parameters are valid"));
            }
        }
    }
    out
}

/// [`compute_thermo`] over many parameter points, results in input order.
pub fn sweep(points: &[ModelParams], cfg: &ThermoConfig) -> Vec<Result<ThermoResult>> {
    par::map(points, |p| compute_thermo(p, cfg))
}
