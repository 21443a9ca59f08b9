//! Nyström solvers for the linear integral equations on the contour: the
//! dressed charge `sigma` and the density `G`, each with the plain measure
//! `dm = dl / (2 pi i (1 + a))` and the deformed one
//! `dm = dl / (2 pi i rho (1 + a))`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::bethe::{rho_finite, QFunctionBundle};
use crate::contour::QuadratureGrid;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, Factored};
use crate::model::{bare_energy_raw, coth, kernel_alpha_raw, pole_distance, DisorderParam, ModelParams, I, POLE_FLOOR};
use crate::nlie::{rho_trotter_limit, AuxFunction, AuxSolution};
use crate::par;

/// Smallest admissible `|1 + a|` at a measure node.
pub const MEASURE_FLOOR: f64 = 1e-6;

/// Condition estimate above which a solve is flagged.
pub const ILL_CONDITIONED: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureVariant {
    /// `dl / (2 pi i (1 + a))`
    Plain,
    /// `dl / (2 pi i rho (1 + a))`
    Deformed,
}

/// Where the `rho` values of a deformed measure came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoBackend {
    None,
    FiniteN,
    TrotterLimit,
}

/// Per-node weights of the measure on a grid.
#[derive(Debug, Clone)]
pub struct MeasureWeights {
    pub grid: QuadratureGrid,
    pub weights: Vec<Complex64>,
    /// `a` at the nodes.
    pub aux_values: Vec<Complex64>,
    /// `rho` at the nodes; all ones for the plain variant.
    pub rho_values: Vec<Complex64>,
    pub variant: MeasureVariant,
    pub rho_backend: RhoBackend,
    pub params: ModelParams,
}

impl MeasureWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn nodes(&self) -> &[Complex64] {
        &self.grid.nodes
    }

    /// `oint dm f`.
    pub fn integrate(&self, values: &[Complex64]) -> Complex64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    fn same_as(&self, other: &MeasureWeights) -> bool {
        self.weights == other.weights && self.grid.nodes == other.grid.nodes
    }
}

/// Measure from `a` (and `rho`) already evaluated at the grid nodes.
pub fn build_measure_from_values(
    grid: &QuadratureGrid,
    params: &ModelParams,
    aux_values: Vec<Complex64>,
    rho_values: Option<Vec<Complex64>>,
    variant: MeasureVariant,
    rho_backend: RhoBackend,
) -> Result<MeasureWeights> {
    if aux_values.len() != grid.len() {
        return Err(Error::MeasureMismatch(format!("{} aux values for {} nodes", aux_values.len(), grid.len())));
    }
    let rho_values = match (variant, rho_values) {
        (MeasureVariant::Plain, None) => vec![Complex64::new(1.0, 0.0); grid.len()],
        (MeasureVariant::Plain, Some(_)) => {
            return Err(Error::MeasureMismatch("plain measure takes no rho values".into()));
        }
        (MeasureVariant::Deformed, None) => {
            return Err(Error::MeasureMismatch("deformed measure needs rho values".into()));
        }
        (MeasureVariant::Deformed, Some(r)) if r.len() != grid.len() => {
            return Err(Error::MeasureMismatch(format!("{} rho values for {} nodes", r.len(), grid.len())));
        }
        (MeasureVariant::Deformed, Some(r)) => r,
    };
    let scale = 1.0 / (2.0 * PI * I);
    let mut weights = Vec::with_capacity(grid.len());
    for (k, (a, rho)) in aux_values.iter().zip(&rho_values).enumerate() {
        let value = (1.0 + a).norm();
        if !(value >= MEASURE_FLOOR) {
            return Err(Error::MeasureSingular { node: grid.nodes[k], value });
        }
        weights.push(grid.weights[k] * scale / (rho * (1.0 + a)));
    }
    Ok(MeasureWeights { grid: grid.clone(), weights, aux_values, rho_values, variant, rho_backend, params: *params })
}

/// Measure on `grid` with `a` taken from any auxiliary-function provider.
pub fn build_measure<A: AuxFunction + ?Sized>(
    grid: &QuadratureGrid,
    aux: &A,
    rho_values: Option<Vec<Complex64>>,
    variant: MeasureVariant,
    rho_backend: RhoBackend,
) -> Result<MeasureWeights> {
    let values: Vec<Complex64> = par::map(&grid.nodes, |z| aux.aux(*z)).into_iter().collect::<Result<_>>()?;
    build_measure_from_values(grid, aux.params(), values, rho_values, variant, rho_backend)
}

/// Source of `a(l|kappa)` and `rho(l)` for the deformed equations.
pub trait DeformedBackend: Sync {
    fn params(&self) -> &ModelParams;
    fn kappa(&self) -> Complex64;
    fn alpha(&self) -> DisorderParam;
    fn aux(&self, lambda: Complex64) -> Result<Complex64>;
    fn rho(&self, lambda: Complex64) -> Result<Complex64>;
    fn kind(&self) -> RhoBackend;
}

impl DeformedBackend for QFunctionBundle {
    fn params(&self) -> &ModelParams {
        QFunctionBundle::params(self)
    }
    fn kappa(&self) -> Complex64 {
        QFunctionBundle::kappa(self)
    }
    fn alpha(&self) -> DisorderParam {
        self.alpha
    }
    fn aux(&self, lambda: Complex64) -> Result<Complex64> {
        self.state_k.aux(lambda)
    }
    fn rho(&self, lambda: Complex64) -> Result<Complex64> {
        rho_finite(self, lambda)
    }
    fn kind(&self) -> RhoBackend {
        RhoBackend::FiniteN
    }
}

/// Trotter-limit backend: NLIE solutions at `kappa` and `kappa + alpha` on
/// one grid.
#[derive(Debug, Clone)]
pub struct TrotterLimitPair {
    pub sol_k: AuxSolution,
    pub sol_ka: AuxSolution,
}

impl DeformedBackend for TrotterLimitPair {
    fn params(&self) -> &ModelParams {
        &self.sol_k.params
    }
    fn kappa(&self) -> Complex64 {
        self.sol_k.twist
    }
    fn alpha(&self) -> DisorderParam {
        DisorderParam::new(self.sol_ka.twist - self.sol_k.twist)
    }
    fn aux(&self, lambda: Complex64) -> Result<Complex64> {
        self.sol_k.eval_aux(lambda)
    }
    fn rho(&self, lambda: Complex64) -> Result<Complex64> {
        rho_trotter_limit(&self.sol_k, &self.sol_ka, lambda)
    }
    fn kind(&self) -> RhoBackend {
        RhoBackend::TrotterLimit
    }
}

/// Deformed measure on `grid` from a backend.
pub fn build_deformed_measure<B: DeformedBackend + ?Sized>(grid: &QuadratureGrid, backend: &B) -> Result<MeasureWeights> {
    let pairs: Vec<(Complex64, Complex64)> = par::map(&grid.nodes, |z| Ok((backend.aux(*z)?, backend.rho(*z)?)))
        .into_iter()
        .collect::<Result<_>>()?;
    let (aux, rho): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    build_measure_from_values(grid, backend.params(), aux, Some(rho), MeasureVariant::Deformed, backend.kind())
}

/// Result of one Nyström solve.
#[derive(Debug, Clone)]
pub struct NystromSolution {
    pub values: Vec<Complex64>,
    pub condition: f64,
    /// `sup |x - driving - A x|`.
    pub residual: f64,
    pub ill_conditioned: bool,
}

/// Factorized `I - A` with `A_kl = kernel(mu_k, mu_l) m_l`, reusable across
/// driving terms.
#[derive(Debug, Clone)]
pub struct NystromOperator {
    kernel: CMatrix,
    matrix: CMatrix,
    factored: Factored,
    condition: f64,
}

impl NystromOperator {
    pub fn new<K>(m: &MeasureWeights, kernel: K) -> Result<Self>
    where
        K: Fn(Complex64, Complex64) -> Complex64 + Sync + Send,
    {
        let nodes = m.nodes();
        let kmat = linalg::assemble(nodes.len(), |k, l| kernel(nodes[k], nodes[l]));
        Self::from_kernel_matrix(m, kmat)
    }

    fn from_kernel_matrix(m: &MeasureWeights, kernel: CMatrix) -> Result<Self> {
        let n = m.len();
        let mut matrix = kernel.clone();
        for (l, w) in m.weights.iter().enumerate() {
            for k in 0..n {
                matrix[(k, l)] *= w;
            }
        }
        let system = CMatrix::identity(n, n) - &matrix;
        let factored = Factored::new(system)?;
        let condition = factored.condition_estimate();
        Ok(Self { kernel, matrix, factored, condition })
    }

    /// Unweighted kernel matrix `kernel(mu_k, mu_l)`.
    pub fn kernel_matrix(&self) -> &CMatrix {
        &self.kernel
    }

    /// Weighted matrix `A`.
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, driving: &[Complex64]) -> Result<NystromSolution> {
        if driving.len() != self.matrix.nrows() {
            return Err(Error::MeasureMismatch(format!(
                "driving term of length {} for a {}-node system",
                driving.len(),
                self.matrix.nrows()
            )));
        }
        let values = self.factored.solve(driving)?;
        let ax = linalg::matvec(&self.matrix, &values);
        let residual = values
            .iter()
            .zip(driving)
            .zip(&ax)
            .map(|((x, d), a)| (x - d - a).norm())
            .fold(0.0, f64::max);
        Ok(NystromSolution { values, condition: self.condition, residual, ill_conditioned: self.condition > ILL_CONDITIONED })
    }
}

/// Solve `x = driving + A x` with `A_kl = kernel(mu_k, mu_l) m_l`.
pub fn nystrom_solve<K>(m: &MeasureWeights, kernel: K, driving: &[Complex64]) -> Result<NystromSolution>
where
    K: Fn(Complex64, Complex64) -> Complex64 + Sync + Send,
{
    NystromOperator::new(m, kernel)?.solve(driving)
}

/// Kernel data shared by all deformed and plain equations.
#[derive(Debug, Clone, Copy)]
struct KernelSpec {
    eta: Complex64,
    q_alpha: Complex64,
}

impl KernelSpec {
    fn new(p: &ModelParams, alpha: DisorderParam) -> Self {
        Self { eta: p.eta, q_alpha: p.q_pow(alpha.alpha) }
    }

    /// `K_alpha(z)`; reduces to `K(z)` at `alpha = 0`.
    fn eval(&self, z: Complex64) -> Complex64 {
        kernel_alpha_raw(z, self.eta, self.q_alpha)
    }
}

/// Operator of the `sigma` equation, `A_kl = K_alpha(mu_l - mu_k) m_l`.
pub fn sigma_operator(m: &MeasureWeights, alpha: DisorderParam) -> Result<NystromOperator> {
    let spec = KernelSpec::new(&m.params, alpha);
    NystromOperator::new(m, move |lk, ml| spec.eval(ml - lk))
}

/// Operator of the `G` equation, `A_kl = K_alpha(mu_k - mu_l) m_l`.
pub fn g_operator(m: &MeasureWeights, alpha: DisorderParam) -> Result<NystromOperator> {
    let spec = KernelSpec::new(&m.params, alpha);
    NystromOperator::new(m, move |lk, ml| spec.eval(lk - ml))
}

/// Node values of a solved linear equation plus what is needed to
/// evaluate it off the grid by natural interpolation.
#[derive(Debug, Clone)]
struct Interpolant {
    nodes: Vec<Complex64>,
    /// `m_l x_l`
    weighted: Vec<Complex64>,
    spec: KernelSpec,
}

impl Interpolant {
    fn new(m: &MeasureWeights, values: &[Complex64], spec: KernelSpec) -> Self {
        let weighted = m.weights.iter().zip(values).map(|(w, v)| w * v).collect();
        Self { nodes: m.grid.nodes.clone(), weighted, spec }
    }

    /// `sum_l K(arg(lambda, mu_l)) m_l x_l`.
    fn convolve(&self, lambda: Complex64, transposed: bool) -> Complex64 {
        self.nodes
            .iter()
            .zip(&self.weighted)
            .map(|(mu, wx)| {
                let z = if transposed { mu - lambda } else { lambda - mu };
                self.spec.eval(z) * wx
            })
            .sum()
    }
}

/// Dressed charge at the nodes.
#[derive(Debug, Clone)]
pub struct DressedCharge {
    pub values: Vec<Complex64>,
    pub alpha: DisorderParam,
    pub variant: MeasureVariant,
    pub residual: f64,
    pub condition: f64,
    pub ill_conditioned: bool,
    interp: Interpolant,
}

impl DressedCharge {
    /// Natural interpolation of the defining equation at `lambda`.
    pub fn eval(&self, lambda: Complex64) -> Complex64 {
        let transposed = self.variant == MeasureVariant::Deformed;
        1.0 + self.interp.convolve(lambda, transposed)
    }
}

fn dressed_from(m: &MeasureWeights, alpha: DisorderParam, op: &NystromOperator) -> Result<DressedCharge> {
    let ones = vec![Complex64::new(1.0, 0.0); m.len()];
    let sol = op.solve(&ones)?;
    Ok(DressedCharge {
        interp: Interpolant::new(m, &sol.values, KernelSpec::new(&m.params, alpha)),
        values: sol.values,
        alpha,
        variant: m.variant,
        residual: sol.residual,
        condition: sol.condition,
        ill_conditioned: sol.ill_conditioned,
    })
}

/// `sigma(l) = 1 + oint dm(m) sigma(m) K_alpha(m - l)` on a deformed measure.
pub fn solve_sigma_alpha(m: &MeasureWeights, alpha: DisorderParam) -> Result<DressedCharge> {
    if m.variant != MeasureVariant::Deformed {
        return Err(Error::MeasureMismatch("sigma_alpha needs the deformed measure".into()));
    }
    dressed_from(m, alpha, &sigma_operator(m, alpha)?)
}

/// `sigma(l) = 1 + oint dm(m) K(l - m) sigma(m)` on the plain measure.
pub fn solve_sigma_plain(m: &MeasureWeights) -> Result<DressedCharge> {
    if m.variant != MeasureVariant::Plain {
        return Err(Error::MeasureMismatch("plain sigma needs the plain measure".into()));
    }
    let alpha = DisorderParam::real(0.0);
    let spec = KernelSpec::new(&m.params, alpha);
    let op = NystromOperator::new(m, move |lk, ml| spec.eval(lk - ml))?;
    dressed_from(m, alpha, &op)
}

/// Which equation a [`GSolution`] solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GVariant {
    /// Driving `q^-alpha coth(l - nu - eta) - rho(nu) coth(l - nu)`, minus
    /// `K_alpha(l - nu) / (1 + a(nu))` when `continuation` holds that
    /// factor `1 / (1 + a(nu))` for `nu` outside the contour.
    Deformed { nu: Complex64, rho_nu: Complex64, continuation: Option<Complex64> },
    /// Driving `e(-l)`.
    Plain,
}

/// Solution of a `G` equation at the nodes.
#[derive(Debug, Clone)]
pub struct GSolution {
    pub values: Vec<Complex64>,
    pub alpha: DisorderParam,
    pub variant: GVariant,
    pub residual: f64,
    pub condition: f64,
    pub ill_conditioned: bool,
    interp: Interpolant,
}

impl GSolution {
    pub fn driving(&self, lambda: Complex64) -> Complex64 {
        driving_g(self.variant, self.interp.spec, lambda)
    }

    /// Natural interpolation of the defining equation at `lambda`.
    pub fn eval(&self, lambda: Complex64) -> Complex64 {
        self.driving(lambda) + self.interp.convolve(lambda, false)
    }

    pub fn nu(&self) -> Option<Complex64> {
        match self.variant {
            GVariant::Deformed { nu, .. } => Some(nu),
            GVariant::Plain => None,
        }
    }
}

fn driving_g(variant: GVariant, spec: KernelSpec, lambda: Complex64) -> Complex64 {
    let eta = spec.eta;
    match variant {
        GVariant::Plain => bare_energy_raw(-lambda, eta),
        GVariant::Deformed { nu, rho_nu, continuation } => {
            let base = coth(lambda - nu - eta) / spec.q_alpha - rho_nu * coth(lambda - nu);
            match continuation {
                Some(inv) => base - spec.eval(lambda - nu) * inv,
                None => base,
            }
        }
    }
}

fn check_nu_distance(grid: &QuadratureGrid, nu: Complex64) -> Result<()> {
    let (distance, required) = grid.resolution(nu);
    if distance < required {
        return Err(Error::NuTooCloseToContour { nu, distance, required });
    }
    Ok(())
}

/// Reusable solver of the deformed `G` equation for many `nu`.
#[derive(Debug, Clone)]
pub struct GSolver {
    pub measure: MeasureWeights,
    pub alpha: DisorderParam,
    op: NystromOperator,
    spec: KernelSpec,
}

impl GSolver {
    pub fn new(m: &MeasureWeights, alpha: DisorderParam) -> Result<Self> {
        if m.variant != MeasureVariant::Deformed {
            return Err(Error::MeasureMismatch("deformed G needs the deformed measure".into()));
        }
        Ok(Self { measure: m.clone(), alpha, op: g_operator(m, alpha)?, spec: KernelSpec::new(&m.params, alpha) })
    }

    pub fn operator(&self) -> &NystromOperator {
        &self.op
    }

    fn solve_variant(&self, variant: GVariant) -> Result<GSolution> {
        let drv: Vec<Complex64> = self.measure.nodes().iter().map(|z| driving_g(variant, self.spec, *z)).collect();
        let sol = self.op.solve(&drv)?;
        Ok(GSolution {
            interp: Interpolant::new(&self.measure, &sol.values, self.spec),
            values: sol.values,
            alpha: self.alpha,
            variant,
            residual: sol.residual,
            condition: sol.condition,
            ill_conditioned: sol.ill_conditioned,
        })
    }

    /// `G(l, nu)` for `nu` inside the contour.
    pub fn solve(&self, nu: Complex64, rho_nu: Complex64) -> Result<GSolution> {
        let grid = &self.measure.grid;
        if !grid.contour.contains(nu) {
            return Err(Error::OutOfDomain { at: nu, reason: "nu must lie inside the contour".into() });
        }
        check_nu_distance(grid, nu)?;
        self.solve_variant(GVariant::Deformed { nu, rho_nu, continuation: None })
    }

    /// Analytic continuation of `G(l, nu)` to `nu` outside the contour,
    /// given `a(nu)`.
    pub fn solve_continued(&self, nu: Complex64, rho_nu: Complex64, aux_nu: Complex64) -> Result<GSolution> {
        let grid = &self.measure.grid;
        if grid.contour.contains(nu) {
            return Err(Error::OutOfDomain { at: nu, reason: "continuation needs nu outside the contour".into() });
        }
        check_nu_distance(grid, nu)?;
        let denom = 1.0 + aux_nu;
        if denom.norm() < POLE_FLOOR {
            return Err(Error::PoleProximity { at: nu, distance: denom.norm() });
        }
        self.solve_variant(GVariant::Deformed { nu, rho_nu, continuation: Some(1.0 / denom) })
    }
}

/// `G(l, nu) = q^-alpha coth(l - nu - eta) - rho(nu) coth(l - nu) + oint dm(m) K_alpha(l - m) G(m, nu)`.
pub fn solve_g(m: &MeasureWeights, nu: Complex64, alpha: DisorderParam, rho_nu: Complex64) -> Result<GSolution> {
    GSolver::new(m, alpha)?.solve(nu, rho_nu)
}

/// `G(l) = e(-l) + oint dm(m) K(l - m) G(m)` on the plain measure.
pub fn solve_g_plain(m: &MeasureWeights) -> Result<GSolution> {
    if m.variant != MeasureVariant::Plain {
        return Err(Error::MeasureMismatch("plain G needs the plain measure".into()));
    }
    let alpha = DisorderParam::real(0.0);
    let spec = KernelSpec::new(&m.params, alpha);
    let op = NystromOperator::new(m, move |lk, ml| spec.eval(lk - ml))?;
    let drv: Vec<Complex64> = m.nodes().iter().map(|z| driving_g(GVariant::Plain, spec, *z)).collect();
    let sol = op.solve(&drv)?;
    Ok(GSolution {
        interp: Interpolant::new(m, &sol.values, spec),
        values: sol.values,
        alpha,
        variant: GVariant::Plain,
        residual: sol.residual,
        condition: sol.condition,
        ill_conditioned: sol.ill_conditioned,
    })
}

/// Difference of the two sides of the dressed-function trick: with `p` the
/// driving term of `G` and `1` that of `sigma`,
/// `|oint dm G - oint dm sigma p|`.
pub fn dressed_trick_check(sigma: &DressedCharge, g: &GSolution, m: &MeasureWeights) -> Result<f64> {
    if sigma.values.len() != m.len() || g.values.len() != m.len() {
        return Err(Error::MeasureMismatch("solutions and measure have different sizes".into()));
    }
    if sigma.interp.nodes != m.grid.nodes || g.interp.nodes != m.grid.nodes || sigma.alpha != g.alpha {
        return Err(Error::MeasureMismatch("solutions were not obtained on this measure".into()));
    }
    let lhs = m.integrate(&g.values);
    let drv: Vec<Complex64> = m.nodes().iter().map(|z| g.driving(*z)).collect();
    let weighted: Vec<Complex64> = sigma.values.iter().zip(&drv).map(|(s, d)| s * d).collect();
    Ok((lhs - m.integrate(&weighted)).norm())
}

/// `oint dm(l) r(l) x(l) - oint dm(l) p(l) y(l)` where `x = p + A_G x` and
/// `y = r + A_sigma y` share the same measure.
pub fn duality_residual(m: &MeasureWeights, alpha: DisorderParam, p: &[Complex64], r: &[Complex64]) -> Result<f64> {
    let x = g_operator(m, alpha)?.solve(p)?.values;
    let y = sigma_operator(m, alpha)?.solve(r)?.values;
    let a: Vec<Complex64> = r.iter().zip(&x).map(|(u, v)| u * v).collect();
    let b: Vec<Complex64> = p.iter().zip(&y).map(|(u, v)| u * v).collect();
    Ok((m.integrate(&a) - m.integrate(&b)).norm())
}

/// Approach `(l - nu) G(l, nu)` along four directions at distance `eps`;
/// returns the largest deviation from `-rho(nu)`.
pub fn pole_residue_check(g: &GSolution, eps: f64) -> Result<f64> {
    let GVariant::Deformed { nu, rho_nu, .. } = g.variant else {
        return Err(Error::InvalidParams("residue check applies to the deformed G".into()));
    };
    if pole_distance(Complex64::new(eps, 0.0)) < POLE_FLOOR {
        return Err(Error::InvalidParams("approach distance too small".into()));
    }
    let dirs = [Complex64::new(1.0, 0.0), I, Complex64::new(-1.0, 0.0), -I];
    Ok(dirs
        .iter()
        .map(|d| {
            let z = nu + eps * d;
            ((z - nu) * g.eval(z) + rho_nu).norm()
        })
        .fold(0.0, f64::max))
}

/// Whether two measures coincide node by node.
pub fn same_measure(a: &MeasureWeights, b: &MeasureWeights) -> bool {
    a.same_as(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bethe::{sigma_from_phi, QFunctionBundle};
    use crate::contour::{build_nested_grids, build_nlie_grid, GridConfig};
    use crate::nlie::{solve_aux_limit, IterConfig, NlieOperator, Trotter};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn baseline() -> ModelParams {
        ModelParams::from_field(PI / 4.0, 1.0, 1.0, 0.2).unwrap()
    }

    fn plain_measure(p: &ModelParams, cfg: &GridConfig) -> (MeasureWeights, AuxSolution) {
        let outer = build_nlie_grid(p, cfg, &[]).unwrap();
        let sol = solve_aux_limit(p, p.kappa, &outer, &IterConfig::default()).unwrap();
        let m = build_measure_from_values(&outer, p, sol.aux_values(), None, MeasureVariant::Plain, RhoBackend::None).unwrap();
        (m, sol)
    }

    fn bundle(alpha: Complex64) -> QFunctionBundle {
        QFunctionBundle::solve(&baseline(), DisorderParam::new(alpha), 8, &GridConfig::default(), &IterConfig::default())
            .unwrap()
    }

    fn deformed(b: &QFunctionBundle) -> MeasureWeights {
        let grid = build_nlie_grid(b.params(), &GridConfig::default(), &[]).unwrap();
        build_deformed_measure(&grid, b).unwrap()
    }

    #[test]
    fn free_spin_measure_is_constant() {
        let p = ModelParams::from_field(PI / 4.0, 0.0, 1.0, 0.6).unwrap();
        let (m, _) = plain_measure(&p, &GridConfig::default());
        let expected = 1.0 / (1.0 + p.q_pow(-2.0 * p.kappa));
        for (w, g) in m.weights.iter().zip(&m.grid.weights) {
            assert!((w - g / (2.0 * PI * I) * expected).norm() < 1e-14);
        }
        assert!(m.integrate(&vec![c(1.0, 0.0); m.len()]).norm() < 1e-14);
        let sigma = solve_sigma_plain(&m).unwrap();
        let g = solve_g_plain(&m).unwrap();
        // The pole of e(-l) at 0 is the only singularity of the integrand
        // inside the contour, so G = e(-l) - K(l) / (1 + a).
        for (k, z) in m.nodes().iter().enumerate() {
            assert!((sigma.values[k] - 1.0).norm() < 1e-10);
            let oracle = bare_energy_raw(-z, p.eta) - crate::model::kernel_raw(*z, p.eta) * expected;
            assert!((g.values[k] - oracle).norm() < 1e-10);
        }
        assert!(dressed_trick_check(&sigma, &g, &m).unwrap() < 1e-12);
    }

    #[test]
    fn zero_alpha_deformed_equals_plain() {
        let p = baseline();
        let (m, sol) = plain_measure(&p, &GridConfig::default());
        let ones = vec![c(1.0, 0.0); m.len()];
        let d = build_measure_from_values(&m.grid, &p, sol.aux_values(), Some(ones), MeasureVariant::Deformed, RhoBackend::TrotterLimit)
            .unwrap();
        assert_eq!(d.weights, m.weights);
        let interp = build_measure(&m.grid, &sol, None, MeasureVariant::Plain, RhoBackend::None).unwrap();
        assert!(linalg::sup_diff(&interp.weights, &m.weights) < 1e-12);
        let s_plain = solve_sigma_plain(&m).unwrap();
        let s_def = solve_sigma_alpha(&d, DisorderParam::real(0.0)).unwrap();
        assert!(linalg::sup_diff(&s_plain.values, &s_def.values) < 1e-12);
    }

    #[test]
    fn measure_rejects_roots_on_the_contour() {
        let p = baseline();
        let (m, _) = plain_measure(&p, &GridConfig::default());
        let mut aux = m.aux_values.clone();
        aux[3] = c(-1.0 + 1e-8, 0.0);
        let r = build_measure_from_values(&m.grid, &p, aux, None, MeasureVariant::Plain, RhoBackend::None);
        assert!(matches!(r, Err(Error::MeasureSingular { .. })));
        let r = build_measure_from_values(&m.grid, &p, m.aux_values.clone(), None, MeasureVariant::Deformed, RhoBackend::FiniteN);
        assert!(matches!(r, Err(Error::MeasureMismatch(_))));
    }

    #[test]
    fn nystrom_basics() {
        let p = baseline();
        let (m, _) = plain_measure(&p, &GridConfig::default());
        let drv: Vec<Complex64> = m.nodes().iter().map(|z| z.sinh()).collect();
        let zero = nystrom_solve(&m, |_, _| c(0.0, 0.0), &drv).unwrap();
        assert_eq!(zero.values, drv);
        let eta = p.eta;
        let sol = nystrom_solve(&m, move |a, b| kernel_alpha_raw(a - b, eta, c(1.0, 0.0)), &drv).unwrap();
        assert!(sol.residual < 1e-12, "{}", sol.residual);
        assert!(!sol.ill_conditioned && sol.condition >= 1.0);
    }

    #[test]
    fn plain_equations_are_real_and_dual() {
        let p = baseline();
        let (m, _) = plain_measure(&p, &GridConfig::default());
        let sigma = solve_sigma_plain(&m).unwrap();
        let g = solve_g_plain(&m).unwrap();
        assert!(sigma.residual < 1e-12 && g.residual < 1e-12);
        // Real on the real axis only at zero field; at finite field only
        // the symmetric point l = 0 stays real.
        assert!(sigma.eval(c(0.0, 0.0)).im.abs() < 1e-9);
        let p0 = p.with_field(0.0).unwrap();
        let (m0, _) = plain_measure(&p0, &GridConfig::default());
        assert!(solve_sigma_plain(&m0).unwrap().eval(c(0.3, 0.0)).im.abs() < 1e-9);
        assert!(dressed_trick_check(&sigma, &g, &m).unwrap() < 1e-9);
        for k in [0, 17, 40] {
            let z = m.nodes()[k];
            assert!((sigma.eval(z) - sigma.values[k]).norm() < 10.0 * sigma.residual.max(1e-13));
        }
        for z in [c(0.1, 0.05), c(-0.7, 0.1), c(1.3, -0.12), c(0.4, 0.0), c(2.0, 0.03)] {
            assert!((sigma.eval(z + I * PI) - sigma.eval(z)).norm() < 1e-10);
            assert!((g.eval(z + I * PI) - g.eval(z)).norm() < 1e-10);
        }
    }

    #[test]
    fn plain_grid_doubling() {
        let p = baseline();
        let cfg = GridConfig::default();
        let (m1, _) = plain_measure(&p, &cfg);
        let (m2, _) = plain_measure(&p, &cfg.doubled());
        let (s1, s2) = (solve_sigma_plain(&m1).unwrap(), solve_sigma_plain(&m2).unwrap());
        let (g1, g2) = (solve_g_plain(&m1).unwrap(), solve_g_plain(&m2).unwrap());
        for z in [c(0.2, 0.0), c(0.5, 0.05), c(-1.0, -0.1)] {
            assert!((s1.eval(z) - s2.eval(z)).norm() < 1e-9);
            assert!((g1.eval(z) - g2.eval(z)).norm() < 1e-9);
        }
    }

    #[test]
    fn sigma_matches_q_function_form() {
        let b = bundle(c(0.2, 0.0));
        let m = deformed(&b);
        let sigma = solve_sigma_alpha(&m, b.alpha).unwrap();
        assert!(sigma.residual < 1e-10);
        let err = m
            .nodes()
            .iter()
            .zip(&sigma.values)
            .map(|(z, s)| (s - sigma_from_phi(&b, *z).unwrap()).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn one_point_identity_and_dressed_trick() {
        for alpha in [c(0.2, 0.0), c(0.0, 0.3)] {
            let b = bundle(alpha);
            let m = deformed(&b);
            let solver = GSolver::new(&m, b.alpha).unwrap();
            let sigma = solve_sigma_alpha(&m, b.alpha).unwrap();
            let qa = b.q_alpha();
            for nu in [c(0.0, 0.0), c(0.1, 0.0), c(-0.2, 0.05)] {
                let rho_nu = rho_finite(&b, nu).unwrap();
                let g = solver.solve(nu, rho_nu).unwrap();
                assert!(g.residual < 1e-10);
                let lhs = m.integrate(&g.values);
                let rhs = (1.0 / qa - rho_nu) / (qa - 1.0 / qa);
                assert!((lhs - rhs).norm() < 1e-8, "{alpha} {nu}: {}", (lhs - rhs).norm());
                assert!(dressed_trick_check(&sigma, &g, &m).unwrap() < 1e-9);
                assert!(pole_residue_check(&g, 1e-7).unwrap() < 1e-6);
            }
        }
    }

    #[test]
    fn transpose_duality_is_exact() {
        let b = bundle(c(0.2, 0.0));
        let m = deformed(&b);
        let gs = g_operator(&m, b.alpha).unwrap();
        let ss = sigma_operator(&m, b.alpha).unwrap();
        assert_eq!(gs.kernel_matrix(), &ss.kernel_matrix().transpose());
        let p: Vec<Complex64> = m.nodes().iter().map(|z| (0.3 * z).cosh()).collect();
        let r: Vec<Complex64> = m.nodes().iter().map(|z| z.tanh() + 0.5).collect();
        assert!(duality_residual(&m, b.alpha, &p, &r).unwrap() < 1e-11);
    }

    #[test]
    fn g_decays_and_rejects_close_nu() {
        let b = bundle(c(0.2, 0.0));
        let m = deformed(&b);
        let solver = GSolver::new(&m, b.alpha).unwrap();
        let nu = c(0.1, 0.0);
        let g = solver.solve(nu, rho_finite(&b, nu).unwrap()).unwrap();
        let mut prev = f64::INFINITY;
        for x in [6.0, 8.0, 10.0] {
            let v = g.eval(c(x, 0.0)).norm();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-4);
        let edge = c(0.3, m.grid.contour.d - 1e-4);
        assert!(matches!(solver.solve(edge, c(1.0, 0.0)), Err(Error::NuTooCloseToContour { .. })));
    }

    #[test]
    fn small_alpha_approaches_plain_dressed_charge() {
        let p = baseline();
        let cfg = GridConfig::default();
        let (outer, work) = build_nested_grids(&p, &cfg).unwrap();
        let op = NlieOperator::new(&p, &outer);
        let it = IterConfig::default();
        let sol_k = op.solve(&p, p.kappa, Trotter::Infinite, &it, None).unwrap();
        let plain = build_measure(&work, &sol_k, None, MeasureVariant::Plain, RhoBackend::None).unwrap();
        let s0 = solve_sigma_plain(&plain).unwrap();
        let alpha = 1e-6;
        let sol_ka = op.solve(&p, p.kappa + alpha, Trotter::Infinite, &it, Some(&sol_k.log_a_values)).unwrap();
        let pair = TrotterLimitPair { sol_k, sol_ka };
        let m = build_deformed_measure(&work, &pair).unwrap();
        let s = solve_sigma_alpha(&m, pair.alpha()).unwrap();
        let diff = linalg::sup_diff(&s.values, &s0.values);
        assert!(diff < 1e-4 && diff > 0.0, "{diff}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn free_spin_sigma_is_one(t in 0.3f64..2.0, h in -1.0f64..1.0) {
            let p = ModelParams::from_field(PI / 4.0, 0.0, t, h).unwrap();
            let cfg = GridConfig::default();
            let outer = build_nlie_grid(&p, &cfg, &[]).unwrap();
            let a = p.q_pow(-2.0 * p.kappa);
            let m = build_measure_from_values(&outer, &p, vec![a; outer.len()], None, MeasureVariant::Plain, RhoBackend::None).unwrap();
            let sigma = solve_sigma_plain(&m).unwrap();
            prop_assert!(sigma.values.iter().all(|s| (s - 1.0).norm() < 1e-10));
        }
    }
}
