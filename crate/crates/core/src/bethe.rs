//! Finite-Trotter Q-functions: Bethe roots, the t-Q eigenvalue, the ratios
//! `rho` and `phi`, the closed form of the deformed dressed charge, and an
//! exact-diagonalization oracle for small Trotter numbers.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::contour::{build_adaptive_grid, build_nlie_grid, Contour, GridConfig, PanelRule, QuadratureGrid};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::{coth, ln_sinh, pole_distance, reduce_period, DisorderParam, ModelParams, ALPHA_FLOOR, I, POLE_FLOOR};
use crate::nlie::{driving_singularities, locate_bethe_roots, track_log1p, AuxFunction, AuxSolution, IterConfig, NlieOperator, Trotter};

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn check_trotter(n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidParams(format!("Trotter number must be even and >= 2, got {n}")));
    }
    Ok(())
}

fn check_pole(z: Complex64) -> Result<()> {
    let distance = pole_distance(z);
    if distance < POLE_FLOOR {
        return Err(Error::PoleProximity { at: z, distance });
    }
    Ok(())
}

/// Pseudo-vacuum eigenvalues
/// `a(l) = [sh(l + b) / sh(l + b - eta)]^(N/2)` and
/// `d(l) = [sh(l - b) / sh(l - b + eta)]^(N/2)` with `b = beta / N`.
pub fn vacuum_eigenvalues(lambda: Complex64, n: usize, p: &ModelParams) -> Result<(Complex64, Complex64)> {
    check_trotter(n)?;
    let b = p.beta / n as f64;
    check_pole(lambda + b - p.eta)?;
    check_pole(lambda - b + p.eta)?;
    let m = (n / 2) as i32;
    let a = ((lambda + b).sinh() / (lambda + b - p.eta).sinh()).powi(m);
    let d = ((lambda - b).sinh() / (lambda - b + p.eta).sinh()).powi(m);
    Ok((a, d))
}

/// Bethe roots of the dominant state at one twist.
#[derive(Debug, Clone, PartialEq)]
pub struct BetheState {
    pub n: usize,
    pub twist: Complex64,
    pub roots: Vec<Complex64>,
    pub params: ModelParams,
}

impl BetheState {
    /// `ln Q(lambda)` on an arbitrary branch.
    pub fn log_q(&self, lambda: Complex64) -> Complex64 {
        self.roots.iter().map(|r| ln_sinh(lambda - r)).sum()
    }

    /// Distance from `lambda` to the nearest root.
    pub fn root_distance(&self, lambda: Complex64) -> f64 {
        self.roots.iter().map(|r| pole_distance(lambda - r)).fold(f64::INFINITY, f64::min)
    }

    /// `a(l) = q^(-2 tau) d(l) Q(l + eta) / (a(l) Q(l - eta))`.
    pub fn aux(&self, lambda: Complex64) -> Result<Complex64> {
        let p = &self.params;
        let (a, d) = vacuum_eigenvalues(lambda, self.n, p)?;
        if self.root_distance(lambda - p.eta) < POLE_FLOOR {
            return Err(Error::PoleProximity { at: lambda, distance: self.root_distance(lambda - p.eta) });
        }
        Ok(p.q_pow(-2.0 * self.twist) * d / a * (self.log_q(lambda + p.eta) - self.log_q(lambda - p.eta)).exp())
    }

    /// Logarithmic Bethe equations `ln a(l_j) - i pi`, reduced mod `2 pi i`.
    pub fn bethe_function(&self) -> Vec<Complex64> {
        bethe_system(&self.roots, self.n, self.twist, &self.params)
    }

    /// `max_j |1 + a(l_j)|`.
    pub fn bethe_residual(&self) -> f64 {
        self.roots
            .iter()
            .map(|r| self.aux(*r).map(|a| (1.0 + a).norm()).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }
}

impl AuxFunction for BetheState {
    fn params(&self) -> &ModelParams {
        &self.params
    }
    fn twist(&self) -> Complex64 {
        self.twist
    }
    fn aux(&self, lambda: Complex64) -> Result<Complex64> {
        BetheState::aux(self, lambda)
    }
}

fn reduce_2pi_i(z: Complex64) -> Complex64 {
    z - 2.0 * PI * I * (z.im / (2.0 * PI)).round()
}

fn bethe_system(roots: &[Complex64], n: usize, twist: Complex64, p: &ModelParams) -> Vec<Complex64> {
    let b = p.beta / n as f64;
    let eta = p.eta;
    let h = n as f64 / 2.0;
    roots
        .iter()
        .map(|l| {
            let mut v = -2.0 * twist * eta
                + h * (ln_sinh(l - b) - ln_sinh(l - b + eta) - ln_sinh(l + b) + ln_sinh(l + b - eta));
            for r in roots {
                v += ln_sinh(l - r + eta) - ln_sinh(l - r - eta);
            }
            reduce_2pi_i(v - PI * I)
        })
        .collect()
}

fn bethe_jacobian(roots: &[Complex64], n: usize, p: &ModelParams) -> CMatrix {
    let b = p.beta / n as f64;
    let eta = p.eta;
    let h = n as f64 / 2.0;
    let m = roots.len();
    let mut jac = CMatrix::zeros(m, m);
    for (j, l) in roots.iter().enumerate() {
        let mut diag = h * (coth(l - b) - coth(l - b + eta) - coth(l + b) + coth(l + b - eta));
        for (k, r) in roots.iter().enumerate() {
            if k != j {
                let plus = coth(l - r + eta);
                let minus = coth(l - r - eta);
                diag += plus - minus;
                jac[(j, k)] = -plus + minus;
            }
        }
        jac[(j, j)] = diag;
    }
    jac
}

fn sup(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

fn check_collisions(roots: &[Complex64]) -> Result<()> {
    for (i, a) in roots.iter().enumerate() {
        for b in &roots[i + 1..] {
            if (a - b).norm() < 1e-8 {
                return Err(Error::RootCollision(*a, *b));
            }
        }
    }
    Ok(())
}

/// Newton solution of the Bethe equations `a(l_j) = -1` starting from `initial`.
pub fn refine_roots(initial: &[Complex64], n: usize, twist: Complex64, p: &ModelParams) -> Result<BetheState> {
    check_trotter(n)?;
    if initial.len() != n / 2 {
        return Err(Error::RootCountMismatch { found: initial.len(), expected: n / 2 });
    }
    check_collisions(initial)?;
    let mut roots = initial.to_vec();
    let mut f = bethe_system(&roots, n, twist, p);
    let mut norm = sup(&f);
    for _ in 0..100 {
        if norm < 1e-14 {
            break;
        }
        let jac = bethe_jacobian(&roots, n, p);
        let step = jac
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&f))
            .ok_or_else(|| Error::NewtonDivergence("singular Bethe Jacobian".into()))?;
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-6 {
            let trial: Vec<Complex64> = roots.iter().zip(step.iter()).map(|(r, s)| r - t * s).collect();
            let ft = bethe_system(&trial, n, twist, p);
            let nt = sup(&ft);
            if nt.is_finite() && (nt < norm || nt < 1e-13) {
                let moved = t * step.iter().map(|s| s.norm()).fold(0.0, f64::max);
                roots = trial;
                f = ft;
                norm = nt;
                accepted = true;
                if moved < 1e-15 {
                    t = 0.0;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted || t == 0.0 {
            break;
        }
    }
    check_collisions(&roots)?;
    let state = BetheState { n, twist, roots, params: *p };
    let res = state.bethe_residual();
    if !(res < 1e-12) {
        return Err(Error::NewtonDivergence(format!("Bethe residual {res:e} after Newton iteration")));
    }
    Ok(state)
}

/// Whether the finite-`N` NLIE can be posed on the outer contour of `cfg`.
pub fn nlie_feasible(p: &ModelParams, n: usize, cfg: &GridConfig) -> bool {
    (p.beta / n as f64).norm() <= 0.6 * cfg.d_outer * p.gamma
}

/// Roots from the finite-`N` NLIE, refined by Newton's method.
pub fn roots_from_nlie(p: &ModelParams, twist: Complex64, n: usize, cfg: &GridConfig, iter: &IterConfig) -> Result<(BetheState, AuxSolution)> {
    let b = p.beta / n as f64;
    let grid = build_nlie_grid(p, cfg, &[b, -b])?;
    let sol = NlieOperator::new(p, &grid).solve(p, twist, Trotter::Finite(n), iter, None)?;
    let roots = locate_bethe_roots(&sol)?;
    Ok((refine_roots(&roots, n, twist, p)?, sol))
}

/// Dominant-state Bethe roots at any temperature.
///
/// When `|beta|/N` is too large for the NLIE contour, the roots are found at
/// a higher temperature (same twist) and followed down by Newton
/// continuation with adaptive steps in `ln T`.
pub fn solve_bethe_state(p: &ModelParams, twist: Complex64, n: usize, cfg: &GridConfig, iter: &IterConfig) -> Result<BetheState> {
    check_trotter(n)?;
    if nlie_feasible(p, n, cfg) {
        return Ok(roots_from_nlie(p, twist, n, cfg, iter)?.0);
    }
    let mut t0 = p.t;
    let mut start = p.with_temperature_fixed_twist(t0)?;
    while !nlie_feasible(&start, n, cfg) {
        t0 *= 1.2;
        start = p.with_temperature_fixed_twist(t0)?;
    }
    let (mut state, _) = roots_from_nlie(&start, twist, n, cfg, iter)?;
    continue_in_temperature(&mut state, p.t)?;
    Ok(state)
}

/// Follow `state` to temperature `target` (twist fixed).
pub fn continue_in_temperature(state: &mut BetheState, target: f64) -> Result<()> {
    let mut log_t = state.params.t.ln();
    let log_target = target.ln();
    let mut step = (log_target - log_t) / 40.0;
    while (log_target - log_t).abs() > 1e-15 {
        if step.abs() < 1e-7 {
            return Err(Error::NewtonDivergence(format!(
                "temperature continuation stalled at T = {}",
                log_t.exp()
            )));
        }
        let next = if (log_target - log_t).abs() <= step.abs() { log_target } else { log_t + step };
        let p = state.params.with_temperature_fixed_twist(next.exp())?;
        match refine_roots(&state.roots, state.n, state.twist, &p) {
            Ok(s) if s.roots.iter().zip(&state.roots).all(|(a, b)| (a - b).norm() < 0.25) => {
                *state = s;
                log_t = next;
                step *= 1.25;
            }
            _ => step *= 0.5,
        }
    }
    // Land exactly on the requested parameters.
    let p = state.params.with_temperature_fixed_twist(target)?;
    *state = refine_roots(&state.roots, state.n, state.twist, &p)?;
    Ok(())
}

/// `Q(lambda) = prod_j sh(lambda - lambda_j)`.
pub fn q_function(s: &BetheState, lambda: Complex64) -> Complex64 {
    s.roots.iter().map(|r| (lambda - r).sinh()).product()
}

fn lambda_raw(s: &BetheState, lambda: Complex64) -> Result<Complex64> {
    let p = &s.params;
    let (a, d) = vacuum_eigenvalues(lambda, s.n, p)?;
    let lq = s.log_q(lambda);
    Ok(p.q_pow(s.twist) * a * (s.log_q(lambda - p.eta) - lq).exp()
        + p.q_pow(-s.twist) * d * (s.log_q(lambda + p.eta) - lq).exp())
}

/// Eigenvalue from the t-Q relation together with a flag telling whether
/// `lambda` was within `1e-6` of a root, in which case the value is the
/// average at `lambda +- 1e-5`.
pub fn lambda_eigenvalue_flagged(s: &BetheState, lambda: Complex64) -> Result<(Complex64, bool)> {
    if s.root_distance(lambda) < 1e-6 {
        let h = 1e-5;
        let v = 0.5 * (lambda_raw(s, lambda + h)? + lambda_raw(s, lambda - h)?);
        return Ok((v, true));
    }
    Ok((lambda_raw(s, lambda)?, false))
}

/// `Lambda(l) = [q^tau a(l) Q(l - eta) + q^-tau d(l) Q(l + eta)] / Q(l)`.
pub fn lambda_eigenvalue(s: &BetheState, lambda: Complex64) -> Result<Complex64> {
    Ok(lambda_eigenvalue_flagged(s, lambda)?.0)
}

/// Largest deviation of `Lambda` on a circle of radius `1e-4` around a root
/// from its first-order Taylor polynomial, relative to `|Lambda|`. A pole at
/// the root would show up as a deviation of order `residue / 1e-4`.
pub fn pole_freeness_probe(s: &BetheState, root: Complex64) -> Result<f64> {
    let r = 1e-4;
    let m = 8;
    let zs: Vec<Complex64> = (0..m).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64)).collect();
    let vals: Vec<Complex64> = zs.iter().map(|u| lambda_raw(s, root + r * u)).collect::<Result<_>>()?;
    let mean: Complex64 = vals.iter().sum::<Complex64>() / m as f64;
    let slope: Complex64 = vals.iter().zip(&zs).map(|(v, u)| v * u.conj()).sum::<Complex64>() / m as f64;
    Ok(vals.iter().zip(&zs).map(|(v, u)| (v - mean - slope * u).norm()).fold(0.0, f64::max) / mean.norm())
}

/// Bethe states at twists `kappa` and `kappa + alpha` with the derived
/// constants `b = exp(sum_j (l_j(kappa) - l_j(kappa + alpha)))` and
/// `phi0 = (b + 1/b) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunctionBundle {
    pub state_k: BetheState,
    pub state_ka: BetheState,
    pub alpha: DisorderParam,
    pub b: Complex64,
    pub phi0: Complex64,
}

impl QFunctionBundle {
    pub fn new(state_k: BetheState, state_ka: BetheState) -> Result<Self> {
        if state_k.n != state_ka.n || state_k.params != state_ka.params {
            return Err(Error::InvalidParams("bundle states must share N and model parameters".into()));
        }
        let alpha = DisorderParam::new(state_ka.twist - state_k.twist);
        let shift: Complex64 = state_k.roots.iter().sum::<Complex64>() - state_ka.roots.iter().sum::<Complex64>();
        let b = shift.exp();
        Ok(Self { state_k, state_ka, alpha, b, phi0: 0.5 * (b + 1.0 / b) })
    }

    /// Solve both states for the model twist `p.kappa`.
    pub fn solve(p: &ModelParams, alpha: DisorderParam, n: usize, cfg: &GridConfig, iter: &IterConfig) -> Result<Self> {
        Self::solve_twist(p, p.kappa, alpha, n, cfg, iter)
    }

    pub fn solve_twist(p: &ModelParams, kappa: Complex64, alpha: DisorderParam, n: usize, cfg: &GridConfig, iter: &IterConfig) -> Result<Self> {
        let k = solve_bethe_state(p, kappa, n, cfg, iter)?;
        let ka = solve_bethe_state(p, kappa + alpha.alpha, n, cfg, iter)?;
        Self::new(k, ka)
    }

    pub fn params(&self) -> &ModelParams {
        &self.state_k.params
    }

    pub fn n(&self) -> usize {
        self.state_k.n
    }

    pub fn kappa(&self) -> Complex64 {
        self.state_k.twist
    }

    /// `q^alpha`.
    pub fn q_alpha(&self) -> Complex64 {
        self.params().q_pow(self.alpha.alpha)
    }
}

/// `rho(l) = Lambda(l | kappa + alpha) / Lambda(l | kappa)`.
pub fn rho_finite(bundle: &QFunctionBundle, lambda: Complex64) -> Result<Complex64> {
    Ok(lambda_eigenvalue(&bundle.state_ka, lambda)? / lambda_eigenvalue(&bundle.state_k, lambda)?)
}

/// `phi(l) = Q(l | kappa + alpha) / Q(l | kappa)`.
pub fn phi(bundle: &QFunctionBundle, lambda: Complex64) -> Result<Complex64> {
    let distance = bundle.state_k.root_distance(lambda);
    if distance < POLE_FLOOR {
        return Err(Error::PoleProximity { at: lambda, distance });
    }
    Ok((bundle.state_ka.log_q(lambda) - bundle.state_k.log_q(lambda)).exp())
}

/// `cosh(oint [ln(1 + a(l|kappa + alpha)) - ln(1 + a(l|kappa))] dl / (2 pi i))`
/// from two finite-`N` NLIE solutions on the same grid.
pub fn phi0_via_integral(sol_k: &AuxSolution, sol_ka: &AuxSolution) -> Result<Complex64> {
    if !sol_k.shares_grid(sol_ka) {
        return Err(Error::MeasureMismatch("solutions live on different grids or models".into()));
    }
    if !matches!(sol_k.trotter, Trotter::Finite(_)) {
        return Err(Error::InvalidParams("phi0 needs finite Trotter solutions".into()));
    }
    Ok((sol_ka.log1p_integral() - sol_k.log1p_integral()).cosh())
}

/// Continuous `ln(1 + a)` of the closed-form auxiliary function along a grid.
pub fn closed_form_log1p(state: &BetheState, grid: &QuadratureGrid) -> Result<Vec<Complex64>> {
    let mut log_a = Vec::with_capacity(grid.len());
    for z in &grid.nodes {
        let v = state.aux(*z)?.ln();
        let v = match log_a.last() {
            Some(prev) => reduce_2pi_i(v - prev) + prev,
            None => v,
        };
        log_a.push(v);
    }
    let (l, winding) = track_log1p(&log_a);
    if winding.norm() > 1e-6 {
        return Err(Error::InvalidContour(format!("ln(1 + a) winds {winding} times around the contour")));
    }
    Ok(l)
}

/// Contour enclosing the roots and `+-beta/N` for the closed-form integral
/// route, usable also when the NLIE itself is infeasible.
pub fn closed_form_grid(bundle: &QFunctionBundle, cfg: &GridConfig) -> Result<QuadratureGrid> {
    let p = bundle.params();
    let b = p.beta / bundle.n() as f64;
    if b.norm() >= 0.5 * p.gamma {
        return Err(Error::OutOfDomain { at: b, reason: "beta/N must lie below gamma/2".into() });
    }
    let d = (cfg.d_outer * p.gamma).max(0.5 * (b.norm() + 0.5 * p.gamma));
    let c = Contour::unchecked(cfg.r, d)?;
    let rule = PanelRule { order: cfg.order, max_len: 2.0 * d / cfg.density, ratio: cfg.ratio, min_len: 1e-6 };
    let mut pts: Vec<Complex64> = driving_singularities(p, bundle.n()).iter().map(|z| reduce_period(*z)).collect();
    pts.extend(bundle.state_k.roots.iter().chain(&bundle.state_ka.roots));
    build_adaptive_grid(c, &rule, &pts)
}

/// The integral representation of `phi0` evaluated with the closed-form
/// auxiliary functions of both states.
pub fn phi0_via_contour(bundle: &QFunctionBundle, grid: &QuadratureGrid) -> Result<Complex64> {
    let lk = closed_form_log1p(&bundle.state_k, grid)?;
    let lka = closed_form_log1p(&bundle.state_ka, grid)?;
    let diff: Vec<Complex64> = lka.iter().zip(&lk).map(|(a, b)| a - b).collect();
    Ok(grid.integrate(&diff).cosh())
}

/// `sigma(l) = [q^alpha phi(l - eta) - q^-alpha phi(l + eta)] / [phi0 (q^alpha - q^-alpha)]`.
pub fn sigma_from_phi(bundle: &QFunctionBundle, lambda: Complex64) -> Result<Complex64> {
    let p = bundle.params();
    let diff = bundle.alpha.checked_q_difference(p, ALPHA_FLOOR)?;
    let qa = bundle.q_alpha();
    Ok((qa * phi(bundle, lambda - p.eta)? - phi(bundle, lambda + p.eta)? / qa) / (bundle.phi0 * diff))
}

/// The `alpha -> 0` dressed charge
/// `1 + (1/2 eta) [d_kappa ln Q(l - eta) - d_kappa ln Q(l + eta)]`,
/// with the `kappa` derivative taken by central difference between the
/// states at `kappa - delta` and `kappa + delta`.
pub fn sigma_from_q_derivative(minus: &BetheState, plus: &BetheState, delta: f64, lambda: Complex64) -> Result<Complex64> {
    if minus.roots.len() != plus.roots.len() {
        return Err(Error::RootCountMismatch { found: plus.roots.len(), expected: minus.roots.len() });
    }
    let eta = minus.params.eta;
    let dlog = |z: Complex64| -> Complex64 {
        // pair each root with its nearest partner so the logarithms stay small
        minus
            .roots
            .iter()
            .map(|rm| {
                let rp = plus
                    .roots
                    .iter()
                    .min_by(|a, b| (*a - rm).norm().total_cmp(&(*b - rm).norm()))
                    .expect("non-empty");
                ((z - rp).sinh() / (z - rm).sinh()).ln()
            })
            .sum::<Complex64>()
            / (2.0 * delta)
    };
    Ok(1.0 + (dlog(lambda - eta) - dlog(lambda + eta)) / (2.0 * eta))
}

/// Residual of
/// `phi(l) = q^-alpha phi(l + eta) / rho(l) + [q^alpha phi(l - eta) - q^-alpha phi(l + eta)] / (rho(l) (1 + a(l|kappa)))`.
pub fn verify_id0(bundle: &QFunctionBundle, lambda: Complex64) -> Result<f64> {
    let p = bundle.params();
    let qa = bundle.q_alpha();
    let rho = rho_finite(bundle, lambda)?;
    let a = bundle.state_k.aux(lambda)?;
    let ph = phi(bundle, lambda)?;
    let up = phi(bundle, lambda + p.eta)?;
    let down = phi(bundle, lambda - p.eta)?;
    Ok((ph - up / qa / rho - (qa * down - up / qa) / (rho * (1.0 + a))).norm())
}

/// `(1 / 2 pi i) int phi(m) K_alpha(m - l) dm` over the two vertical sides
/// `Re m = +-r` of a rectangle of height `pi` (one period), traversed
/// counterclockwise.
pub fn vertical_period_integral(bundle: &QFunctionBundle, lambda: Complex64, r: f64) -> Result<Complex64> {
    let p = bundle.params();
    let qa = bundle.q_alpha();
    let y0 = -0.25 * p.gamma;
    let panels = 16;
    let rule = gauss_legendre_16();
    let mut total = zero();
    for (x, sign) in [(r, 1.0), (-r, -1.0)] {
        for k in 0..panels {
            let a = y0 + PI * k as f64 / panels as f64;
            let h = PI / panels as f64;
            for (t, w) in &rule {
                let y = a + 0.5 * h * (1.0 + t);
                let mu = Complex64::new(x, y);
                let ka = qa.inv() * coth_checked(mu - lambda - p.eta)? - qa * coth_checked(mu - lambda + p.eta)?;
                total += sign * phi(bundle, mu)? * ka * (0.5 * h * w) * I;
            }
        }
    }
    Ok(total / (2.0 * PI * I))
}

fn coth_checked(z: Complex64) -> Result<Complex64> {
    crate::model::coth_safe(z)
}

fn gauss_legendre_16() -> Vec<(f64, f64)> {
    let g = gauss_quad::GaussLegendre::new(std::num::NonZeroUsize::new(16).expect("non-zero"));
    g.as_node_weight_pairs().to_vec()
}

/// Residual of `int_{I2 + I4} phi(m) K_alpha(m - l) dm / (2 pi i) = -(b + 1/b)(q^alpha - q^-alpha)/2`
/// with vertical sides at `Re m = +-r`.
pub fn verify_id2(bundle: &QFunctionBundle, lambda: Complex64, r: f64) -> Result<f64> {
    let p = bundle.params();
    let margin = bundle
        .state_k
        .roots
        .iter()
        .chain(&bundle.state_ka.roots)
        .chain(std::iter::once(&lambda))
        .map(|z| r - z.re.abs())
        .fold(f64::INFINITY, f64::min);
    if margin < 0.5 {
        return Err(Error::OutOfDomain { at: lambda, reason: format!("vertical sides at +-{r} are too close to roots or lambda") });
    }
    let lhs = vertical_period_integral(bundle, lambda, r)?;
    let rhs = -(bundle.b + 1.0 / bundle.b) * bundle.alpha.q_difference(p) / 2.0;
    Ok((lhs - rhs).norm())
}

/// `|oint ln(1 + a) dl / (2 pi i) + sum_j l_j + beta / 2|` for a finite-`N`
/// NLIE solution and the Bethe roots of the same state.
pub fn sum_of_roots_residual(sol: &AuxSolution, state: &BetheState) -> Result<f64> {
    if sol.trotter != Trotter::Finite(state.n) || sol.params != state.params {
        return Err(Error::MeasureMismatch("solution and Bethe state describe different systems".into()));
    }
    let sum: Complex64 = state.roots.iter().sum();
    Ok((sol.log1p_integral() + sum + state.params.beta / 2.0).norm())
}

/// Largest `|a_closed - a_nlie| / (1 + |a_closed|)` over the NLIE nodes,
/// with `a_closed` rebuilt from the Bethe roots.
pub fn closed_form_mismatch(sol: &AuxSolution, state: &BetheState) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (z, la) in sol.grid.nodes.iter().zip(&sol.log_a_values) {
        let a = state.aux(*z)?;
        worst = worst.max((a - la.exp()).norm() / (1.0 + a.norm()));
    }
    Ok(worst)
}

/// Dense quantum transfer matrix for `N <= 6`.
#[derive(Debug, Clone)]
pub struct QtmOracle {
    pub n: usize,
    pub twist: Complex64,
    pub params: ModelParams,
}

/// Build the exact-diagonalization oracle.
pub fn qtm_exact_diag(n: usize, twist: Complex64, p: &ModelParams) -> Result<QtmOracle> {
    check_trotter(n)?;
    if n > 6 {
        return Err(Error::DimensionTooLarge(n));
    }
    Ok(QtmOracle { n, twist, params: *p })
}

fn site_operator(op: &[[Complex64; 2]; 2], site: usize, n: usize) -> CMatrix {
    let dim = 1usize << n;
    let shift = n - 1 - site;
    let mut m = CMatrix::zeros(dim, dim);
    for col in 0..dim {
        let s_in = (col >> shift) & 1;
        for s_out in 0..2 {
            let v = op[s_out][s_in];
            if v != zero() {
                let row = (col & !(1 << shift)) | (s_out << shift);
                m[(row, col)] += v;
            }
        }
    }
    m
}

impl QtmOracle {
    /// Monodromy matrix entries `T_ab(lambda)` as `2^N x 2^N` operators,
    /// indexed `[a_out][a_in]`. Site `j` carries the spectral parameter
    /// `lambda - xi_j` with `xi_j = b` on even and `eta - b` on odd sites,
    /// normalized so that the reference state has eigenvalues `a` and `d`.
    pub fn monodromy(&self, lambda: Complex64) -> Result<[[CMatrix; 2]; 2]> {
        let p = &self.params;
        let n = self.n;
        let dim = 1usize << n;
        let b = p.beta / n as f64;
        let eta = p.eta;
        let id = CMatrix::identity(dim, dim);
        let zeros = CMatrix::zeros(dim, dim);
        let mut m = [[id.clone(), zeros.clone()], [zeros, id]];
        for site in 0..n {
            let (xi, norm_arg) = if site % 2 == 0 { (b, lambda - b + eta) } else { (eta - b, lambda + b - eta) };
            check_pole(norm_arg)?;
            let u = lambda - xi;
            let norm = norm_arg.sinh();
            let (wa, wb, wc) = ((u + eta).sinh() / norm, u.sinh() / norm, eta.sinh() / norm);
            // r[a_out][a_in] is the 2x2 site operator [s_out][s_in]
            let r: [[[[Complex64; 2]; 2]; 2]; 2] = [
                [[[wa, zero()], [zero(), wb]], [[zero(), zero()], [wc, zero()]]],
                [[[zero(), wc], [zero(), zero()]], [[wb, zero()], [zero(), wa]]],
            ];
            let mut next = [
                [CMatrix::zeros(dim, dim), CMatrix::zeros(dim, dim)],
                [CMatrix::zeros(dim, dim), CMatrix::zeros(dim, dim)],
            ];
            for ao in 0..2 {
                for ai in 0..2 {
                    let op = site_operator(&r[ao][ai], site, n);
                    for am in 0..2 {
                        next[ao][am] += &op * &m[ai][am];
                    }
                }
            }
            m = next;
        }
        Ok(m)
    }

    /// `t(lambda) = q^tau T_00(lambda) + q^-tau T_11(lambda)`.
    pub fn transfer_matrix(&self, lambda: Complex64) -> Result<CMatrix> {
        let [[m00, _], [_, m11]] = self.monodromy(lambda)?;
        let p = &self.params;
        Ok(m00 * p.q_pow(self.twist) + m11 * p.q_pow(-self.twist))
    }

    /// Largest-modulus eigenvalue of `t(lambda)`.
    pub fn dominant_eigenvalue(&self, lambda: Complex64) -> Result<Complex64> {
        let t: DMatrix<Complex64> = self.transfer_matrix(lambda)?;
        let eig = t.schur().eigenvalues().ok_or(Error::SingularMatrix)?;
        eig.iter()
            .copied()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .ok_or(Error::SingularMatrix)
    }

    /// Largest deviation of `T_00` and `T_11` acting on the all-up state
    /// from `a(lambda)` and `d(lambda)` times that state.
    pub fn vacuum_action_residual(&self, lambda: Complex64) -> Result<f64> {
        let [[m00, _], [_, m11]] = self.monodromy(lambda)?;
        let (a, d) = vacuum_eigenvalues(lambda, self.n, &self.params)?;
        let dim = 1usize << self.n;
        let mut worst: f64 = 0.0;
        for row in 0..dim {
            let (ea, ed) = if row == 0 { (a, d) } else { (zero(), zero()) };
            worst = worst.max((m00[(row, 0)] - ea).norm() / a.norm().max(1.0));
            worst = worst.max((m11[(row, 0)] - ed).norm() / d.norm().max(1.0));
        }
        Ok(worst)
    }
}
