//! The two-point building block `Psi(nu1, nu2)` with its analytic
//! continuations in both arguments, the large-`Re nu` limits, the one-point
//! identity and the elementary function `psi(xi)`.

use num_complex::Complex64;

use crate::contour::QuadratureGrid;
use crate::error::{Error, Result};
use crate::lie::{build_deformed_measure, DeformedBackend, GSolution, GSolver, MeasureWeights};
use crate::model::{coth, pole_distance, DisorderParam, ModelParams, ALPHA_FLOOR, POLE_FLOOR};

/// Position of a spectral parameter relative to the contour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Inside,
    Outside,
}

/// One value of `Psi` with the continuation branch that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiEvaluation {
    pub nu1: Complex64,
    pub nu2: Complex64,
    pub value: Complex64,
    pub placement: (Placement, Placement),
    pub kappa: Complex64,
    pub alpha: DisorderParam,
}

/// Deformed measure and `G` solver for one backend, with everything needed
/// to evaluate `G` and `Psi` at arbitrary spectral parameters.
pub struct CorrelatorContext<B: DeformedBackend> {
    backend: B,
    solver: GSolver,
}

impl<B: DeformedBackend> CorrelatorContext<B> {
    pub fn new(backend: B, grid: &QuadratureGrid) -> Result<Self> {
        let measure = build_deformed_measure(grid, &backend)?;
        let solver = GSolver::new(&measure, backend.alpha())?;
        Ok(Self { backend, solver })
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn measure(&self) -> &MeasureWeights {
        &self.solver.measure
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.solver.measure.grid
    }

    pub fn params(&self) -> &ModelParams {
        self.backend.params()
    }

    pub fn alpha(&self) -> DisorderParam {
        self.backend.alpha()
    }

    /// Condition estimate of the factorized `G` system.
    pub fn condition(&self) -> f64 {
        self.solver.operator().condition()
    }

    pub fn placement(&self, nu: Complex64) -> Placement {
        if self.grid().contour.contains(nu) {
            Placement::Inside
        } else {
            Placement::Outside
        }
    }

    /// Same backend on a grid refined around `points`.
    pub fn refined(&self, points: &[Complex64]) -> Result<Self>
    where
        B: Clone,
    {
        Self::new(self.backend.clone(), &self.grid().refined(points)?)
    }

    fn q_alpha(&self) -> Complex64 {
        self.params().q_pow(self.alpha().alpha)
    }

    /// `G(., nu)`, continued when `nu` is outside the contour.
    pub fn g(&self, nu: Complex64) -> Result<GSolution> {
        let rho_nu = self.backend.rho(nu)?;
        match self.placement(nu) {
            Placement::Inside => self.solver.solve(nu, rho_nu),
            Placement::Outside => self.solver.solve_continued(nu, rho_nu, self.backend.aux(nu)?),
        }
    }

    /// `G(lambda, nu)` for `nu` outside the contour.
    pub fn g_continued(&self, lambda: Complex64, nu: Complex64) -> Result<Complex64> {
        if self.placement(nu) == Placement::Inside {
            return Err(Error::OutOfDomain { at: nu, reason: "continued G needs nu outside the contour".into() });
        }
        Ok(self.g(nu)?.eval(lambda))
    }

    /// `G(lambda, nu)` for any admissible `nu`.
    pub fn g_value(&self, lambda: Complex64, nu: Complex64) -> Result<Complex64> {
        Ok(self.g(nu)?.eval(lambda))
    }

    fn check_distance(&self, nu: Complex64) -> Result<()> {
        let (distance, required) = self.grid().resolution(nu);
        if distance < required {
            return Err(Error::NuTooCloseToContour { nu, distance, required });
        }
        Ok(())
    }

    /// `oint dm(m) G(m, nu2) (q^alpha coth(m - nu1 - eta) - rho(nu1) coth(m - nu1))`.
    pub fn psi_inside(&self, g_nu2: &GSolution, nu1: Complex64, rho_nu1: Complex64) -> Result<Complex64> {
        self.check_distance(nu1)?;
        let eta = self.params().eta;
        let qa = self.q_alpha();
        let m = self.measure();
        let v: Vec<Complex64> = m
            .nodes()
            .iter()
            .zip(&g_nu2.values)
            .map(|(mu, g)| g * (qa * coth(mu - nu1 - eta) - rho_nu1 * coth(mu - nu1)))
            .collect();
        Ok(m.integrate(&v))
    }

    /// `Psi(nu1, nu2)` with the continuation terms for arguments outside
    /// the contour.
    pub fn psi(&self, nu1: Complex64, nu2: Complex64) -> Result<PsiEvaluation> {
        let p = self.params();
        let eta = p.eta;
        let qa = self.q_alpha();
        let rho1 = self.backend.rho(nu1)?;
        let g2 = self.g(nu2)?;
        let mut value = self.psi_inside(&g2, nu1, rho1)?;
        let placement = (self.placement(nu1), self.placement(nu2));
        if placement.1 == Placement::Outside {
            check_pole(nu2 - nu1)?;
            check_pole(nu2 - nu1 - eta)?;
            let a2 = self.backend.aux(nu2)?;
            value -= (qa * coth(nu2 - nu1 - eta) - rho1 * coth(nu2 - nu1)) / (1.0 + a2);
        }
        if placement.0 == Placement::Outside {
            let a1 = self.backend.aux(nu1)?;
            value -= g2.eval(nu1) / (1.0 + a1);
        }
        Ok(PsiEvaluation { nu1, nu2, value, placement, kappa: self.backend.kappa(), alpha: self.alpha() })
    }

    /// [`Self::psi`] with `nu2` required outside the contour.
    pub fn psi_continued_nu2(&self, nu1: Complex64, nu2: Complex64) -> Result<PsiEvaluation> {
        if self.placement(nu2) == Placement::Inside {
            return Err(Error::OutOfDomain { at: nu2, reason: "nu2 must lie outside the contour".into() });
        }
        self.psi(nu1, nu2)
    }

    /// [`Self::psi`] with `nu1` required outside the contour.
    pub fn psi_continued_nu1(&self, nu1: Complex64, nu2: Complex64) -> Result<PsiEvaluation> {
        if self.placement(nu1) == Placement::Inside {
            return Err(Error::OutOfDomain { at: nu1, reason: "nu1 must lie outside the contour".into() });
        }
        self.psi(nu1, nu2)
    }

    /// [`Self::psi`], refining the grid around `nu1` and `nu2` once if either
    /// is too close to the contour.
    pub fn psi_refining(&self, nu1: Complex64, nu2: Complex64) -> Result<PsiEvaluation>
    where
        B: Clone,
    {
        match self.psi(nu1, nu2) {
            Err(Error::NuTooCloseToContour { .. }) => self.refined(&[nu1, nu2])?.psi(nu1, nu2),
            other => other,
        }
    }

    /// [`Self::g_value`] with the same refinement fallback.
    pub fn g_value_refining(&self, lambda: Complex64, nu: Complex64) -> Result<Complex64>
    where
        B: Clone,
    {
        match self.g_value(lambda, nu) {
            Err(Error::NuTooCloseToContour { .. }) => self.refined(&[nu])?.g_value(lambda, nu),
            other => other,
        }
    }

    /// Limit of `Psi` as `Re nu1 -> oo`: `-(q^-alpha - rho(nu2)) / (1 + q^(2 kappa))`.
    pub fn psi_limit_nu1(&self, nu2: Complex64) -> Result<Complex64> {
        let p = self.params();
        let rho2 = self.backend.rho(nu2)?;
        Ok(-(1.0 / self.q_alpha() - rho2) / (1.0 + p.q_pow(2.0 * self.backend.kappa())))
    }

    /// Limit of `Psi` as `Re nu2 -> oo`: `-(q^alpha - rho(nu1)) / (1 + q^(-2 kappa))`.
    pub fn psi_limit_nu2(&self, nu1: Complex64) -> Result<Complex64> {
        let p = self.params();
        let rho1 = self.backend.rho(nu1)?;
        Ok(-(self.q_alpha() - rho1) / (1.0 + p.q_pow(-2.0 * self.backend.kappa())))
    }

    /// `Psi + (q^kappa - q^-kappa) / (q^kappa + q^-kappa) G(nu1, nu2) + (q^-alpha - rho(nu2)) / (1 + q^(2 kappa))`,
    /// which tends to zero as `Re nu1 -> oo`.
    pub fn psi_g_combination(&self, nu1: Complex64, nu2: Complex64) -> Result<Complex64> {
        let p = self.params();
        let qk = p.q_pow(self.backend.kappa());
        let psi = self.psi(nu1, nu2)?.value;
        let g = self.g_value(nu1, nu2)?;
        Ok(psi + (qk - 1.0 / qk) / (qk + 1.0 / qk) * g - self.psi_limit_nu1(nu2)?)
    }

    /// `|oint dm G(l, nu) - (q^-alpha - rho(nu)) / (q^alpha - q^-alpha)|`.
    pub fn one_point_residual(&self, nu: Complex64) -> Result<f64> {
        let g = self.g(nu)?;
        let rho = self.backend.rho(nu)?;
        let closed = one_point_closed_form(rho, self.alpha(), self.params())?;
        Ok((self.measure().integrate(&g.values) - closed).norm())
    }
}

fn check_pole(z: Complex64) -> Result<()> {
    let distance = pole_distance(z);
    if distance < POLE_FLOOR {
        return Err(Error::PoleProximity { at: z, distance });
    }
    Ok(())
}

/// `(q^-alpha - rho(nu)) / (q^alpha - q^-alpha)`.
pub fn one_point_closed_form(rho_nu: Complex64, alpha: DisorderParam, p: &ModelParams) -> Result<Complex64> {
    let diff = alpha.checked_q_difference(p, ALPHA_FLOOR)?;
    Ok((p.q_pow(-alpha.alpha) - rho_nu) / diff)
}

/// `psi(xi) = (xi^alpha / 2) (xi^2 + 1) / (xi^2 - 1)`, principal branch of
/// `xi^alpha` (cut along the negative real axis).
pub fn psi_xi(xi: Complex64, alpha: DisorderParam) -> Result<Complex64> {
    let den = xi * xi - 1.0;
    if den.norm() < POLE_FLOOR {
        return Err(Error::PoleProximity { at: xi, distance: den.norm() });
    }
    let power = if alpha.alpha == Complex64::new(0.0, 0.0) { Complex64::new(1.0, 0.0) } else { (alpha.alpha * xi.ln()).exp() };
    Ok(0.5 * power * (xi * xi + 1.0) / den)
}
