//! The five subcommands. Each returns a table; solver failures surface as
//! errors and verification failures as `pass = false` rows.

use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use qtm_core::bethe::{
    closed_form_grid, closed_form_mismatch, lambda_eigenvalue, nlie_feasible, phi0_via_contour, phi0_via_integral,
    pole_freeness_probe, qtm_exact_diag, rho_finite, roots_from_nlie, sigma_from_phi, sigma_from_q_derivative,
    solve_bethe_state, sum_of_roots_residual, vertical_period_integral, verify_id0, verify_id2, BetheState,
    QFunctionBundle,
};
use qtm_core::contour::{build_nested_grids, build_nlie_grid};
use qtm_core::correlator::{CorrelatorContext, Placement};
use qtm_core::lie::{build_deformed_measure, build_measure, solve_sigma_alpha, solve_sigma_plain, MeasureVariant, RhoBackend};
use qtm_core::model::ModelParams;
use qtm_core::nlie::{count_roots_argument_principle, driving_singularities, solve_aux_finite, NlieOperator, Trotter};
use qtm_core::par;
use qtm_core::thermo::{compute_thermo, free_energy, sweep, ThermoConfig};

use crate::config::{RunConfig, Twist};
use crate::output::{Kind, Table, Value};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn thermo_config(cfg: &RunConfig) -> ThermoConfig {
    ThermoConfig { grid: cfg.grid, iter: cfg.iter, delta_h: cfg.delta_h }
}

pub fn thermo(cfg: &RunConfig) -> Result<Table> {
    if let Twist::Kappa(_) = cfg.twist {
        bail!("thermo needs the field form model.h; model.kappa is only accepted by verify, psi, bethe and nlie-dump");
    }
    let points: Vec<ModelParams> = cfg.sweep_points().into_iter().map(|(t, h)| cfg.params_at(t, h)).collect::<Result<_>>()?;
    let results = sweep(&points, &thermo_config(cfg));
    let mut table = Table::new(
        "thermo",
        &[
            ("T", Kind::Real),
            ("h", Kind::Real),
            ("gamma", Kind::Real),
            ("J", Kind::Real),
            ("f", Kind::Complex),
            ("m_sigma", Kind::Complex),
            ("m_G", Kind::Complex),
            ("m_fd", Kind::Complex),
            ("m_fd_richardson", Kind::Complex),
            ("nlie_residual", Kind::Real),
            ("nlie_iterations", Kind::Int),
            ("sigma_residual", Kind::Real),
            ("g_residual", Kind::Real),
            ("dressed_trick_residual", Kind::Real),
            ("condition", Kind::Real),
            ("nodes", Kind::Int),
        ],
    );
    for (p, r) in points.iter().zip(results) {
        let r = r.with_context(|| format!("thermo at T = {}, h = {}", p.t, p.h))?;
        table.push(vec![
            p.t.into(),
            p.h.into(),
            p.gamma.into(),
            p.j.into(),
            r.f.into(),
            r.m_sigma.into(),
            r.m_g.into(),
            r.m_fd.into(),
            r.m_fd_richardson.into(),
            r.nlie_residual.into(),
            r.nlie_iterations.into(),
            r.sigma_residual.into(),
            r.g_residual.into(),
            r.dressed_trick_residual.into(),
            r.condition.into(),
            r.nodes.into(),
        ]);
    }
    Ok(table)
}

/// One verification record.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub anchor: &'static str,
    pub n: Option<usize>,
    pub residual: f64,
    pub tolerance: f64,
    pub condition: Option<f64>,
    pub note: String,
}

impl Check {
    pub fn pass(&self) -> bool {
        self.residual.is_finite() && self.residual < self.tolerance
    }
}

struct Checks {
    n: Option<usize>,
    out: Vec<Check>,
}

impl Checks {
    fn new(n: Option<usize>) -> Self {
        Self { n, out: Vec::new() }
    }

    /// Records `f()`; a failing computation becomes a failing record.
    fn add(&mut self, name: &'static str, anchor: &'static str, tolerance: f64, f: impl FnOnce() -> Result<(f64, Option<f64>)>) {
        let (residual, condition, note) = match f() {
            Ok((r, cond)) => (r, cond, String::new()),
            Err(e) => (f64::INFINITY, None, format!("{e:#}")),
        };
        self.out.push(Check { name, anchor, n: self.n, residual, tolerance, condition, note });
    }
}

fn max_over<I: IntoIterator<Item = Complex64>>(points: I, mut f: impl FnMut(Complex64) -> Result<f64>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for z in points {
        worst = worst.max(f(z)?);
    }
    Ok(worst)
}

fn id0_points() -> Vec<Complex64> {
    (0..20).map(|j| c(-1.5 + 0.15 * j as f64, 0.02 * ((j % 5) as f64 - 2.0))).collect()
}

/// Moves the first root of the `kappa` state by `delta` without
/// re-solving. Used as a negative control of the identities.
fn perturbed(b: QFunctionBundle, delta: f64) -> Result<QFunctionBundle> {
    let mut k = b.state_k;
    if let Some(r) = k.roots.first_mut() {
        *r += delta;
    }
    Ok(QFunctionBundle::new(k, b.state_ka)?)
}

fn finite_n_checks(cfg: &RunConfig, p: &ModelParams, n: usize, perturb: Option<f64>) -> Result<Vec<Check>> {
    let alpha = cfg.alpha();
    let mut b = QFunctionBundle::solve_twist(p, p.kappa, alpha, n, &cfg.grid, &cfg.iter).with_context(|| format!("Bethe states for N = {n}"))?;
    let mut minus = QFunctionBundle::solve_twist(p, -p.kappa, alpha.negated(), n, &cfg.grid, &cfg.iter)
        .with_context(|| format!("Bethe states at (-kappa, -alpha) for N = {n}"))?;
    if let Some(d) = perturb {
        b = perturbed(b, d)?;
        minus = perturbed(minus, d)?;
    }
    let mut ch = Checks::new(Some(n));
    ch.add("bethe_equations", "1 + a(l_j) = 0 at the Bethe roots", 1e-12, || {
        Ok((b.state_k.bethe_residual().max(b.state_ka.bethe_residual()), None))
    });
    ch.add("pole_freeness", "Lambda is regular at the Bethe roots", 1e-6, || {
        let mut worst: f64 = 0.0;
        for s in [&b.state_k, &b.state_ka] {
            for r in &s.roots {
                worst = worst.max(pole_freeness_probe(s, *r)?);
            }
        }
        Ok((worst, None))
    });
    ch.add("id0", "phi functional relation with rho and 1 + a", 1e-10, || Ok((max_over(id0_points(), |z| Ok(verify_id0(&b, z)?))?, None)));
    let lam = c(0.1, 0.02);
    ch.add("id2", "vertical sides of one period give -(b + 1/b)(q^alpha - q^-alpha)/2", 1e-8, || {
        Ok((verify_id2(&b, lam, cfg.grid.r)?, None))
    });
    ch.add("id2_r_independence", "vertical-side integral independent of R", 1e-9, || {
        let a = vertical_period_integral(&b, lam, cfg.grid.r)?;
        let z = vertical_period_integral(&b, lam, cfg.grid.r + 2.0)?;
        Ok(((a - z).norm(), None))
    });
    ch.add("sigma", "dressed charge equals the phi combination", 1e-8, || {
        let (_, work) = build_nested_grids(p, &cfg.grid)?;
        let m = build_deformed_measure(&work, &b)?;
        let s = solve_sigma_alpha(&m, alpha)?;
        let mut worst: f64 = 0.0;
        for (z, v) in m.nodes().iter().zip(&s.values) {
            worst = worst.max((v - sigma_from_phi(&b, *z)?).norm());
        }
        Ok((worst, Some(s.condition)))
    });
    ch.add("phi0_contour", "phi0 = (b + 1/b)/2 from the contour integral of ln(1 + a)", 1e-10, || {
        let grid = closed_form_grid(&b, &cfg.grid)?;
        Ok(((phi0_via_contour(&b, &grid)? - b.phi0).norm(), None))
    });
    ch.add("sigma_alpha0", "alpha -> 0 dressed charge from the kappa derivative of ln Q", 1e-8, || {
        let d = cfg.delta_kappa;
        let lo = solve_bethe_state(p, p.kappa - d, n, &cfg.grid, &cfg.iter)?;
        let hi = solve_bethe_state(p, p.kappa + d, n, &cfg.grid, &cfg.iter)?;
        let grid = build_nlie_grid(p, &cfg.grid, &[])?;
        let m = build_measure(&grid, &b.state_k, None, MeasureVariant::Plain, RhoBackend::None)?;
        let s = solve_sigma_plain(&m)?;
        let mut worst: f64 = 0.0;
        for z in [c(0.0, 0.0), c(0.3, 0.02), c(-0.7, -0.03), c(1.2, 0.0)] {
            worst = worst.max((s.eval(z) - sigma_from_q_derivative(&lo, &hi, d, z)?).norm());
        }
        Ok((worst, Some(s.condition)))
    });
    if nlie_feasible(p, n, &cfg.grid) {
        ch.add("root_count", "argument principle counts N/2 roots of 1 + a", 1e-6, || {
            let (_, sol) = roots_from_nlie(p, p.kappa, n, &cfg.grid, &cfg.iter)?;
            Ok(((count_roots_argument_principle(&sol)? - (n / 2) as f64).abs(), None))
        });
        ch.add("sum_of_roots", "oint ln(1 + a) / 2 pi i = -sum l_j - beta/2", 1e-9, || {
            let (_, sol) = roots_from_nlie(p, p.kappa, n, &cfg.grid, &cfg.iter)?;
            Ok((sum_of_roots_residual(&sol, &b.state_k)?, None))
        });
        ch.add("closed_form_vs_nlie", "a from Q functions equals the finite-N NLIE solution", 1e-8, || {
            let (_, sol) = roots_from_nlie(p, p.kappa, n, &cfg.grid, &cfg.iter)?;
            Ok((closed_form_mismatch(&sol, &b.state_k)?, None))
        });
        ch.add("phi0_integral", "phi0 from the two NLIE solutions", 1e-10, || {
            let (_, sk) = roots_from_nlie(p, p.kappa, n, &cfg.grid, &cfg.iter)?;
            let (_, ska) = roots_from_nlie(p, p.kappa + alpha.alpha, n, &cfg.grid, &cfg.iter)?;
            Ok(((phi0_via_integral(&sk, &ska)? - b.phi0).norm(), None))
        });
    }
    if n <= 6 {
        ch.add("ed_vs_tq", "dominant QTM eigenvalue from exact diagonalization equals the T-Q eigenvalue", 1e-10, || {
            let ed = qtm_exact_diag(n, p.kappa, p)?;
            max_over([c(0.0, 0.0), c(0.3, 0.1)], |z| {
                let e = ed.dominant_eigenvalue(z)?;
                Ok((e - lambda_eigenvalue(&b.state_k, z)?).norm() / e.norm())
            })
            .map(|r| (r, None))
        });
    }
    let grid = build_nlie_grid(p, &cfg.grid, &[])?;
    let plus_ctx = CorrelatorContext::new(b.clone(), &grid);
    let minus_ctx = CorrelatorContext::new(minus.clone(), &grid);
    ch.add("one_point", "oint dm G(l, nu) = (q^-alpha - rho(nu)) / (q^alpha - q^-alpha)", 1e-8, || {
        let ctx = plus_ctx.as_ref().map_err(Clone::clone)?;
        let r = max_over([c(0.0, 0.0), c(0.1, 0.0), c(-0.2, 0.05)], |nu| Ok(ctx.one_point_residual(nu)?))?;
        Ok((r, Some(ctx.condition())))
    });
    ch.add("psi_symmetry", "Psi(nu1, nu2 | kappa, alpha) = Psi(nu2, nu1 | -kappa, -alpha)", 1e-8, || {
        let (pc, mc) = (plus_ctx.as_ref().map_err(Clone::clone)?, minus_ctx.as_ref().map_err(Clone::clone)?);
        let pairs = [(c(0.1, 0.0), c(-0.15, 0.0)), (c(-0.3, 0.02), c(0.25, -0.03)), (c(4.2, 0.0), c(0.1, 0.0)), (c(0.1, 0.0), c(4.3, 0.0))];
        let mut worst: f64 = 0.0;
        for (x, y) in pairs {
            worst = worst.max((pc.psi(x, y)?.value - mc.psi(y, x)?.value).norm());
        }
        Ok((worst, Some(pc.condition().max(mc.condition()))))
    });
    ch.add("rho_symmetry", "rho(l | kappa, alpha) = rho(l | -kappa, -alpha)", 1e-9, || {
        let pts = (0..10).map(|k| c(-2.0 + 0.45 * k as f64, 0.03 * (k % 3) as f64 - 0.03));
        Ok((max_over(pts, |z| Ok((rho_finite(&b, z)? - rho_finite(&minus, z)?).norm()))?, None))
    });
    Ok(ch.out)
}

fn trotter_limit_checks(cfg: &RunConfig, p: &ModelParams) -> Result<Vec<Check>> {
    let mut ch = Checks::new(None);
    if let Twist::Field(_) = cfg.twist {
        let r = compute_thermo(p, &thermo_config(cfg)).context("Trotter-limit thermodynamics")?;
        ch.add("nlie_residual", "fixed point of the Trotter-limit NLIE", 10.0 * cfg.iter.tol, || Ok((r.nlie_residual, None)));
        ch.add("dressed_trick", "m from sigma equals m from G", 1e-8, || Ok(((r.m_sigma - r.m_g).norm(), Some(r.condition))));
        ch.add("magnetization_fd", "m from sigma equals -df/dh", 1e-6, || Ok(((r.m_sigma - r.m_fd).norm(), Some(r.condition))));
        if p.j == 0.0 {
            ch.add("free_spin", "J = 0 gives f = -T ln(2 cosh(h/2T)), m = tanh(h/2T)/2", 1e-10, || {
                let x = p.h / (2.0 * p.t);
                let f = -p.t * (2.0 * x.cosh()).ln();
                let m = 0.5 * x.tanh();
                Ok(((r.f - f).norm().max((r.m_sigma - m).norm()).max((r.m_g - m).norm()), None))
            });
        }
    }
    Ok(ch.out)
}

/// All identity checks. `perturb` moves one Bethe root after solving.
pub fn verify_checks(cfg: &RunConfig, perturb: Option<f64>) -> Result<Vec<Check>> {
    let p = cfg.params()?;
    if cfg.trotter.is_empty() {
        bail!("verify needs a non-empty trotter.n list");
    }
    let per_n = par::map(&cfg.trotter, |n| finite_n_checks(cfg, &p, *n, perturb));
    let mut out = trotter_limit_checks(cfg, &p)?;
    for r in per_n {
        out.extend(r?);
    }
    Ok(out)
}

pub fn verify(cfg: &RunConfig, perturb: Option<f64>) -> Result<(Table, bool)> {
    let checks = verify_checks(cfg, perturb)?;
    let mut table = Table::new(
        "verify",
        &[
            ("name", Kind::Text),
            ("anchor", Kind::Text),
            ("n", Kind::Int),
            ("max_residual", Kind::Real),
            ("tolerance", Kind::Real),
            ("pass", Kind::Bool),
            ("condition", Kind::Real),
            ("note", Kind::Text),
        ],
    );
    let all = checks.iter().all(Check::pass);
    for k in checks {
        table.push(vec![
            k.name.into(),
            k.anchor.into(),
            k.n.into(),
            k.residual.into(),
            k.tolerance.into(),
            k.pass().into(),
            k.condition.into(),
            k.note.into(),
        ]);
    }
    Ok((table, all))
}

fn placement_text(p: Placement) -> &'static str {
    match p {
        Placement::Inside => "inside",
        Placement::Outside => "outside",
    }
}

/// Real part beyond which asymptotic reference values are reported.
pub const ASYMPTOTIC_RE: f64 = 4.0;

pub fn psi(cfg: &RunConfig, nu1: Complex64, nu2: Complex64) -> Result<Table> {
    let p = cfg.params()?;
    let n = *cfg.trotter.iter().max().context("psi needs a non-empty trotter.n list")?;
    let alpha = cfg.alpha();
    let pair = [(p.kappa, alpha), (-p.kappa, alpha.negated())];
    let bundles = par::map(&pair, |(k, a)| QFunctionBundle::solve_twist(&p, *k, *a, n, &cfg.grid, &cfg.iter));
    let mut bundles = bundles.into_iter();
    let plus = bundles.next().expect("two bundles").context("Bethe states at (kappa, alpha)")?;
    let minus = bundles.next().expect("two bundles").context("Bethe states at (-kappa, -alpha)")?;
    let grid = build_nlie_grid(&p, &cfg.grid, &[])?;
    let pc = CorrelatorContext::new(plus, &grid)?;
    let mc = CorrelatorContext::new(minus, &grid)?;
    let v = pc.psi_refining(nu1, nu2).context("Psi at (kappa, alpha)")?;
    let w = mc.psi_refining(nu2, nu1).context("symmetry partner at (-kappa, -alpha)")?;
    let lim1 = if nu1.re > ASYMPTOTIC_RE { Some(pc.psi_limit_nu1(nu2)?) } else { None };
    let lim2 = if nu2.re > ASYMPTOTIC_RE { Some(pc.psi_limit_nu2(nu1)?) } else { None };
    let mut table = Table::new(
        "psi",
        &[
            ("nu1", Kind::Complex),
            ("nu2", Kind::Complex),
            ("n", Kind::Int),
            ("kappa", Kind::Complex),
            ("alpha", Kind::Complex),
            ("psi", Kind::Complex),
            ("placement_nu1", Kind::Text),
            ("placement_nu2", Kind::Text),
            ("partner", Kind::Complex),
            ("symmetry_residual", Kind::Real),
            ("limit_nu1", Kind::Complex),
            ("limit_nu1_gap", Kind::Real),
            ("limit_nu2", Kind::Complex),
            ("limit_nu2_gap", Kind::Real),
            ("condition", Kind::Real),
        ],
    );
    table.push(vec![
        nu1.into(),
        nu2.into(),
        n.into(),
        p.kappa.into(),
        alpha.alpha.into(),
        v.value.into(),
        placement_text(pc.placement(nu1)).into(),
        placement_text(pc.placement(nu2)).into(),
        w.value.into(),
        (v.value - w.value).norm().into(),
        lim1.into(),
        lim1.map(|l| (v.value - l).norm()).into(),
        lim2.into(),
        lim2.map(|l| (v.value - l).norm()).into(),
        pc.condition().max(mc.condition()).into(),
    ]);
    Ok(table)
}

struct BetheRow {
    state: BetheState,
    sum_of_roots: Option<f64>,
    closed_form: Option<f64>,
    lambda0: Complex64,
    pole: f64,
    ed: Option<Complex64>,
}

fn bethe_row(cfg: &RunConfig, p: &ModelParams, n: usize) -> Result<BetheRow> {
    let (state, sum_of_roots, closed_form) = if nlie_feasible(p, n, &cfg.grid) {
        let (state, sol) = roots_from_nlie(p, p.kappa, n, &cfg.grid, &cfg.iter)?;
        let s = sum_of_roots_residual(&sol, &state)?;
        let cf = closed_form_mismatch(&sol, &state)?;
        (state, Some(s), Some(cf))
    } else {
        (solve_bethe_state(p, p.kappa, n, &cfg.grid, &cfg.iter)?, None, None)
    };
    let lambda0 = lambda_eigenvalue(&state, c(0.0, 0.0))?;
    let pole = max_over(state.roots.clone(), |r| Ok(pole_freeness_probe(&state, r)?))?;
    let ed = if n <= 6 { Some(qtm_exact_diag(n, p.kappa, p)?.dominant_eigenvalue(c(0.0, 0.0))?) } else { None };
    Ok(BetheRow { state, sum_of_roots, closed_form, lambda0, pole, ed })
}

pub fn bethe(cfg: &RunConfig) -> Result<Table> {
    let p = cfg.params()?;
    if cfg.trotter.is_empty() {
        bail!("bethe needs a non-empty trotter.n list");
    }
    let grid = build_nlie_grid(&p, &cfg.grid, &[])?;
    let sol = NlieOperator::new(&p, &grid).solve(&p, p.kappa, Trotter::Infinite, &cfg.iter, None).context("Trotter-limit NLIE")?;
    let f_inf = free_energy(&sol, &p)?;
    let rows = par::map(&cfg.trotter, |n| bethe_row(cfg, &p, *n));
    let mut table = Table::new(
        "bethe",
        &[
            ("n", Kind::Int),
            ("root_count", Kind::Int),
            ("roots", Kind::ComplexList),
            ("bethe_residual", Kind::Real),
            ("pole_probe", Kind::Real),
            ("lambda0", Kind::Complex),
            ("f_n", Kind::Complex),
            ("f_inf", Kind::Complex),
            ("f_gap", Kind::Real),
            ("ed_lambda0", Kind::Complex),
            ("ed_rel_error", Kind::Real),
            ("sum_of_roots_residual", Kind::Real),
            ("closed_form_mismatch", Kind::Real),
        ],
    );
    for (n, row) in cfg.trotter.iter().zip(rows) {
        let r = row.with_context(|| format!("Bethe roots for N = {n}"))?;
        let f_n = -p.t * r.lambda0.ln();
        table.push(vec![
            (*n).into(),
            r.state.roots.len().into(),
            Value::ComplexList(r.state.roots.clone()),
            r.state.bethe_residual().into(),
            r.pole.into(),
            r.lambda0.into(),
            f_n.into(),
            f_inf.into(),
            (f_n - f_inf).norm().into(),
            r.ed.into(),
            r.ed.map(|e| (e - r.lambda0).norm() / e.norm()).into(),
            r.sum_of_roots.into(),
            r.closed_form.into(),
        ]);
    }
    Ok(table)
}

/// Raw `ln a` on the NLIE grid, in the Trotter limit or at finite `n`.
pub fn nlie_dump(cfg: &RunConfig, n: Option<usize>) -> Result<Table> {
    let p = cfg.params()?;
    let sol = match n {
        None => {
            let grid = build_nlie_grid(&p, &cfg.grid, &[])?;
            NlieOperator::new(&p, &grid).solve(&p, p.kappa, Trotter::Infinite, &cfg.iter, None)?
        }
        Some(n) => {
            if n < 2 || n % 2 != 0 {
                bail!("Trotter number must be even and >= 2, got {n}");
            }
            if !nlie_feasible(&p, n, &cfg.grid) {
                bail!("N = {n} puts driving-term singularities inside the contour; use bethe for this N");
            }
            let grid = build_nlie_grid(&p, &cfg.grid, &driving_singularities(&p, n))?;
            solve_aux_finite(&p, p.kappa, n, &grid, &cfg.iter)?
        }
    };
    let mut table = Table::new(
        "nlie-dump",
        &[
            ("index", Kind::Int),
            ("node", Kind::Complex),
            ("weight", Kind::Complex),
            ("segment", Kind::Text),
            ("ln_a", Kind::Complex),
            ("ln_1p_a", Kind::Complex),
            ("residual", Kind::Real),
            ("iterations", Kind::Int),
        ],
    );
    let g = &sol.grid;
    for k in 0..g.len() {
        table.push(vec![
            k.into(),
            g.nodes[k].into(),
            g.weights[k].into(),
            format!("{:?}", g.segment_tags[k]).to_lowercase().into(),
            sol.log_a_values[k].into(),
            sol.log1p_a_values[k].into(),
            sol.residual.into(),
            sol.iterations.into(),
        ]);
    }
    Ok(table)
}
