//! Rectangular integration contours and their composite Gauss-Legendre grids.
//!
//! The contour `C` is the counterclockwise boundary of
//! `[-R, R] x [-d, d]`. Segments are traversed in the order bottom
//! (left to right), right (upwards), top (right to left), left (downwards),
//! so node 0 sits next to the bottom-left corner.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{ModelParams, I};

/// Side of the rectangle a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Bottom,
    Right,
    Top,
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Counterclockwise,
}

/// Rectangle `[-r, r] x [-d, d]` traversed counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contour {
    pub r: f64,
    pub d: f64,
    pub orientation: Orientation,
}

impl Contour {
    /// Validates `0 < d < gamma/2` and `r > 0`.
    pub fn new(r: f64, d: f64, gamma: f64) -> Result<Self> {
        if !(d > 0.0 && d < gamma / 2.0) {
            return Err(Error::InvalidContour(format!(
                "half-height d = {d} must lie in (0, gamma/2) = (0, {})",
                gamma / 2.0
            )));
        }
        Self::unchecked(r, d)
    }

    /// A rectangle without the `gamma/2` height restriction. Used for
    /// auxiliary contours that only integrate closed-form functions.
    pub fn unchecked(r: f64, d: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite() && d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidContour(format!("need r > 0 and d > 0, got r = {r}, d = {d}")));
        }
        Ok(Self { r, d, orientation: Orientation::Counterclockwise })
    }

    fn segments(&self) -> [(Complex64, Complex64, Segment); 4] {
        let (r, d) = (self.r, self.d);
        let c = Complex64::new;
        [
            (c(-r, -d), c(r, -d), Segment::Bottom),
            (c(r, -d), c(r, d), Segment::Right),
            (c(r, d), c(-r, d), Segment::Top),
            (c(-r, d), c(-r, -d), Segment::Left),
        ]
    }

    /// Strictly inside the rectangle.
    pub fn contains(&self, z: Complex64) -> bool {
        z.re.abs() < self.r && z.im.abs() < self.d
    }

    /// Euclidean distance from `z` to the boundary.
    pub fn distance_to_boundary(&self, z: Complex64) -> f64 {
        self.segments()
            .iter()
            .map(|(a, b, _)| point_segment_distance(z, *a, *b))
            .fold(f64::INFINITY, f64::min)
    }
}

fn point_segment_distance(p: Complex64, a: Complex64, b: Complex64) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sqr();
    let t = if len2 > 0.0 { ((p - a) * ab.conj()).re / len2 } else { 0.0 };
    (p - (a + ab * t.clamp(0.0, 1.0))).norm()
}

/// One Gauss-Legendre panel on a straight piece of the contour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub start: Complex64,
    pub end: Complex64,
    pub segment: Segment,
}

impl Panel {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }
}

/// Subdivision rule for adaptive panel grids.
///
/// A panel is split until it is shorter than `max_len` and every refine
/// point `p` satisfies `dist(p, panel) >= ratio * len / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelRule {
    pub order: usize,
    pub max_len: f64,
    pub ratio: f64,
    pub min_len: f64,
}

/// Nodes and weights on a contour. Weights include the direction `d lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub contour: Contour,
    pub nodes: Vec<Complex64>,
    pub weights: Vec<Complex64>,
    pub segment_tags: Vec<Segment>,
    pub panels: Vec<Panel>,
    pub order: usize,
    rule: Option<PanelRule>,
    refine_points: Vec<Complex64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum_k w_k v_k / (2 pi i)`, the discretized `oint v d lambda / (2 pi i)`.
    pub fn integrate(&self, values: &[Complex64]) -> Complex64 {
        debug_assert_eq!(values.len(), self.len());
        let s: Complex64 = self.weights.iter().zip(values).map(|(w, v)| w * v).sum();
        s / (2.0 * PI * I)
    }

    /// Integrate a function of the node.
    pub fn integrate_fn<F: Fn(Complex64) -> Complex64>(&self, f: F) -> Complex64 {
        let s: Complex64 = self.weights.iter().zip(&self.nodes).map(|(w, z)| w * f(*z)).sum();
        s / (2.0 * PI * I)
    }

    /// Like [`integrate_fn`](Self::integrate_fn) with the node index passed along.
    pub fn integrate_fn_indexed<F: Fn(usize, Complex64) -> Complex64>(&self, f: F) -> Complex64 {
        let s: Complex64 = self
            .weights
            .iter()
            .zip(&self.nodes)
            .enumerate()
            .map(|(k, (w, z))| w * f(k, *z))
            .sum();
        s / (2.0 * PI * I)
    }

    /// Node spacing of the panel closest to `z`.
    pub fn local_spacing(&self, z: Complex64) -> f64 {
        let panel = self
            .panels
            .iter()
            .min_by(|a, b| {
                point_segment_distance(z, a.start, a.end)
                    .total_cmp(&point_segment_distance(z, b.start, b.end))
            })
            .expect("grid has at least one panel");
        panel.length() / self.order as f64
    }

    /// Distance from `z` to the panel that resolves it worst, with the
    /// distance that panel needs (0.4 of its length). A pole at distance
    /// `0.4 L` from a Gauss-Legendre panel of length `L` costs about
    /// `2.08^(-2 order)`; at `0.15 L` this is already `1.5^(-2 order)`.
    pub fn resolution(&self, z: Complex64) -> (f64, f64) {
        self.panels
            .iter()
            .map(|p| (point_segment_distance(z, p.start, p.end), 0.4 * p.length()))
            .min_by(|a, b| (a.0 - a.1).total_cmp(&(b.0 - b.1)))
            .expect("grid has at least one panel")
    }

    /// Distance from `z` to the contour.
    pub fn distance_to_contour(&self, z: Complex64) -> f64 {
        self.contour.distance_to_boundary(z)
    }

    /// Rebuild with additional refine points. Grids from [`build_grid`] are rebuilt with
    /// a default rule whose panel length matches their coarsest panel.
    pub fn refined(&self, extra: &[Complex64]) -> Result<Self> {
        let rule = self.rule.unwrap_or(PanelRule {
            order: self.order,
            max_len: self.panels.iter().map(Panel::length).fold(0.0, f64::max),
            ratio: 1.0,
            min_len: 1e-6,
        });
        let mut pts = self.refine_points.clone();
        pts.extend_from_slice(extra);
        build_adaptive_grid(self.contour, &rule, &pts)
    }

    pub fn rule(&self) -> Option<&PanelRule> {
        self.rule.as_ref()
    }

    pub fn refine_points(&self) -> &[Complex64] {
        &self.refine_points
    }
}

fn gauss_legendre(order: usize) -> Result<Vec<(f64, f64)>> {
    let n = NonZeroUsize::new(order)
        .ok_or_else(|| Error::InvalidContour("quadrature order must be positive".into()))?;
    let rule = GaussLegendre::new(n);
    let mut pairs = rule.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs)
}

fn assemble(contour: Contour, panels: Vec<Panel>, order: usize, rule: Option<PanelRule>, refine: Vec<Complex64>) -> Result<QuadratureGrid> {
    let gl = gauss_legendre(order)?;
    let total = panels.len() * order;
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut tags = Vec::with_capacity(total);
    for p in &panels {
        let mid = (p.start + p.end) * 0.5;
        let half = (p.end - p.start) * 0.5;
        for (x, w) in &gl {
            nodes.push(mid + half * *x);
            weights.push(half * *w);
            tags.push(p.segment);
        }
    }
    Ok(QuadratureGrid {
        contour,
        nodes,
        weights,
        segment_tags: tags,
        panels,
        order,
        rule,
        refine_points: refine,
    })
}

/// Graded composite Gauss-Legendre grid with `n_horizontal` nodes on each
/// horizontal side and `n_vertical` on each vertical side.
///
/// Panels have order `gcd(n_horizontal, n_vertical, 8)`. Horizontal
/// breakpoints follow `x(t) = R sinh(s t) / sinh(s)` with `s` chosen so the
/// central panels are about `d` long, which concentrates nodes where the
/// integrands peak (`Re lambda` near 0). Vertical panels are uniform.
pub fn build_grid(c: Contour, n_horizontal: usize, n_vertical: usize) -> Result<QuadratureGrid> {
    if n_horizontal < 8 || n_vertical < 4 {
        return Err(Error::InvalidContour(format!(
            "need n_horizontal >= 8 and n_vertical >= 4, got {n_horizontal} and {n_vertical}"
        )));
    }
    let order = gcd(gcd(n_horizontal, n_vertical), 8);
    let breaks = graded_breakpoints(c.r, n_horizontal / order, c.d);
    let nv = n_vertical / order;
    let cx = Complex64::new;
    let mut panels = Vec::new();
    for w in breaks.windows(2) {
        panels.push(Panel { start: cx(w[0], -c.d), end: cx(w[1], -c.d), segment: Segment::Bottom });
    }
    let ys: Vec<f64> = (0..=nv).map(|i| -c.d + 2.0 * c.d * i as f64 / nv as f64).collect();
    for w in ys.windows(2) {
        panels.push(Panel { start: cx(c.r, w[0]), end: cx(c.r, w[1]), segment: Segment::Right });
    }
    for w in breaks.windows(2).rev() {
        panels.push(Panel { start: cx(w[1], c.d), end: cx(w[0], c.d), segment: Segment::Top });
    }
    for w in ys.windows(2).rev() {
        panels.push(Panel { start: cx(-c.r, w[1]), end: cx(-c.r, w[0]), segment: Segment::Left });
    }
    assemble(c, panels, order, None, Vec::new())
}

fn graded_breakpoints(r: f64, n_panels: usize, central: f64) -> Vec<f64> {
    let dt = 2.0 / n_panels as f64;
    let slope = |s: f64| if s == 0.0 { r * dt } else { r * s / s.sinh() * dt };
    let s = if central >= slope(0.0) {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, 60.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > central {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    (0..=n_panels)
        .map(|i| {
            let t = -1.0 + dt * i as f64;
            if s == 0.0 { r * t } else { r * (s * t).sinh() / s.sinh() }
        })
        .collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Composite grid whose panels are subdivided by `rule` around `refine_points`.
pub fn build_adaptive_grid(c: Contour, rule: &PanelRule, refine_points: &[Complex64]) -> Result<QuadratureGrid> {
    if !(rule.max_len > 0.0) || rule.order == 0 || !(rule.ratio > 0.0) {
        return Err(Error::InvalidContour(format!("invalid panel rule {rule:?}")));
    }
    let mut panels = Vec::new();
    for (a, b, seg) in c.segments() {
        let mut out = Vec::new();
        let mut stack = vec![(a, b)];
        while let Some((s, e)) = stack.pop() {
            let len = (e - s).norm();
            let ok = len <= rule.max_len
                && refine_points
                    .iter()
                    .all(|p| point_segment_distance(*p, s, e) >= rule.ratio * len / 2.0);
            if ok || len < rule.min_len {
                out.push(Panel { start: s, end: e, segment: seg });
            } else {
                let m = (s + e) * 0.5;
                stack.push((m, e));
                stack.push((s, m));
            }
        }
        // The stack pops the first half first, so `out` already runs from a to b.
        panels.extend(out);
    }
    assemble(c, panels, rule.order, Some(*rule), refine_points.to_vec())
}

/// Grid geometry shared by the solvers. Heights are fractions of `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub r: f64,
    pub d_outer: f64,
    pub d_work: f64,
    pub order: usize,
    /// Panel density multiplier; doubling it roughly doubles the node count.
    pub density: f64,
    pub ratio: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { r: 3.0, d_outer: 0.36, d_work: 0.2, order: 16, density: 1.0, ratio: 1.0 }
    }
}

impl GridConfig {
    pub fn doubled(&self) -> Self {
        Self { density: self.density * 2.0, ..*self }
    }

    pub fn outer_contour(&self, p: &ModelParams) -> Result<Contour> {
        Contour::new(self.r, self.d_outer * p.gamma, p.gamma)
    }

    /// The work contour sits inside the outer one with the same margin
    /// `(d_outer - d_work) gamma` on all four sides.
    pub fn work_contour(&self, p: &ModelParams) -> Result<Contour> {
        let margin = (self.d_outer - self.d_work) * p.gamma;
        Contour::new(self.r - margin.max(0.0), self.d_work * p.gamma, p.gamma)
    }

    fn rule(&self, max_len: f64) -> PanelRule {
        PanelRule { order: self.order, max_len: max_len / self.density, ratio: self.ratio, min_len: 1e-6 }
    }

    /// Panel rule for a contour of half-height `d` that carries the NLIE.
    /// Panels stay shorter than twice the distance to the nearest kernel
    /// singularity line (`gamma - 2 d`) and than twice the half-height.
    pub fn nlie_rule(&self, p: &ModelParams, d: f64) -> PanelRule {
        self.rule(2.0 * (p.gamma - 2.0 * d).min(d))
    }
}

/// Grid for the NLIE alone on the outer contour.
pub fn build_nlie_grid(p: &ModelParams, cfg: &GridConfig, refine_points: &[Complex64]) -> Result<QuadratureGrid> {
    let c = cfg.outer_contour(p)?;
    let mut pts = vec![Complex64::new(0.0, 0.0)];
    pts.extend_from_slice(refine_points);
    build_adaptive_grid(c, &cfg.nlie_rule(p, c.d), &pts)
}

/// Two strictly nested grids: the outer one carries NLIE solutions, the
/// work one the measures of the linear equations.
pub fn build_nested_grids(p: &ModelParams, cfg: &GridConfig) -> Result<(QuadratureGrid, QuadratureGrid)> {
    build_nested_grids_with(p, cfg, &[], &[])
}

/// [`build_nested_grids`] with extra refine points for each grid.
pub fn build_nested_grids_with(
    p: &ModelParams,
    cfg: &GridConfig,
    outer_points: &[Complex64],
    work_points: &[Complex64],
) -> Result<(QuadratureGrid, QuadratureGrid)> {
    let outer = cfg.outer_contour(p)?;
    let work = cfg.work_contour(p)?;
    if !(work.d < outer.d) {
        return Err(Error::InvalidContour(format!(
            "work half-height {} must be below outer half-height {}",
            work.d, outer.d
        )));
    }
    let nest = outer.d - work.d;
    let zero = Complex64::new(0.0, 0.0);
    let mut op = vec![zero];
    op.extend_from_slice(outer_points);
    let mut wp = vec![zero];
    wp.extend_from_slice(work_points);
    let orule = cfg.rule(2.0 * (p.gamma - 2.0 * outer.d).min(outer.d).min(nest));
    let wrule = cfg.rule(2.0 * (p.gamma - 2.0 * work.d).min(work.d).min(nest));
    Ok((build_adaptive_grid(outer, &orule, &op)?, build_adaptive_grid(work, &wrule, &wp)?))
}
