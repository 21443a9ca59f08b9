//! Run configuration: a flat `key = value` file plus `--set` overrides.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use num_complex::Complex64;
use qtm_core::contour::GridConfig;
use qtm_core::model::{DisorderParam, ModelParams, ALPHA_FLOOR};
use qtm_core::nlie::IterConfig;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => bail!("unknown output format `{other}` (expected csv or json)"),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Json => "json",
        })
    }
}

/// How the twist is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Twist {
    Field(f64),
    Kappa(Complex64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gamma: f64,
    pub j: f64,
    pub t: f64,
    pub twist: Twist,
    pub alpha: Complex64,
    pub grid: GridConfig,
    pub iter: IterConfig,
    pub delta_h: f64,
    pub delta_kappa: f64,
    pub trotter: Vec<usize>,
    /// Temperatures and fields of `thermo`; empty means the model values.
    pub sweep_t: Vec<f64>,
    pub sweep_h: Vec<f64>,
    pub format: Format,
    pub path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gamma: PI / 4.0,
            j: 1.0,
            t: 1.0,
            twist: Twist::Field(0.2),
            alpha: Complex64::new(0.2, 0.0),
            grid: GridConfig::default(),
            iter: IterConfig::default(),
            delta_h: 1e-4,
            delta_kappa: 1e-4,
            trotter: vec![4, 8],
            sweep_t: Vec::new(),
            sweep_h: Vec::new(),
            format: Format::Json,
            path: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "model.gamma",
    "model.j",
    "model.t",
    "model.h",
    "model.kappa",
    "model.alpha",
    "grid.r",
    "grid.d_outer",
    "grid.d_work",
    "grid.order",
    "grid.density",
    "solver.tol",
    "solver.max_iter",
    "solver.damping",
    "solver.delta_h",
    "solver.delta_kappa",
    "trotter.n",
    "sweep.t",
    "sweep.h",
    "output.format",
    "output.path",
];

/// Parses a real number. Accepts plain floats and multiples or fractions
/// of `pi` such as `pi/4`, `3*pi/8` or `-pi`.
pub fn parse_real(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Ok(x) = s.parse::<f64>() {
        return Ok(x);
    }
    let lower = s.to_ascii_lowercase();
    let (num, den) = match lower.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim().parse::<f64>().with_context(|| format!("bad denominator in `{s}`"))?),
        None => (lower.as_str(), 1.0),
    };
    let factor = match num {
        "pi" => 1.0,
        "-pi" => -1.0,
        _ => {
            let coeff = num.strip_suffix("pi").map(|c| c.trim().trim_end_matches('*').trim()).ok_or_else(|| anyhow!("cannot parse `{s}` as a number"))?;
            coeff.parse::<f64>().with_context(|| format!("cannot parse `{s}` as a number"))?
        }
    };
    Ok(factor * PI / den)
}

/// Parses `a`, `bi`, `a+bi` or `a-bi` (also `i` and `-i`).
pub fn parse_complex(s: &str) -> Result<Complex64> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let Some(body) = t.strip_suffix('i').or_else(|| t.strip_suffix('j')) else {
        return Ok(Complex64::new(parse_real(&t)?, 0.0));
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len()).rev().find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(k) => (parse_real(&body[..k])?, &body[k..]),
        None => (0.0, body),
    };
    let im = match im {
        "" | "+" => 1.0,
        "-" => -1.0,
        x => parse_real(x)?,
    };
    Ok(Complex64::new(re, im))
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(f).collect()
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim().parse::<usize>().with_context(|| format!("expected a non-negative integer, got `{s}`"))
}

/// Full-precision text of a float, stable across runs.
fn canon(x: f64) -> String {
    format!("{x:?}")
}

fn canon_c(z: Complex64) -> String {
    format!("{:?},{:?}", z.re, z.im)
}

impl RunConfig {
    /// Reads the optional file, applies overrides in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut raw: Vec<(String, String)> = Vec::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            for (no, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("{}:{}: expected `key = value`", p.display(), no + 1))?;
                raw.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got `{o}`"))?;
            raw.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(&raw)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        let mut h: Option<f64> = None;
        let mut kappa: Option<Complex64> = None;
        for (key, value) in pairs {
            let key = key.to_ascii_lowercase();
            let v = value.as_str();
            let ctx = || format!("config key `{key}`");
            match key.as_str() {
                "model.gamma" => c.gamma = parse_real(v).with_context(ctx)?,
                "model.j" => c.j = parse_real(v).with_context(ctx)?,
                "model.t" => c.t = parse_real(v).with_context(ctx)?,
                "model.h" => {
                    h = Some(parse_real(v).with_context(ctx)?);
                    kappa = None;
                }
                "model.kappa" => {
                    kappa = Some(parse_complex(v).with_context(ctx)?);
                    h = None;
                }
                "model.alpha" => c.alpha = parse_complex(v).with_context(ctx)?,
                "grid.r" => c.grid.r = parse_real(v).with_context(ctx)?,
                "grid.d_outer" => c.grid.d_outer = parse_real(v).with_context(ctx)?,
                "grid.d_work" => c.grid.d_work = parse_real(v).with_context(ctx)?,
                "grid.order" => c.grid.order = parse_usize(v).with_context(ctx)?,
                "grid.density" => c.grid.density = parse_real(v).with_context(ctx)?,
                "solver.tol" => c.iter.tol = parse_real(v).with_context(ctx)?,
                "solver.max_iter" => c.iter.max_iter = parse_usize(v).with_context(ctx)?,
                "solver.damping" => c.iter.damping = parse_real(v).with_context(ctx)?,
                "solver.delta_h" => c.delta_h = parse_real(v).with_context(ctx)?,
                "solver.delta_kappa" => c.delta_kappa = parse_real(v).with_context(ctx)?,
                "trotter.n" => c.trotter = parse_list(v, parse_usize).with_context(ctx)?,
                "sweep.t" => c.sweep_t = parse_list(v, parse_real).with_context(ctx)?,
                "sweep.h" => c.sweep_h = parse_list(v, parse_real).with_context(ctx)?,
                "output.format" => c.format = v.parse().with_context(ctx)?,
                "output.path" => c.path = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
                _ => bail!("unknown config key `{key}`; known keys: {}", KEYS.join(", ")),
            }
        }
        if let Some(k) = kappa {
            c.twist = Twist::Kappa(k);
        } else if let Some(h) = h {
            c.twist = Twist::Field(h);
        }
        c.validate()?;
        Ok(c)
    }

    /// Model parameters at temperature `t` and, in field mode, field `h`.
    pub fn params_at(&self, t: f64, h: Option<f64>) -> Result<ModelParams> {
        let p = match (self.twist, h) {
            (_, Some(h)) => ModelParams::from_field(self.gamma, self.j, t, h),
            (Twist::Field(h), None) => ModelParams::from_field(self.gamma, self.j, t, h),
            (Twist::Kappa(k), None) => ModelParams::from_twist(self.gamma, self.j, t, k),
        };
        p.map_err(|e| anyhow!("{e}"))
    }

    pub fn params(&self) -> Result<ModelParams> {
        self.params_at(self.t, None)
    }

    pub fn alpha(&self) -> DisorderParam {
        DisorderParam::new(self.alpha)
    }

    /// `(T, h)` points of the thermo sweep, temperatures outermost.
    pub fn sweep_points(&self) -> Vec<(f64, Option<f64>)> {
        let ts = if self.sweep_t.is_empty() { vec![self.t] } else { self.sweep_t.clone() };
        let hs: Vec<Option<f64>> = if self.sweep_h.is_empty() { vec![None] } else { self.sweep_h.iter().map(|h| Some(*h)).collect() };
        ts.iter().flat_map(|t| hs.iter().map(move |h| (*t, *h))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < PI / 2.0) {
            bail!("model.gamma = {} must lie in (0, pi/2)", self.gamma);
        }
        let g = &self.grid;
        if !(g.r > 0.0 && g.r.is_finite()) {
            bail!("grid.r = {} must be positive", g.r);
        }
        if !(g.d_work > 0.0 && g.d_work < g.d_outer && g.d_outer < 0.5) {
            bail!("grid heights need 0 < d_work < d_outer < 1/2 (fractions of gamma), got d_work = {}, d_outer = {}", g.d_work, g.d_outer);
        }
        if g.order < 2 {
            bail!("grid.order = {} must be at least 2", g.order);
        }
        if !(g.density > 0.0 && g.density.is_finite()) {
            bail!("grid.density = {} must be positive", g.density);
        }
        if !(self.iter.tol > 0.0) || self.iter.max_iter == 0 || !(self.iter.damping > 0.0 && self.iter.damping <= 1.0) {
            bail!("solver needs tol > 0, max_iter >= 1 and damping in (0, 1]");
        }
        if !(self.delta_h > 0.0) || !(self.delta_kappa > 0.0) {
            bail!("solver.delta_h and solver.delta_kappa must be positive");
        }
        if let Some(n) = self.trotter.iter().find(|n| **n < 2 || **n % 2 != 0) {
            bail!("trotter.n entries must be even and >= 2, got {n}");
        }
        if matches!(self.twist, Twist::Kappa(_)) && !self.sweep_h.is_empty() {
            bail!("sweep.h requires the field form model.h, not model.kappa");
        }
        for (t, h) in self.sweep_points() {
            let p = self.params_at(t, h)?;
            g.outer_contour(&p).map_err(|e| anyhow!("{e}"))?;
            g.work_contour(&p).map_err(|e| anyhow!("{e}"))?;
        }
        let p = self.params()?;
        self.alpha().checked_q_difference(&p, ALPHA_FLOOR).map_err(|e| anyhow!("model.alpha: {e}"))?;
        Ok(())
    }

    /// Resolved numerical settings as sorted `key -> value` text. Output
    /// settings are excluded so that CSV and JSON runs share a hash.
    pub fn canonical(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("model.gamma", canon(self.gamma));
        m.insert("model.j", canon(self.j));
        m.insert("model.t", canon(self.t));
        match self.twist {
            Twist::Field(h) => m.insert("model.h", canon(h)),
            Twist::Kappa(k) => m.insert("model.kappa", canon_c(k)),
        };
        m.insert("model.alpha", canon_c(self.alpha));
        m.insert("grid.r", canon(self.grid.r));
        m.insert("grid.d_outer", canon(self.grid.d_outer));
        m.insert("grid.d_work", canon(self.grid.d_work));
        m.insert("grid.order", self.grid.order.to_string());
        m.insert("grid.density", canon(self.grid.density));
        m.insert("solver.tol", canon(self.iter.tol));
        m.insert("solver.max_iter", self.iter.max_iter.to_string());
        m.insert("solver.damping", canon(self.iter.damping));
        m.insert("solver.delta_h", canon(self.delta_h));
        m.insert("solver.delta_kappa", canon(self.delta_kappa));
        m.insert("trotter.n", self.trotter.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","));
        m.insert("sweep.t", self.sweep_t.iter().map(|x| canon(*x)).collect::<Vec<_>>().join(","));
        m.insert("sweep.h", self.sweep_h.iter().map(|x| canon(*x)).collect::<Vec<_>>().join(","));
        m
    }

    /// SHA-256 of the canonical settings, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn reals_and_pi_fractions() {
        assert_eq!(parse_real("0.25").unwrap(), 0.25);
        assert_eq!(parse_real("pi/4").unwrap(), PI / 4.0);
        assert_eq!(parse_real("3*pi/8").unwrap(), 3.0 * PI / 8.0);
        assert_eq!(parse_real("-pi").unwrap(), -PI);
        assert!(parse_real("pie").is_err());
    }

    #[test]
    fn complex_forms() {
        assert_eq!(parse_complex("0.1").unwrap(), Complex64::new(0.1, 0.0));
        assert_eq!(parse_complex("0.3i").unwrap(), Complex64::new(0.0, 0.3));
        assert_eq!(parse_complex("-0.2-0.05i").unwrap(), Complex64::new(-0.2, -0.05));
        assert_eq!(parse_complex("1e-3+2e-3i").unwrap(), Complex64::new(1e-3, 2e-3));
        assert_eq!(parse_complex("1e+1-i").unwrap(), Complex64::new(10.0, -1.0));
        assert_eq!(parse_complex(" 4 + 0.1 i ").unwrap(), Complex64::new(4.0, 0.1));
    }

    #[test]
    fn overrides_and_validation() {
        let c = RunConfig::from_pairs(&pairs(&[("model.j", "0"), ("model.h", "0.6"), ("trotter.n", "2, 4")])).unwrap();
        assert_eq!(c.j, 0.0);
        assert_eq!(c.twist, Twist::Field(0.6));
        assert_eq!(c.trotter, vec![2, 4]);
        assert!(RunConfig::from_pairs(&pairs(&[("model.gamma", "pi/2")])).is_err());
        assert!(RunConfig::from_pairs(&pairs(&[("trotter.n", "3")])).is_err());
        assert!(RunConfig::from_pairs(&pairs(&[("model.alpha", "0")])).is_err());
        assert!(RunConfig::from_pairs(&pairs(&[("grid.d_work", "0.4")])).is_err());
        assert!(RunConfig::from_pairs(&pairs(&[("nonsense", "1")])).is_err());
        assert!(RunConfig::from_pairs(&pairs(&[("model.kappa", "0.1i"), ("sweep.h", "0.1")])).is_err());
    }

    #[test]
    fn hash_ignores_output_settings() {
        let a = RunConfig::from_pairs(&pairs(&[("output.format", "csv")])).unwrap();
        let b = RunConfig::from_pairs(&pairs(&[("output.format", "json")])).unwrap();
        let c = RunConfig::from_pairs(&pairs(&[("model.t", "0.5")])).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
