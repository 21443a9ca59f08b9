//! Tables and their JSON and CSV encodings.

use num_complex::Complex64;
use qtm_core::contour::GridConfig;
use serde_json::{json, Map, Value as Json};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Real,
    Complex,
    Int,
    Text,
    Bool,
    ComplexList,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Complex(Complex64),
    Int(i64),
    Text(String),
    Bool(bool),
    ComplexList(Vec<Complex64>),
    Null,
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Self::Real(x)
    }
}

impl From<Complex64> for Value {
    fn from(z: Complex64) -> Self {
        Self::Complex(z)
    }
}

impl From<usize> for Value {
    fn from(n: usize) -> Self {
        Self::Int(n as i64)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Self::Bool(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Self::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Self::Text(s)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(v: Option<T>) -> Self {
        v.map_or(Self::Null, Into::into)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub command: String,
    pub columns: Vec<(String, Kind)>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(command: &str, columns: &[(&str, Kind)]) -> Self {
        Self { command: command.into(), columns: columns.iter().map(|(n, k)| (n.to_string(), *k)).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match the header");
        self.rows.push(row);
    }
}

/// Config hash and grid geometry attached to every record.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub config_hash: String,
    pub grid: GridConfig,
}

fn real_json(x: f64) -> Json {
    serde_json::Number::from_f64(x).map_or(Json::Null, Json::Number)
}

fn complex_json(z: Complex64) -> Json {
    json!({ "re": real_json(z.re), "im": real_json(z.im) })
}

fn value_json(v: &Value) -> Json {
    match v {
        Value::Real(x) => real_json(*x),
        Value::Complex(z) => complex_json(*z),
        Value::Int(n) => json!(n),
        Value::Text(s) => json!(s),
        Value::Bool(b) => json!(b),
        Value::ComplexList(zs) => Json::Array(zs.iter().map(|z| complex_json(*z)).collect()),
        Value::Null => Json::Null,
    }
}

fn grid_json(g: &GridConfig) -> Json {
    json!({ "r": g.r, "d_outer": g.d_outer, "d_work": g.d_work, "order": g.order, "density": g.density })
}

pub fn to_json(t: &Table, prov: &Provenance) -> String {
    let records: Vec<Json> = t
        .rows
        .iter()
        .map(|row| {
            let mut m = Map::new();
            m.insert("config_hash".into(), json!(prov.config_hash));
            for ((name, _), v) in t.columns.iter().zip(row) {
                m.insert(name.clone(), value_json(v));
            }
            Json::Object(m)
        })
        .collect();
    let doc = json!({
        "schema": SCHEMA,
        "command": t.command,
        "config_hash": prov.config_hash,
        "grid": grid_json(&prov.grid),
        "records": records,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("tables serialize");
    s.push('\n');
    s
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cells(v: &Value, kind: Kind) -> Vec<String> {
    match (v, kind) {
        (Value::Null, Kind::Complex) => vec![String::new(), String::new()],
        (Value::Null, _) => vec![String::new()],
        (Value::Real(x), _) => vec![fmt_real(*x)],
        (Value::Complex(z), _) => vec![fmt_real(z.re), fmt_real(z.im)],
        (Value::Int(n), _) => vec![n.to_string()],
        (Value::Text(s), _) => vec![quote(s)],
        (Value::Bool(b), _) => vec![b.to_string()],
        (Value::ComplexList(zs), _) => {
            vec![zs.iter().map(|z| format!("{} {}", fmt_real(z.re), fmt_real(z.im))).collect::<Vec<_>>().join(";")]
        }
    }
}

/// Complex columns become `name_re,name_im`; lists of complex numbers are
/// one cell of `re im` pairs separated by `;`.
pub fn to_csv(t: &Table, prov: &Provenance) -> String {
    let mut header: Vec<String> =
        ["config_hash", "grid_r", "grid_d_outer", "grid_d_work", "grid_order", "grid_density"].iter().map(|s| s.to_string()).collect();
    for (name, kind) in &t.columns {
        match kind {
            Kind::Complex => {
                header.push(format!("{name}_re"));
                header.push(format!("{name}_im"));
            }
            _ => header.push(name.clone()),
        }
    }
    let g = &prov.grid;
    let prefix = vec![prov.config_hash.clone(), fmt_real(g.r), fmt_real(g.d_outer), fmt_real(g.d_work), g.order.to_string(), fmt_real(g.density)];
    let mut out = header.join(",");
    out.push('\n');
    for row in &t.rows {
        let mut line = prefix.clone();
        for ((_, kind), v) in t.columns.iter().zip(row) {
            line.extend(cells(v, *kind));
        }
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
