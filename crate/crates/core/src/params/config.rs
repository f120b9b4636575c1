//! TOML parameter files. The schema is described in `docs/config.md`.

use nalgebra::DMatrix;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{AdmissibleParamSet, JumpDistribution, JumpMeasureSpec, Law1d, ParamError, StateDim};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    dim: RawDim,
    #[serde(default)]
    drift: RawDrift,
    #[serde(default)]
    diffusion: RawDiffusion,
    #[serde(default)]
    killing: RawKilling,
    #[serde(default)]
    jumps: BTreeMap<String, RawDist>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDim {
    m: usize,
    n: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrift {
    b: Option<Vec<f64>>,
    beta: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiffusion {
    a: Option<Vec<Vec<f64>>>,
    alpha: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKilling {
    c: Option<f64>,
    gamma: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDist {
    rate: Option<f64>,
    kind: Option<String>,
    point: Option<Vec<f64>>,
    coord: Option<usize>,
    mean: Option<f64>,
    laws: Option<Vec<RawLaw>>,
    weights: Option<Vec<f64>>,
    components: Option<Vec<RawDist>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLaw {
    law: String,
    value: Option<f64>,
    mean: Option<f64>,
    scale: Option<f64>,
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, column)
}

fn matrix(field: &str, rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(invalid(field, format!("expected a {d}x{d} matrix")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn law(field: &str, raw: &RawLaw) -> Result<Law1d, ConfigError> {
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| invalid(field, format!("law `{}` needs `{name}`", raw.law)))
    };
    match raw.law.as_str() {
        "dirac" => Ok(Law1d::Dirac(need(raw.value, "value")?)),
        "exponential" => Ok(Law1d::Exponential { mean: need(raw.mean, "mean")? }),
        "half_normal" => Ok(Law1d::HalfNormal { scale: need(raw.scale, "scale")? }),
        other => Err(invalid(field, format!("unknown law `{other}`"))),
    }
}

fn distribution(field: &str, raw: &RawDist) -> Result<JumpDistribution, ConfigError> {
    let kind = raw.kind.as_deref().ok_or_else(|| invalid(field, "missing `kind`"))?;
    match kind {
        "dirac" => Ok(JumpDistribution::DiracAt(
            raw.point.clone().ok_or_else(|| invalid(field, "dirac needs `point`"))?,
        )),
        "exp_coord" => {
            let coord = raw.coord.ok_or_else(|| invalid(field, "exp_coord needs `coord`"))?;
            if coord == 0 {
                return Err(invalid(field, "`coord` is 1-based"));
            }
            let mean = raw.mean.ok_or_else(|| invalid(field, "exp_coord needs `mean`"))?;
            Ok(JumpDistribution::ExponentialOnCoordinate { coord: coord - 1, mean })
        }
        "product" => {
            let laws = raw.laws.as_ref().ok_or_else(|| invalid(field, "product needs `laws`"))?;
            Ok(JumpDistribution::IndependentProduct(
                laws.iter().map(|l| law(field, l)).collect::<Result<_, _>>()?,
            ))
        }
        "mixture" => {
            let weights =
                raw.weights.clone().ok_or_else(|| invalid(field, "mixture needs `weights`"))?;
            let comps =
                raw.components.as_ref().ok_or_else(|| invalid(field, "mixture needs `components`"))?;
            let components = comps
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if c.rate.is_some() {
                        return Err(invalid(field, "mixture components carry no `rate`"));
                    }
                    distribution(&format!("{field}.components[{}]", i + 1), c)
                })
                .collect::<Result<_, _>>()?;
            Ok(JumpDistribution::FiniteMixture { weights, components })
        }
        other => Err(invalid(field, format!("unknown kind `{other}`"))),
    }
}

fn measure(field: &str, raw: &RawDist) -> Result<JumpMeasureSpec, ConfigError> {
    let rate = raw.rate.unwrap_or(0.0);
    let dist = if raw.kind.is_none() { None } else { Some(distribution(field, raw)?) };
    Ok(JumpMeasureSpec { rate, distribution: dist })
}

/// Parse a parameter set from TOML text.
pub fn from_toml_str(src: &str) -> Result<AdmissibleParamSet, ConfigError> {
    let raw: RawFile = toml::from_str(src).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(src, s.start));
        ConfigError::Parse { line, column, message: e.message().to_string() }
    })?;
    let dim = StateDim::new(raw.dim.m, raw.dim.n)?;
    let d = dim.d();
    let mut p = AdmissibleParamSet::zero(dim);
    if let Some(b) = raw.drift.b {
        if b.len() != d {
            return Err(invalid("drift.b", format!("expected {d} entries")));
        }
        p.b = b;
    }
    if let Some(beta) = raw.drift.beta {
        if beta.len() != d || beta.iter().any(|v| v.len() != d) {
            return Err(invalid("drift.beta", format!("expected {d} vectors of length {d}")));
        }
        p.beta = beta;
    }
    if let Some(a) = raw.diffusion.a {
        p.a = matrix("diffusion.a", &a, d)?;
    }
    if let Some(alpha) = raw.diffusion.alpha {
        if alpha.len() != d {
            return Err(invalid("diffusion.alpha", format!("expected {d} matrices")));
        }
        p.alpha = alpha
            .iter()
            .enumerate()
            .map(|(k, m)| matrix(&format!("diffusion.alpha[{}]", k + 1), m, d))
            .collect::<Result<_, _>>()?;
    }
    if let Some(c) = raw.killing.c {
        p.c = c;
    }
    if let Some(g) = raw.killing.gamma {
        if g.len() != d {
            return Err(invalid("killing.gamma", format!("expected {d} entries")));
        }
        p.gamma = g;
    }
    for (key, rj) in &raw.jumps {
        let field = format!("jumps.{key}");
        let spec = measure(&field, rj)?;
        if key == "m" {
            p.m_measure = spec;
        } else {
            let k: usize = key
                .parse()
                .ok()
                .filter(|k| (1..=d).contains(k))
                .ok_or_else(|| invalid(&field, format!("key must be `m` or 1..={d}")))?;
            p.big_m[k - 1] = spec;
        }
    }
    p.check_structure()?;
    Ok(p)
}

/// Read and parse a parameter file.
pub fn load(path: &Path) -> Result<AdmissibleParamSet, ConfigError> {
    let src = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    from_toml_str(&src)
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_mat(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> =
        (0..m.nrows()).map(|i| fmt_vec(&m.row(i).iter().copied().collect::<Vec<_>>())).collect();
    format!("[{}]", rows.join(", "))
}

fn fmt_law(l: &Law1d) -> String {
    match l {
        Law1d::Dirac(v) => format!("{{ law = \"dirac\", value = {v:?} }}"),
        Law1d::Exponential { mean } => format!("{{ law = \"exponential\", mean = {mean:?} }}"),
        Law1d::HalfNormal { scale } => format!("{{ law = \"half_normal\", scale = {scale:?} }}"),
    }
}

fn fmt_dist_inline(dist: &JumpDistribution) -> String {
    match dist {
        JumpDistribution::DiracAt(v) => format!("kind = \"dirac\", point = {}", fmt_vec(v)),
        JumpDistribution::ExponentialOnCoordinate { coord, mean } => {
            format!("kind = \"exp_coord\", coord = {}, mean = {mean:?}", coord + 1)
        }
        JumpDistribution::IndependentProduct(laws) => {
            let l: Vec<String> = laws.iter().map(fmt_law).collect();
            format!("kind = \"product\", laws = [{}]", l.join(", "))
        }
        JumpDistribution::FiniteMixture { weights, components } => {
            let c: Vec<String> =
                components.iter().map(|c| format!("{{ {} }}", fmt_dist_inline(c))).collect();
            format!(
                "kind = \"mixture\", weights = {}, components = [{}]",
                fmt_vec(weights),
                c.join(", ")
            )
        }
    }
}

fn fmt_measure(out: &mut String, key: &str, spec: &JumpMeasureSpec) {
    if spec.rate == 0.0 && spec.distribution.is_none() {
        return;
    }
    let _ = writeln!(out, "\n[jumps.{key}]");
    let _ = write!(out, "rate = {:?}", spec.rate);
    if let Some(dist) = &spec.distribution {
        // inline fields are valid as top-level keys of the table as well
        for part in split_top_level(&fmt_dist_inline(dist)) {
            let _ = write!(out, "\n{part}");
        }
    }
    out.push('\n');
}

fn split_top_level(s: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    let mut in_str = false;
    for ch in s.chars() {
        match ch {
            '"' => in_str = !in_str,
            '[' | '{' if !in_str => depth += 1,
            ']' | '}' if !in_str => depth -= 1,
            ',' if depth == 0 && !in_str => {
                parts.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() {
        parts.push(cur.trim().to_string());
    }
    parts
}

/// Serialize a parameter set in the same schema; `from_toml_str` reads it back exactly.
pub fn to_toml_string(p: &AdmissibleParamSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[dim]\nm = {}\nn = {}", p.dim.m(), p.dim.n());
    let beta: Vec<String> = p.beta.iter().map(|b| fmt_vec(b)).collect();
    let _ = writeln!(out, "\n[drift]\nb = {}\nbeta = [{}]", fmt_vec(&p.b), beta.join(", "));
    let alpha: Vec<String> = p.alpha.iter().map(fmt_mat).collect();
    let _ = writeln!(out, "\n[diffusion]\na = {}\nalpha = [{}]", fmt_mat(&p.a), alpha.join(", "));
    let _ = writeln!(out, "\n[killing]\nc = {:?}\ngamma = {}", p.c, fmt_vec(&p.gamma));
    fmt_measure(&mut out, "m", &p.m_measure);
    for (k, mk) in p.big_m.iter().enumerate() {
        fmt_measure(&mut out, &(k + 1).to_string(), mk);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const HESTON: &str = r#"
[dim]
m = 1
n = 1

[drift]
beta = [[-0.5, 0.1], [0, 0]]

[diffusion]
alpha = [[[0.2, 0.1], [0.1, 1.0]], [[0, 0], [0, 0]]]

[jumps.1]
rate = 1.0
kind = "mixture"
weights = [0.5, 0.5]
components = [
  { kind = "product", laws = [{ law = "exponential", mean = 0.3 }, { law = "dirac", value = -0.1 }] },
  { kind = "exp_coord", coord = 1, mean = 0.2 },
]
"#;

    #[test]
    fn parses_heston_file() {
        let p = from_toml_str(HESTON).unwrap();
        assert_eq!(p.dim, StateDim::new(1, 1).unwrap());
        assert_eq!(p.beta[0], vec![-0.5, 0.1]);
        assert_eq!(p.alpha[0][(0, 1)], 0.1);
        assert_eq!(p.big_m[0].rate, 1.0);
        assert!(super::super::validate(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trips_through_writer() {
        let p = from_toml_str(HESTON).unwrap();
        let s = to_toml_string(&p);
        let q = from_toml_str(&s).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = from_toml_str("[dim]\nm = 1\nn = = 0\n").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_kind_names_field() {
        let src = "[dim]\nm = 1\nn = 0\n[jumps.1]\nrate = 1.0\nkind = \"gamma\"\n";
        match from_toml_str(src).unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "jumps.1"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn wrong_vector_length_is_rejected() {
        let src = "[dim]\nm = 1\nn = 1\n[drift]\nb = [0.1]\n";
        assert!(matches!(from_toml_str(src), Err(ConfigError::Invalid { .. })));
    }
}
