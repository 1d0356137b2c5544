//! Line-oriented config file: `key = value` pairs under `[section]`
//! headers. Values are quoted expression strings or bare numbers; unknown
//! sections and keys are rejected with their line number.

use crate::connection::{ConnError, ConnectionProfile, DomainRect};
use crate::constructor::{FreeFunctions, VARS_L0, VARS_Q, VARS_Z};
use crate::exprlang::{parse, parse_with_vars, Expr, ExprError};
use crate::model::SamplePoint;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing required section [domain] (t_range and r_range)")]
    MissingDomain,
    #[error("line {line}: expression error in `{key}`: {source}")]
    Expr {
        line: usize,
        key: String,
        source: ExprError,
    },
    #[error("cannot read config: {0}")]
    Io(String),
    #[error(transparent)]
    Conn(#[from] ConnError),
}

/// Validated run configuration.
pub struct Config {
    pub profile: ConnectionProfile,
    /// Original expression strings for the nonzero `k_i` (reporting).
    pub k_sources: Vec<(usize, String)>,
    pub nt: usize,
    pub nr: usize,
    pub tol_zero: f64,
    pub tol_residual: f64,
    pub free: FreeFunctions,
    pub samples: usize,
    pub seed: u64,
    pub geodesic_initial: Option<SamplePoint>,
    pub geodesic_h: f64,
    pub geodesic_steps: usize,
}

struct RawItem {
    line: usize,
    section: String,
    key: String,
    value: String,
}

fn split_items(text: &str) -> Result<Vec<RawItem>, ConfigError> {
    let mut items = Vec::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let trimmed = stripped.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return Err(ConfigError::Parse {
                    line,
                    msg: "malformed section header".into(),
                });
            };
            section = name.trim().to_string();
            const SECTIONS: [&str; 6] =
                ["connection", "domain", "grid", "tolerances", "model", "run"];
            if !SECTIONS.contains(&section.as_str()) {
                return Err(ConfigError::Parse {
                    line,
                    msg: format!("unknown section [{section}]"),
                });
            }
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError::Parse {
                line,
                msg: "expected `key = value`".into(),
            });
        };
        if section.is_empty() {
            return Err(ConfigError::Parse {
                line,
                msg: "key outside of any [section]".into(),
            });
        }
        items.push(RawItem {
            line,
            section: section.clone(),
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(items)
}

fn unquote(item: &RawItem) -> Result<String, ConfigError> {
    let v = &item.value;
    if v.starts_with('"') {
        if v.len() >= 2 && v.ends_with('"') {
            return Ok(v[1..v.len() - 1].to_string());
        }
        return Err(ConfigError::Parse {
            line: item.line,
            msg: "unterminated quoted string".into(),
        });
    }
    Ok(v.clone())
}

fn parse_numbers(item: &RawItem, want: usize) -> Result<Vec<f64>, ConfigError> {
    let vals: Result<Vec<f64>, _> = item
        .value
        .split_whitespace()
        .map(|tok| tok.parse::<f64>())
        .collect();
    match vals {
        Ok(v) if v.len() == want => Ok(v),
        Ok(v) => Err(ConfigError::Parse {
            line: item.line,
            msg: format!("`{}` expects {want} number(s), got {}", item.key, v.len()),
        }),
        Err(_) => Err(ConfigError::Parse {
            line: item.line,
            msg: format!("`{}` expects numeric value(s)", item.key),
        }),
    }
}

fn parse_number(item: &RawItem) -> Result<f64, ConfigError> {
    Ok(parse_numbers(item, 1)?[0])
}

fn parse_expr_value(
    item: &RawItem,
    vars: &[&'static str],
) -> Result<Expr, ConfigError> {
    let src = unquote(item)?;
    parse_with_vars(&src, vars).map_err(|source| ConfigError::Expr {
        line: item.line,
        key: item.key.clone(),
        source,
    })
}

/// Parse and validate configuration text.
pub fn load_config(text: &str) -> Result<Config, ConfigError> {
    let items = split_items(text)?;

    let mut k_exprs: [Expr; 12] = core::array::from_fn(|_| Expr::Const(0.0));
    let mut k_sources = Vec::new();
    let mut t_range = None;
    let mut r_range = None;
    let mut nt = 21usize;
    let mut nr = 21usize;
    let mut tol_zero = 1e-9;
    let mut tol_residual = 1e-7;
    let mut free = FreeFunctions::default();
    let mut samples = 200usize;
    let mut seed = 42u64;
    let mut geodesic_initial = None;
    let mut geodesic_h = 1e-3;
    let mut geodesic_steps = 1000usize;

    for item in &items {
        match (item.section.as_str(), item.key.as_str()) {
            ("connection", key) => {
                let Some(idx) = key
                    .strip_prefix('k')
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|i| (1..=12).contains(i))
                else {
                    return Err(ConfigError::Parse {
                        line: item.line,
                        msg: format!("unknown connection key `{key}` (expected k1..k12)"),
                    });
                };
                let src = unquote(item)?;
                k_exprs[idx - 1] = parse(&src).map_err(|source| ConfigError::Expr {
                    line: item.line,
                    key: item.key.clone(),
                    source,
                })?;
                k_sources.push((idx, src));
            }
            ("domain", "t_range") => {
                let v = parse_numbers(item, 2)?;
                t_range = Some((v[0], v[1]));
            }
            ("domain", "r_range") => {
                let v = parse_numbers(item, 2)?;
                r_range = Some((v[0], v[1]));
            }
            ("grid", "nt") => nt = parse_number(item)? as usize,
            ("grid", "nr") => nr = parse_number(item)? as usize,
            ("tolerances", "tol_zero") => tol_zero = parse_number(item)?,
            ("tolerances", "tol_residual") => tol_residual = parse_number(item)?,
            ("model", "xi") => free.xi = Some(parse_expr_value(item, &VARS_Q)?),
            ("model", "big_xi") => free.big_xi = Some(parse_expr_value(item, &VARS_Z)?),
            ("model", "l0") => free.l0 = Some(parse_expr_value(item, &VARS_L0)?),
            ("model", "base") => {
                let v = parse_numbers(item, 2)?;
                free.base = Some((v[0], v[1]));
            }
            ("model", "p0") => free.p0 = Some(parse_number(item)?),
            ("run", "samples") => samples = parse_number(item)? as usize,
            ("run", "seed") => seed = parse_number(item)? as u64,
            ("run", "geodesic_initial") => {
                let v = parse_numbers(item, 8)?;
                let p = SamplePoint::new(v[0], v[1], v[2], v[3], [v[4], v[5], v[6], v[7]])
                    .map_err(|e| ConfigError::Parse {
                        line: item.line,
                        msg: format!("invalid geodesic initial data: {e}"),
                    })?;
                geodesic_initial = Some(p);
            }
            ("run", "geodesic_h") => geodesic_h = parse_number(item)?,
            ("run", "geodesic_steps") => geodesic_steps = parse_number(item)? as usize,
            (section, key) => {
                return Err(ConfigError::Parse {
                    line: item.line,
                    msg: format!("unknown key `{key}` in section [{section}]"),
                });
            }
        }
    }

    let (Some(t_range), Some(r_range)) = (t_range, r_range) else {
        return Err(ConfigError::MissingDomain);
    };
    let domain = DomainRect::new(t_range.0, t_range.1, r_range.0, r_range.1)?;
    if nt < 3 || nr < 3 {
        return Err(ConfigError::Parse {
            line: 0,
            msg: format!("grid must be at least 3x3, got {nt}x{nr}"),
        });
    }
    let profile = ConnectionProfile::new(k_exprs, domain);
    Ok(Config {
        profile,
        k_sources,
        nt,
        nr,
        tol_zero,
        tol_residual,
        free,
        samples,
        seed,
        geodesic_initial,
        geodesic_h,
        geodesic_steps,
    })
}

pub fn load_config_file(path: &std::path::Path) -> Result<Config, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{path:?}: {e}")))?;
    load_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{classify, ClassifySettings, Label};

    #[test]
    fn minimal_config_defaults_to_zero_profile() {
        let cfg = load_config("[domain]\nt_range = -1 1\nr_range = 1 2\n").unwrap();
        for i in 1..=12 {
            assert!(cfg.profile.k_expr(i).is_zero());
        }
        let label = classify(&cfg.profile, &ClassifySettings::default())
            .unwrap()
            .label;
        assert_eq!(label, Label::T2Free2d);
    }

    #[test]
    fn minkowski_config_loads() {
        let text = r#"
[connection]
k9 = "1/r"
k10 = "-r"

[domain]
t_range = 0.2 1.2
r_range = 1 5
"#;
        let cfg = load_config(text).unwrap();
        assert!((cfg.profile.eval_k(9, 0.5, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((cfg.profile.eval_k(10, 0.5, 2.0).unwrap() + 2.0).abs() < 1e-15);
        let label = classify(&cfg.profile, &ClassifySettings::default())
            .unwrap()
            .label;
        assert_eq!(label, Label::T1FlatBracket);
    }

    #[test]
    fn expression_parse_error_carries_line() {
        let text = "[domain]\nt_range = -1 1\nr_range = 1 2\n[connection]\nk7 = \"sin(\"\n";
        match load_config(text) {
            Err(ConfigError::Expr { line, key, .. }) => {
                assert_eq!(line, 5);
                assert_eq!(key, "k7");
            }
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("bad expression was accepted"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = "[domain]\nt_range = -1 1\nr_range = 1 2\nbogus = 3\n";
        match load_config(text) {
            Err(ConfigError::Parse { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("bogus"));
            }
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("unknown key was accepted"),
        }
        let text = "[nope]\n";
        assert!(matches!(load_config(text), Err(ConfigError::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_domain_is_an_error() {
        assert!(matches!(
            load_config("[grid]\nnt = 11\nnr = 11\n"),
            Err(ConfigError::MissingDomain)
        ));
    }

    #[test]
    fn run_and_model_sections_round_trip() {
        let text = r#"
[domain]
t_range = 0 1
r_range = 1 2
[grid]
nt = 11
nr = 9
[tolerances]
tol_zero = 1e-10
tol_residual = 1e-6
[model]
xi = "q^2 + 1/q"
base = 0.25 1.5
p0 = 0.8
[run]
samples = 77
seed = 9
geodesic_initial = 0.5 1.5 1.2 0 1 0.1 0.2 0.05
geodesic_h = 0.002
geodesic_steps = 500
"#;
        let cfg = load_config(text).unwrap();
        assert_eq!((cfg.nt, cfg.nr), (11, 9));
        assert_eq!(cfg.tol_zero, 1e-10);
        assert_eq!(cfg.tol_residual, 1e-6);
        assert_eq!(cfg.samples, 77);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.free.base, Some((0.25, 1.5)));
        assert_eq!(cfg.free.p0, Some(0.8));
        assert!(cfg.free.xi.is_some());
        let p = cfg.geodesic_initial.unwrap();
        assert_eq!(p.vel, [1.0, 0.1, 0.2, 0.05]);
        assert_eq!(cfg.geodesic_steps, 500);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# header\n[domain]\n# note\nt_range = -1 1  # inline\nr_range = 1 2\n\n";
        assert!(load_config(text).is_ok());
    }
}
