//! Plain-text problem configuration.
//!
//! The format is one `section.key = value` assignment per line. Values are
//! numbers, bracketed number lists, or double-quoted coefficient expressions;
//! `#` starts a comment. Later assignments to the same key override earlier
//! ones, so a base file can be extended by appending.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use loadstone_core::{Expr, Grid, InverseOptions, MmsTemplate, PicardOptions, ProblemSpec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing required key `{key}`")]
    Missing { key: &'static str },
    #[error("key `{key}` (line {line}): expected {want}")]
    WrongType {
        key: String,
        line: usize,
        want: &'static str,
    },
    #[error("key `{key}` (line {line}): {msg}")]
    BadValue {
        key: String,
        line: usize,
        msg: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    List(Vec<f64>),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(v) => write!(f, "{v}"),
            Value::List(vs) => write!(f, "{vs:?}"),
            Value::Text(s) => write!(f, "\"{s}\""),
        }
    }
}

/// Parsed key/value assignments, each with the line it came from.
#[derive(Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (usize, Value)>,
}

/// Strips a trailing comment, respecting quoted strings.
fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (pos, ch) in line.char_indices() {
        match ch {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..pos],
            _ => {}
        }
    }
    line
}

fn parse_value(raw: &str, line: usize) -> Result<Value, ConfigError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(ConfigError::Syntax {
            line,
            msg: "missing value after `=`".into(),
        });
    }
    if let Some(inner) = raw.strip_prefix('"') {
        let Some(text) = inner.strip_suffix('"') else {
            return Err(ConfigError::Syntax {
                line,
                msg: "unterminated string".into(),
            });
        };
        if text.contains('"') {
            return Err(ConfigError::Syntax {
                line,
                msg: "stray `\"` inside string".into(),
            });
        }
        return Ok(Value::Text(text.to_string()));
    }
    if let Some(inner) = raw.strip_prefix('[') {
        let Some(body) = inner.strip_suffix(']') else {
            return Err(ConfigError::Syntax {
                line,
                msg: "unterminated list".into(),
            });
        };
        let body = body.trim();
        let mut items = Vec::new();
        if !body.is_empty() {
            for part in body.split(',') {
                let part = part.trim();
                let v: f64 = part.parse().map_err(|_| ConfigError::Syntax {
                    line,
                    msg: format!("`{part}` is not a number"),
                })?;
                items.push(v);
            }
        }
        return Ok(Value::List(items));
    }
    raw.parse::<f64>()
        .map(Value::Number)
        .map_err(|_| ConfigError::Syntax {
            line,
            msg: format!("`{raw}` is not a number, list, or quoted expression"),
        })
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, full_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(full_line).trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    msg: format!("expected `section.key = value`, got `{line}`"),
                });
            };
            let key = key.trim();
            let valid = key.contains('.')
                && !key.is_empty()
                && key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_');
            if !valid {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    msg: format!("`{key}` is not a `section.key` name"),
                });
            }
            let value = parse_value(value, line_no)?;
            // Later assignments deliberately override earlier ones.
            entries.insert(key.to_string(), (line_no, value));
        }
        Ok(RawConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn get(&self, key: &'static str) -> Result<(usize, &Value), ConfigError> {
        self.entries
            .get(key)
            .map(|(l, v)| (*l, v))
            .ok_or(ConfigError::Missing { key })
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn number(&self, key: &'static str) -> Result<f64, ConfigError> {
        match self.get(key)? {
            (_, Value::Number(v)) => Ok(*v),
            (line, _) => Err(ConfigError::WrongType {
                key: key.into(),
                line,
                want: "a number",
            }),
        }
    }

    pub fn count(&self, key: &'static str) -> Result<usize, ConfigError> {
        let (line, _) = self.get(key)?;
        let v = self.number(key)?;
        if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
            return Err(ConfigError::BadValue {
                key: key.into(),
                line,
                msg: format!("`{v}` is not a nonnegative integer"),
            });
        }
        Ok(v as usize)
    }

    pub fn list(&self, key: &'static str) -> Result<Vec<f64>, ConfigError> {
        match self.get(key)? {
            (_, Value::List(vs)) => Ok(vs.clone()),
            (line, _) => Err(ConfigError::WrongType {
                key: key.into(),
                line,
                want: "a bracketed list",
            }),
        }
    }

    pub fn count_list(&self, key: &'static str) -> Result<Vec<usize>, ConfigError> {
        let (line, _) = self.get(key)?;
        self.list(key)?
            .into_iter()
            .map(|v| {
                if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                    Err(ConfigError::BadValue {
                        key: key.into(),
                        line,
                        msg: format!("`{v}` is not a nonnegative integer"),
                    })
                } else {
                    Ok(v as usize)
                }
            })
            .collect()
    }

    pub fn expr(&self, key: &'static str) -> Result<Expr, ConfigError> {
        match self.get(key)? {
            (line, Value::Text(src)) => Expr::parse(src).map_err(|e| ConfigError::BadValue {
                key: key.into(),
                line,
                msg: e.to_string(),
            }),
            (line, _) => Err(ConfigError::WrongType {
                key: key.into(),
                line,
                want: "a quoted expression",
            }),
        }
    }

    pub fn expr_opt(&self, key: &'static str) -> Result<Option<Expr>, ConfigError> {
        if self.has(key) {
            self.expr(key).map(Some)
        } else {
            Ok(None)
        }
    }
}

/// Everything a command needs, assembled from one config file.
pub struct Loaded {
    pub spec: ProblemSpec,
    pub grid: Grid,
    /// Number of sine modes the solver carries.
    pub k_count: usize,
    pub opts: InverseOptions,
    /// Known factor `h(x, t)` for the forward command, if given.
    pub forward_h: Option<Expr>,
    /// Manufactured-solution section, if given.
    pub mms: Option<MmsSection>,
}

pub struct MmsSection {
    pub modes: Vec<usize>,
    pub amplitudes: Vec<f64>,
    pub h_true: Expr,
}

impl Loaded {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let spec = ProblemSpec {
            k_coeffs: [
                raw.expr("problem.k0")?,
                raw.expr("problem.k1")?,
                raw.expr("problem.k2")?,
                raw.expr("problem.k3")?,
                raw.expr("problem.k4")?,
            ],
            a: raw.number("problem.a")?,
            b: raw.number("problem.b")?,
            c: raw.number("problem.c")?,
            gamma: raw.number("problem.gamma")?,
            t_end: raw.number("problem.t_end")?,
            ell: raw.number("problem.ell")?,
            ell0: raw.number("problem.ell0")?,
            f: raw.expr("problem.f")?,
            g: raw.expr("problem.g")?,
            phi0: raw.expr("problem.phi0")?,
            eta: raw.number("problem.eta")?,
        };
        let (nx_line, _) = raw.get("grid.nx")?;
        let grid = Grid::new(
            raw.count("grid.nx")?,
            raw.count("grid.nt")?,
            spec.t_end,
        )
        .map_err(|e| ConfigError::BadValue {
            key: "grid.nx".into(),
            line: nx_line,
            msg: e.to_string(),
        })?;

        let mut opts = InverseOptions {
            eps_schedule: raw.list("solver.eps_schedule")?,
            picard: PicardOptions {
                tol: raw.number("solver.tol")?,
                max_iter: raw.count("solver.max_iter")?,
            },
            ..InverseOptions::default()
        };
        if raw.has("solver.ny") {
            opts.ny = Some(raw.count("solver.ny")?);
        }

        let mms = if raw.has("mms.modes") {
            Some(MmsSection {
                modes: raw.count_list("mms.modes")?,
                amplitudes: raw.list("mms.amplitudes")?,
                h_true: raw.expr("mms.h")?,
            })
        } else {
            None
        };

        Ok(Loaded {
            spec,
            grid,
            k_count: raw.count("solver.modes")?,
            opts,
            forward_h: raw.expr_opt("problem.h")?,
            mms,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_raw(&RawConfig::load(path)?)
    }

    /// Template for the refinement study; needs the `mms.*` section.
    pub fn mms_template(&self) -> Result<MmsTemplate, ConfigError> {
        let section = self.mms.as_ref().ok_or(ConfigError::Missing {
            key: "mms.modes",
        })?;
        Ok(MmsTemplate {
            k_coeffs: self.spec.k_coeffs.clone(),
            a: self.spec.a,
            b: self.spec.b,
            c: self.spec.c,
            gamma: self.spec.gamma,
            t_end: self.spec.t_end,
            ell: self.spec.ell,
            ell0: self.spec.ell0,
            f: self.spec.f.clone(),
            eta: self.spec.eta,
            h_true: section.h_true.clone(),
            modes: section.modes.clone(),
            amplitudes: section.amplitudes.clone(),
            k_count: self.k_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
# minimal well-formed problem
problem.k0 = "-1"
problem.k1 = "-1"
problem.k2 = "0"
problem.k3 = "2"
problem.k4 = "t*(1 - t)"
problem.a = 1.0
problem.b = 1.0
problem.c = 1.0
problem.gamma = 2.718281828459045
problem.t_end = 1.0
problem.ell = 3.141592653589793
problem.ell0 = 1.0
problem.eta = 1.0
problem.f = "exp(t)*sin(y)"
problem.g = "0"
problem.phi0 = "0"
grid.nx = 9
grid.nt = 9
solver.modes = 2
solver.eps_schedule = [1e-2, 1e-3]
solver.tol = 1e-8
solver.max_iter = 30
"#;

    #[test]
    fn minimal_config_loads() {
        let raw = RawConfig::parse(MINIMAL).unwrap();
        let loaded = Loaded::from_raw(&raw).unwrap();
        assert_eq!(loaded.grid.nx, 9);
        assert_eq!(loaded.k_count, 2);
        assert_eq!(loaded.opts.eps_schedule, vec![1e-2, 1e-3]);
        assert_eq!(loaded.opts.picard.max_iter, 30);
        assert!(loaded.forward_h.is_none());
        assert!(loaded.mms.is_none());
        assert!(loaded.mms_template().is_err());
    }

    #[test]
    fn later_assignment_overrides() {
        let text = format!("{MINIMAL}\ngrid.nx = 17\n");
        let loaded = Loaded::from_raw(&RawConfig::parse(&text).unwrap()).unwrap();
        assert_eq!(loaded.grid.nx, 17);
    }

    #[test]
    fn trailing_comments_and_hash_in_strings() {
        let raw = RawConfig::parse("a.b = 3 # note\na.c = \"1 + x # not a comment\"\n").unwrap();
        assert_eq!(raw.number("a.b").unwrap(), 3.0);
        match raw.get("a.c").unwrap().1 {
            Value::Text(s) => assert_eq!(s, "1 + x # not a comment"),
            other => panic!("expected text, got {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = RawConfig::parse("a.b = 1\nnot an assignment\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }), "{err}");

        let err = RawConfig::parse("\n\na.b = [1, oops]\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 3, .. }), "{err}");

        let err = RawConfig::parse("a.b = \"unterminated\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }), "{err}");

        let err = RawConfig::parse("nodot = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }), "{err}");
    }

    #[test]
    fn missing_and_mistyped_keys() {
        let raw = RawConfig::parse("problem.a = 1\n").unwrap();
        assert!(matches!(
            raw.number("problem.b").unwrap_err(),
            ConfigError::Missing { key: "problem.b" }
        ));
        assert!(matches!(
            raw.list("problem.a").unwrap_err(),
            ConfigError::WrongType { line: 1, .. }
        ));
        assert!(matches!(
            raw.expr("problem.a").unwrap_err(),
            ConfigError::WrongType { line: 1, .. }
        ));
    }

    #[test]
    fn expression_parse_errors_name_the_key() {
        let raw = RawConfig::parse("problem.f = \"sin(\"\n").unwrap();
        let err = raw.expr("problem.f").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("problem.f") && msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn counts_reject_fractions_and_negatives() {
        let raw = RawConfig::parse("s.n = 2.5\ns.m = -3\ns.l = [1, 2.5]\n").unwrap();
        assert!(raw.count("s.n").is_err());
        assert!(raw.count("s.m").is_err());
        assert!(raw.count_list("s.l").is_err());
    }

    #[test]
    fn empty_list_parses() {
        let raw = RawConfig::parse("s.l = []\n").unwrap();
        assert_eq!(raw.list("s.l").unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn mms_section_round_trips_into_template() {
        let text = format!(
            "{MINIMAL}\nmms.modes = [1, 2]\nmms.amplitudes = [1.0, 0.5]\nmms.h = \"1 + x*t\"\n"
        );
        let loaded = Loaded::from_raw(&RawConfig::parse(&text).unwrap()).unwrap();
        let tpl = loaded.mms_template().unwrap();
        assert_eq!(tpl.modes, vec![1, 2]);
        assert_eq!(tpl.amplitudes, vec![1.0, 0.5]);
        assert_eq!(tpl.k_count, 2);
    }
}
