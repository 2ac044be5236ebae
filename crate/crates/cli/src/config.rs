//! Flat run configuration shared by all subcommands, config-file loading and
//! the law/profile spec parsers.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stefan_core::{default_deficit_constant, read_two_column_csv, InitialLaw, PsiProfile};

use crate::CliError;

/// Every setting a command may use. Fields a command does not use stay
/// `None` and are left out of the echoed config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub law: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_reference: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_a: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_alpha: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub particles_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_sup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a TOML file of `key = value` pairs, or the JSON written by an
    /// earlier run, whose `config` object is used.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json")
            || text.trim_start().starts_with('{');
        if is_json {
            let doc: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
            let config = doc.get("config").cloned().unwrap_or(doc);
            serde_json::from_value(config)
                .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
        } else {
            toml::from_str(&text)
                .map_err(|e| CliError::Validation(format!("config {}: {}", path.display(), e.message())))
        }
    }

    pub fn require<T: Clone>(value: &Option<T>, name: &str) -> Result<T, CliError> {
        value
            .clone()
            .ok_or_else(|| CliError::Validation(format!("missing required setting --{}", name.replace('_', "-"))))
    }
}

pub fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Validation(format!("{name} must be positive, got {v}")))
    }
}

fn number(field: &str, spec: &str) -> Result<f64, CliError> {
    field
        .parse::<f64>()
        .map_err(|_| CliError::Validation(format!("bad number {field:?} in spec {spec:?}")))
}

fn split_spec(spec: &str) -> (&str, Vec<&str>) {
    let mut parts = spec.split(':');
    let kind = parts.next().unwrap_or("");
    (kind, parts.collect())
}

/// A parsed law with its canonical spec, in which defaults are filled in.
pub struct ResolvedLaw {
    pub law: InitialLaw,
    pub spec: String,
    /// α fixed by the law itself (monomial laws).
    pub alpha: Option<f64>,
}

/// `gamma:shape:rate`, `gamma-scale:shape:scale`, `monomial:alpha:a[:c]`,
/// `uniform:lo:hi` or `csv:path`.
pub fn parse_law(spec: &str) -> Result<ResolvedLaw, CliError> {
    let (kind, args) = split_spec(spec);
    let arity = |n: &[usize]| -> Result<(), CliError> {
        if n.contains(&args.len()) {
            Ok(())
        } else {
            Err(CliError::Validation(format!("law spec {spec:?} has the wrong number of fields")))
        }
    };
    let resolved = match kind {
        "gamma" | "gamma-scale" => {
            arity(&[2])?;
            let (shape, second) = (number(args[0], spec)?, number(args[1], spec)?);
            let law = if kind == "gamma" {
                InitialLaw::gamma(shape, second)
            } else {
                InitialLaw::gamma_with_scale(shape, second)
            };
            ResolvedLaw {
                law: law?,
                spec: format!("{kind}:{shape}:{second}"),
                alpha: None,
            }
        }
        "monomial" => {
            arity(&[2, 3])?;
            let (alpha, a) = (number(args[0], spec)?, number(args[1], spec)?);
            let c = match args.get(2) {
                Some(c) => number(c, spec)?,
                None => default_deficit_constant(alpha, a)?,
            };
            ResolvedLaw {
                law: InitialLaw::monomial_deficit(alpha, a, c)?,
                spec: format!("monomial:{alpha}:{a}:{c}"),
                alpha: Some(alpha),
            }
        }
        "uniform" => {
            arity(&[2])?;
            let (lo, hi) = (number(args[0], spec)?, number(args[1], spec)?);
            ResolvedLaw {
                law: InitialLaw::uniform(lo, hi)?,
                spec: format!("uniform:{lo}:{hi}"),
                alpha: None,
            }
        }
        "csv" => {
            let path = spec.strip_prefix("csv:").unwrap_or("");
            if path.is_empty() {
                return Err(CliError::Validation("csv law spec needs a path".into()));
            }
            ResolvedLaw {
                law: InitialLaw::from_csv(path)?,
                spec: spec.to_string(),
                alpha: None,
            }
        }
        _ => {
            return Err(CliError::Validation(format!(
                "unknown law kind {kind:?}; expected gamma, gamma-scale, monomial, uniform or csv"
            )))
        }
    };
    Ok(resolved)
}

/// `constant:psi0:delta`, `monomial:c:a:delta` or `csv:path` (columns x, ψ(x)).
pub fn parse_profile(spec: &str) -> Result<PsiProfile, CliError> {
    let (kind, args) = split_spec(spec);
    let fields = |n: usize| -> Result<Vec<f64>, CliError> {
        if args.len() != n {
            return Err(CliError::Validation(format!(
                "profile spec {spec:?} has the wrong number of fields"
            )));
        }
        args.iter().map(|a| number(a, spec)).collect()
    };
    Ok(match kind {
        "constant" => {
            let v = fields(2)?;
            PsiProfile::constant(v[0], v[1])?
        }
        "monomial" => {
            let v = fields(3)?;
            PsiProfile::monomial(v[0], v[1], v[2])?
        }
        "csv" => {
            let path = spec.strip_prefix("csv:").unwrap_or("");
            let (grid, values) = read_two_column_csv(Path::new(path))?;
            PsiProfile::tabulated(grid, values)?
        }
        _ => {
            return Err(CliError::Validation(format!(
                "unknown profile kind {kind:?}; expected constant, monomial or csv"
            )))
        }
    })
}

/// α from `--alpha` and the law, which must agree when both are given.
pub fn resolve_alpha(flag: Option<f64>, law: &ResolvedLaw) -> Result<f64, CliError> {
    match (flag, law.alpha) {
        (Some(a), Some(b)) if (a - b).abs() > 1e-12 * b => Err(CliError::Validation(format!(
            "--alpha {a} disagrees with the law's alpha {b}"
        ))),
        (Some(a), _) | (None, Some(a)) => positive("alpha", a),
        (None, None) => Err(CliError::Validation("missing required setting --alpha".into())),
    }
}

/// Step size and count from `dt` or `n`; `dt` wins when both are present.
pub fn resolve_mesh(cfg: &RunConfig, horizon: f64) -> Result<(usize, f64), CliError> {
    match (cfg.dt, cfg.n) {
        (Some(dt), n) => {
            let dt = positive("dt", dt)?;
            let steps = stefan_core::particle::mesh_steps(dt, horizon)?;
            if let Some(n) = n {
                if n != steps {
                    return Err(CliError::Validation(format!(
                        "--n {n} disagrees with --dt {dt} over horizon {horizon}"
                    )));
                }
            }
            Ok((steps, dt))
        }
        (None, Some(n)) if n > 0 => Ok((n, horizon / n as f64)),
        (None, Some(_)) => Err(CliError::Validation("n must be positive".into())),
        (None, None) => Err(CliError::Validation("missing required setting --n or --dt".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_spec_fills_default_constant() {
        let r = parse_law("monomial:1:2").unwrap();
        assert_eq!(r.alpha, Some(1.0));
        let c = default_deficit_constant(1.0, 2.0).unwrap();
        assert_eq!(r.spec, format!("monomial:1:2:{c}"));
        // canonical specs parse back to the same law
        assert_eq!(parse_law(&r.spec).unwrap().law, r.law);
    }

    #[test]
    fn bad_specs() {
        assert!(parse_law("gamma:1.5").is_err());
        assert!(parse_law("beta:1:2").is_err());
        assert!(parse_law("gamma:x:1").is_err());
        assert!(parse_profile("constant:0.3").is_err());
    }

    #[test]
    fn toml_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "law = \"gamma:1.5:0.5\"\nalpha = 1.3\nn = 100\nn_list = [25, 50]\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.alpha, Some(1.3));
        assert_eq!(cfg.n_list, Some(vec![25, 50]));
        std::fs::write(&path, "alpah = 1.3\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
