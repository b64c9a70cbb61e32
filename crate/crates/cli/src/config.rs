//! Flat `key = value` run configuration.
//!
//! One pair per line; `#` starts a comment; unknown keys, duplicate keys,
//! malformed values, and keys that do not apply to the configured family are
//! hard errors carrying the offending line number. Evaluation points are
//! comma-separated; multi-coordinate points (Fredholm with `domain_dim > 1`)
//! join coordinates with `:`, e.g. `eval_points = 0.2:0.8, 0.5:0.5`.

use neumann_mc::allocation::TailPolicy;
use neumann_mc::problem::{parse_expression, Family, ProblemSpec};
use std::collections::BTreeMap;

/// Every key the configuration format accepts.
const KNOWN_KEYS: &[&str] = &[
    "family",
    "kernel",
    "rhs",
    "lambda",
    "alpha",
    "horizon",
    "domain_dim",
    "z_outer",
    "theta_target",
    "per_node_cost",
    "seed",
    "zero_threshold",
    "tail_policy",
    "confidence_level",
    "eval_points",
    "grid_per_axis",
    "output_path",
];

/// A parsed and family-checked run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub spec: ProblemSpec,
    pub z_outer: u64,
    pub theta_target: Option<f64>,
    pub per_node_cost: u64,
    pub seed: u64,
    pub zero_threshold: u32,
    pub tail_policy: TailPolicy,
    pub confidence_level: f64,
    pub eval_points: Vec<Vec<f64>>,
    pub grid_per_axis: usize,
    pub output_path: Option<String>,
}

/// Configuration error: message plus the 1-based source line when known.
#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

fn err_at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: Some(line),
        message: message.into(),
    }
}

fn err(message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: None,
        message: message.into(),
    }
}

type Raw = BTreeMap<&'static str, (String, usize)>;

fn parse_raw(text: &str) -> Result<Raw, ConfigError> {
    let mut map: Raw = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(err_at(line_no, format!("expected `key = value`, got `{line}`")));
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        let Some(&known) = KNOWN_KEYS.iter().find(|&&k| k == key) else {
            return Err(err_at(line_no, format!("unknown key `{key}`")));
        };
        if value.is_empty() {
            return Err(err_at(line_no, format!("key `{key}` has an empty value")));
        }
        if map.insert(known, (value.to_string(), line_no)).is_some() {
            return Err(err_at(line_no, format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}

struct RawReader {
    map: Raw,
}

impl RawReader {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<(String, usize), ConfigError> {
        self.take(key)
            .ok_or_else(|| err(format!("missing required key `{key}`")))
    }

    fn forbid(&mut self, key: &str, family: Family) -> Result<(), ConfigError> {
        if let Some((_, line)) = self.take(key) {
            return Err(err_at(
                line,
                format!("key `{key}` does not apply to family {family}"),
            ));
        }
        Ok(())
    }
}

fn parse_f64(key: &str, value: &str, line: usize) -> Result<f64, ConfigError> {
    value
        .parse::<f64>()
        .map_err(|_| err_at(line, format!("key `{key}`: `{value}` is not a number")))
}

fn parse_u64(key: &str, value: &str, line: usize) -> Result<u64, ConfigError> {
    value
        .parse::<u64>()
        .map_err(|_| err_at(line, format!("key `{key}`: `{value}` is not a nonnegative integer")))
}

/// Parse configuration text into a validated `RunConfig`.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut raw = RawReader {
        map: parse_raw(text)?,
    };

    let (family_str, family_line) = raw.required("family")?;
    let family = match family_str.as_str() {
        "volterra" => Family::Volterra,
        "fredholm" => Family::Fredholm,
        "abel" => Family::AbelVolterra,
        other => {
            return Err(err_at(
                family_line,
                format!("family must be volterra, fredholm or abel, got `{other}`"),
            ))
        }
    };

    let (kernel_text, kernel_line) = raw.required("kernel")?;
    let kernel = parse_expression(&kernel_text)
        .map_err(|e| err_at(kernel_line, format!("kernel: {e}")))?;
    let (rhs_text, rhs_line) = raw.required("rhs")?;
    let rhs = parse_expression(&rhs_text).map_err(|e| err_at(rhs_line, format!("rhs: {e}")))?;
    let (lambda_text, lambda_line) = raw.required("lambda")?;
    let lambda = parse_f64("lambda", &lambda_text, lambda_line)?;

    let spec = match family {
        Family::Volterra => {
            raw.forbid("alpha", family)?;
            raw.forbid("domain_dim", family)?;
            let (h_text, h_line) = raw.required("horizon")?;
            let horizon = parse_f64("horizon", &h_text, h_line)?;
            ProblemSpec::volterra(kernel, rhs, lambda, horizon)
                .map_err(|e| err(format!("problem definition: {e}")))?
        }
        Family::AbelVolterra => {
            raw.forbid("domain_dim", family)?;
            let (h_text, h_line) = raw.required("horizon")?;
            let horizon = parse_f64("horizon", &h_text, h_line)?;
            let (a_text, a_line) = raw.required("alpha")?;
            let alpha = parse_f64("alpha", &a_text, a_line)?;
            ProblemSpec::abel(kernel, rhs, lambda, horizon, alpha)
                .map_err(|e| err(format!("problem definition: {e}")))?
        }
        Family::Fredholm => {
            raw.forbid("alpha", family)?;
            raw.forbid("horizon", family)?;
            let domain_dim = match raw.take("domain_dim") {
                Some((v, line)) => {
                    let d = parse_u64("domain_dim", &v, line)?;
                    if d == 0 {
                        return Err(err_at(line, "domain_dim must be at least 1"));
                    }
                    d as usize
                }
                None => 1,
            };
            ProblemSpec::fredholm(kernel, rhs, lambda, domain_dim)
                .map_err(|e| err(format!("problem definition: {e}")))?
        }
    };

    let z_outer = match raw.take("z_outer") {
        Some((v, line)) => {
            let z = parse_u64("z_outer", &v, line)?;
            if z < 2 {
                return Err(err_at(line, "z_outer must be at least 2"));
            }
            z
        }
        None => 1000,
    };

    let theta_target = match raw.take("theta_target") {
        Some((v, line)) => {
            let t = parse_f64("theta_target", &v, line)?;
            if !(t > 0.0 && t.is_finite()) {
                return Err(err_at(line, "theta_target must be positive and finite"));
            }
            Some(t)
        }
        None => None,
    };

    let per_node_cost = match raw.take("per_node_cost") {
        Some((v, line)) => {
            let c = parse_u64("per_node_cost", &v, line)?;
            if c == 0 {
                return Err(err_at(line, "per_node_cost must be at least 1"));
            }
            c
        }
        None => {
            if spec.family() == Family::Fredholm {
                spec.domain_dim() as u64
            } else {
                1
            }
        }
    };

    let seed = match raw.take("seed") {
        Some((v, line)) => parse_u64("seed", &v, line)?,
        None => 0,
    };

    let zero_threshold = match raw.take("zero_threshold") {
        Some((v, line)) => parse_u64("zero_threshold", &v, line)? as u32,
        None => 0,
    };

    let tail_policy = match raw.take("tail_policy") {
        Some((v, line)) => match v.as_str() {
            "one" => TailPolicy::One,
            "zero" => TailPolicy::Zero,
            other => {
                return Err(err_at(
                    line,
                    format!("tail_policy must be `one` or `zero`, got `{other}`"),
                ))
            }
        },
        None => TailPolicy::One,
    };

    let confidence_level = match raw.take("confidence_level") {
        Some((v, line)) => {
            let c = parse_f64("confidence_level", &v, line)?;
            if !(c > 0.0 && c < 1.0) {
                return Err(err_at(line, "confidence_level must lie strictly between 0 and 1"));
            }
            c
        }
        None => 0.95,
    };

    let eval_points = match raw.take("eval_points") {
        Some((v, line)) => {
            let mut points = Vec::new();
            for chunk in v.split(',') {
                let chunk = chunk.trim();
                if chunk.is_empty() {
                    return Err(err_at(line, "eval_points contains an empty entry"));
                }
                let coords: Result<Vec<f64>, ConfigError> = chunk
                    .split(':')
                    .map(|c| parse_f64("eval_points", c.trim(), line))
                    .collect();
                points.push(coords?);
            }
            points
        }
        None => Vec::new(),
    };

    let grid_per_axis = match raw.take("grid_per_axis") {
        Some((v, line)) => {
            let g = parse_u64("grid_per_axis", &v, line)?;
            if g < 2 {
                return Err(err_at(line, "grid_per_axis must be at least 2"));
            }
            g as usize
        }
        None => 201,
    };

    let output_path = raw.take("output_path").map(|(v, _)| v);

    debug_assert!(raw.map.is_empty(), "all known keys must be consumed");

    Ok(RunConfig {
        spec,
        z_outer,
        theta_target,
        per_node_cost,
        seed,
        zero_threshold,
        tail_policy,
        confidence_level,
        eval_points,
        grid_per_axis,
        output_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "family = volterra\nkernel = t*s\nrhs = 1\nlambda = 0.5\nhorizon = 1\n";

    #[test]
    fn parses_a_minimal_volterra_config() {
        let cfg = parse_config(BASE).unwrap();
        assert_eq!(cfg.spec.family(), Family::Volterra);
        assert_eq!(cfg.z_outer, 1000);
        assert_eq!(cfg.seed, 0);
        assert!(cfg.theta_target.is_none());
        assert_eq!(cfg.per_node_cost, 1);
        assert!((cfg.confidence_level - 0.95).abs() < 1e-15);
        assert!(cfg.eval_points.is_empty());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# a comment\n\nfamily = volterra # trailing\nkernel = t*s\nrhs = 1\nlambda = 0.5\nhorizon = 1\n";
        assert!(parse_config(text).is_ok());
    }

    #[test]
    fn unknown_key_is_a_hard_error_with_line() {
        let text = format!("{BASE}colour = red\n");
        let e = parse_config(&text).unwrap_err();
        assert_eq!(e.line, Some(6));
        assert!(e.message.contains("unknown key `colour`"), "{}", e.message);
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let text = format!("{BASE}lambda = 0.7\n");
        let e = parse_config(&text).unwrap_err();
        assert!(e.message.contains("duplicate key `lambda`"));
    }

    #[test]
    fn missing_required_key_is_reported() {
        let text = "family = volterra\nrhs = 1\nlambda = 0.5\nhorizon = 1\n";
        let e = parse_config(text).unwrap_err();
        assert!(e.message.contains("missing required key `kernel`"));
    }

    #[test]
    fn kernel_syntax_errors_carry_the_config_line() {
        let text = "family = volterra\nkernel = t +\nrhs = 1\nlambda = 0.5\nhorizon = 1\n";
        let e = parse_config(text).unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.message.contains("kernel:"), "{}", e.message);
    }

    #[test]
    fn family_specific_keys_are_enforced() {
        let text = format!("{BASE}alpha = 0.5\n");
        let e = parse_config(&text).unwrap_err();
        assert!(e.message.contains("does not apply"), "{}", e.message);

        let fredholm = "family = fredholm\nkernel = u*v\nrhs = u\nlambda = 0.5\nhorizon = 1\n";
        let e = parse_config(fredholm).unwrap_err();
        assert!(e.message.contains("`horizon` does not apply"), "{}", e.message);

        let abel_missing =
            "family = abel\nkernel = 1\nrhs = 1\nlambda = 0.5\nhorizon = 1\n";
        let e = parse_config(abel_missing).unwrap_err();
        assert!(e.message.contains("missing required key `alpha`"));
    }

    #[test]
    fn eval_points_support_scalar_and_multi_coordinate_forms() {
        let text = format!("{BASE}eval_points = 0.25, 0.5, 1.0\n");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.eval_points, vec![vec![0.25], vec![0.5], vec![1.0]]);

        let fredholm = "family = fredholm\nkernel = u*v\nrhs = u\nlambda = 0.5\ndomain_dim = 2\neval_points = 0.2:0.8, 0.5:0.5\n";
        let cfg = parse_config(fredholm).unwrap();
        assert_eq!(cfg.eval_points, vec![vec![0.2, 0.8], vec![0.5, 0.5]]);
    }

    #[test]
    fn numeric_validation() {
        let text = format!("{BASE}z_outer = 1\n");
        assert!(parse_config(&text).is_err());
        let text = format!("{BASE}theta_target = -5\n");
        assert!(parse_config(&text).is_err());
        let text = format!("{BASE}confidence_level = 1.5\n");
        assert!(parse_config(&text).is_err());
        let text = format!("{BASE}tail_policy = maybe\n");
        assert!(parse_config(&text).is_err());
        let text = format!("{BASE}z_outer = 64\ntail_policy = zero\nseed = 9\n");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.z_outer, 64);
        assert_eq!(cfg.tail_policy, TailPolicy::Zero);
        assert_eq!(cfg.seed, 9);
    }
}
