//! Flat `key = value` session configuration.
//!
//! A config file is a TOML document with no tables: every key names one
//! session field. The same names are accepted as command-line overrides, so
//! the file and the flags share a single parser ([`apply_field`]).

use std::fmt;
use std::path::Path;

use qkd_core::adversary::AdversaryKind;
use qkd_core::pipeline::ConfigError;
use qkd_core::{AdversaryStrategy, BlockSize, KeyRule, SessionConfig};

/// Every recognised key, in the order [`render`] writes them.
pub const FIELDS: [&str; 16] = [
    "n_photons",
    "flip_prob",
    "loss_prob",
    "adversary",
    "intercept_fraction",
    "variant",
    "safety_s",
    "sample_fraction",
    "auth_rule",
    "ka_len",
    "tag_len",
    "nonce_len",
    "block_size",
    "agree_rounds_needed",
    "max_rounds",
    "seed",
];

/// Keys that take a number and can therefore be swept.
pub const NUMERIC_FIELDS: [&str; 12] = [
    "n_photons",
    "flip_prob",
    "loss_prob",
    "intercept_fraction",
    "safety_s",
    "sample_fraction",
    "ka_len",
    "tag_len",
    "nonce_len",
    "block_size",
    "agree_rounds_needed",
    "max_rounds",
];

/// All problems found in one configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.0 {
            writeln!(f, "  {}: {}", e.field, e.reason)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl From<ConfigError> for ConfigErrors {
    fn from(e: ConfigError) -> Self {
        Self(vec![e])
    }
}

fn number<T: std::str::FromStr>(field: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError::new(field, format!("expected a number, got {value:?}")))
}

/// Sets one field from its textual value.
pub fn apply_field(cfg: &mut SessionConfig, field: &str, value: &str) -> Result<(), ConfigError> {
    let value = value.trim();
    match field {
        "n_photons" => cfg.n_photons = number(field, value)?,
        "flip_prob" => cfg.channel.flip_prob = number(field, value)?,
        "loss_prob" => cfg.channel.loss_prob = number(field, value)?,
        "adversary" => {
            cfg.adversary = value
                .parse::<AdversaryStrategy>()
                .map_err(|e| ConfigError::new(field, e.to_string()))?
        }
        "intercept_fraction" => {
            // naming a fraction implies intercept-resend
            match cfg.adversary.kind {
                AdversaryKind::Impersonate => {
                    return Err(ConfigError::new(field, "not applicable to adversary = impersonate"))
                }
                _ => cfg.adversary = AdversaryStrategy::intercept(number(field, value)?),
            }
        }
        "variant" => cfg.variant = value.parse()?,
        "safety_s" => cfg.safety_s = number(field, value)?,
        "sample_fraction" => cfg.sample_fraction = number(field, value)?,
        "auth_rule" => {
            cfg.auth.rule = match value.to_ascii_lowercase().replace('_', "-").as_str() {
                "odd-position" => KeyRule::OddPosition,
                "hash-derived" => KeyRule::HashDerived,
                _ => {
                    return Err(ConfigError::new(
                        field,
                        format!("expected odd-position or hash-derived, got {value:?}"),
                    ))
                }
            }
        }
        "ka_len" => cfg.auth.ka_len = number(field, value)?,
        "tag_len" => cfg.auth.tag_len = number(field, value)?,
        "nonce_len" => cfg.auth.nonce_len = number(field, value)?,
        "block_size" => {
            cfg.recon.block_size = if value.eq_ignore_ascii_case("auto") {
                BlockSize::Auto
            } else {
                BlockSize::Fixed(
                    value
                        .parse()
                        .map_err(|_| ConfigError::new(field, format!("expected auto or an integer, got {value:?}")))?,
                )
            }
        }
        "agree_rounds_needed" => cfg.recon.agree_rounds_needed = number(field, value)?,
        "max_rounds" => cfg.recon.max_rounds = number(field, value)?,
        "seed" => cfg.seed = number(field, value)?,
        _ => return Err(ConfigError::new(field, "unknown field")),
    }
    Ok(())
}

fn scalar_text(field: &str, value: &toml::Value) -> Result<String, ConfigError> {
    match value {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        _ => Err(ConfigError::new(field, "expected a string or a number")),
    }
}

/// Parses config text on top of `base`, then validates the result.
pub fn parse_onto(base: SessionConfig, text: &str) -> Result<SessionConfig, ConfigErrors> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::new("<file>", e.message().to_string()))?;
    let mut cfg = base;
    let mut errs = Vec::new();
    // adversary first so a later intercept_fraction refines it
    let mut entries: Vec<_> = table.iter().collect();
    entries.sort_by_key(|(k, _)| FIELDS.iter().position(|f| f == k).unwrap_or(usize::MAX));
    for (key, value) in entries {
        if let Err(e) = scalar_text(key, value).and_then(|v| apply_field(&mut cfg, key, &v)) {
            errs.push(e);
        }
    }
    // fields that failed to parse keep their valid previous value, so
    // validation only adds new complaints
    if let Err(more) = cfg.validate() {
        errs.extend(more);
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errs))
    }
}

pub fn load(path: &Path) -> Result<SessionConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("<file>", format!("{}: {e}", path.display())))?;
    parse_onto(SessionConfig::default(), &text)
}

/// Applies `(field, value)` overrides in order and validates the result.
pub fn apply_overrides<'a>(
    mut cfg: SessionConfig,
    overrides: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<SessionConfig, ConfigErrors> {
    let mut errs = Vec::new();
    for (field, value) in overrides {
        if let Err(e) = apply_field(&mut cfg, field, value) {
            errs.push(e);
        }
    }
    // fields that failed to parse keep their valid previous value, so
    // validation only adds new complaints
    if let Err(more) = cfg.validate() {
        errs.extend(more);
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errs))
    }
}

fn field_text(cfg: &SessionConfig, field: &str) -> String {
    match field {
        "n_photons" => cfg.n_photons.to_string(),
        "flip_prob" => cfg.channel.flip_prob.to_string(),
        "loss_prob" => cfg.channel.loss_prob.to_string(),
        "adversary" => match cfg.adversary.kind {
            AdversaryKind::InterceptResend => "intercept".into(),
            _ => cfg.adversary.to_string(),
        },
        "intercept_fraction" => cfg.adversary.intercept_fraction.to_string(),
        "variant" => cfg.variant.to_string(),
        "safety_s" => cfg.safety_s.to_string(),
        "sample_fraction" => cfg.sample_fraction.to_string(),
        "auth_rule" => match cfg.auth.rule {
            KeyRule::OddPosition => "odd-position".into(),
            KeyRule::HashDerived => "hash-derived".into(),
        },
        "ka_len" => cfg.auth.ka_len.to_string(),
        "tag_len" => cfg.auth.tag_len.to_string(),
        "nonce_len" => cfg.auth.nonce_len.to_string(),
        "block_size" => match cfg.recon.block_size {
            BlockSize::Auto => "auto".into(),
            BlockSize::Fixed(b) => b.to_string(),
        },
        "agree_rounds_needed" => cfg.recon.agree_rounds_needed.to_string(),
        "max_rounds" => cfg.recon.max_rounds.to_string(),
        "seed" => cfg.seed.to_string(),
        _ => unreachable!("unknown field {field}"),
    }
}

/// Writes `cfg` back out as a config file that [`parse_onto`] reads to the
/// same value.
pub fn render(cfg: &SessionConfig) -> String {
    let mut out = String::new();
    for field in FIELDS {
        let text = field_text(cfg, field);
        let value = match field {
            "adversary" if cfg.adversary.kind == AdversaryKind::InterceptResend => continue,
            "intercept_fraction" if cfg.adversary.kind != AdversaryKind::InterceptResend => continue,
            "adversary" | "variant" | "auth_rule" | "block_size" => toml::Value::String(text).to_string(),
            // TOML integers are signed 64-bit
            "seed" if cfg.seed > i64::MAX as u64 => toml::Value::String(text).to_string(),
            _ => text,
        };
        out.push_str(&format!("{field} = {value}\n"));
    }
    out
}

/// A `field=v1,v2,...` sweep over one numeric field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sweep {
    pub field: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Sweep {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (field, values) = s
            .split_once('=')
            .ok_or_else(|| ConfigError::new("sweep", "expected field=v1,v2,..."))?;
        let field = field.trim();
        if !NUMERIC_FIELDS.contains(&field) {
            return Err(ConfigError::new(
                "sweep",
                format!("{field:?} is not a numeric session field"),
            ));
        }
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(ConfigError::new("sweep", "no values given"));
        }
        Ok(Self {
            field: field.to_string(),
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qkd_core::Variant;

    #[test]
    fn every_field_round_trips() {
        let mut cfg = SessionConfig {
            n_photons: 1000,
            adversary: AdversaryStrategy::intercept(0.3),
            variant: Variant::AuthLast,
            seed: u64::MAX,
            ..SessionConfig::default()
        };
        cfg.channel.loss_prob = 0.125;
        cfg.auth.rule = KeyRule::HashDerived;
        cfg.auth.ka_len = 80;
        cfg.recon.block_size = BlockSize::Fixed(12);
        let text = render(&cfg);
        assert_eq!(parse_onto(SessionConfig::default(), &text).unwrap(), cfg);

        let def = SessionConfig::default();
        assert_eq!(parse_onto(SessionConfig::default(), &render(&def)).unwrap(), def);
    }

    #[test]
    fn reports_each_bad_field() {
        let text = "n_photons = \"many\"\nflip_prob = 1.5\ncolour = 3\ntag_len = [1]\n";
        let errs = parse_onto(SessionConfig::default(), text).unwrap_err().0;
        let fields: Vec<_> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, ["n_photons", "tag_len", "colour", "flip_prob"]);
    }

    #[test]
    fn validation_runs_after_parsing() {
        let errs = parse_onto(SessionConfig::default(), "sample_fraction = 1.5\nn_photons = 10").unwrap_err().0;
        let fields: Vec<_> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, ["n_photons", "sample_fraction"]);
    }

    #[test]
    fn tables_and_syntax_errors_are_rejected() {
        assert!(parse_onto(SessionConfig::default(), "[auth]\ntag_len = 8").is_err());
        assert!(parse_onto(SessionConfig::default(), "n_photons = = 3").is_err());
    }

    #[test]
    fn intercept_fraction_implies_intercept() {
        let cfg = parse_onto(SessionConfig::default(), "intercept_fraction = 0.5").unwrap();
        assert_eq!(cfg.adversary, AdversaryStrategy::intercept(0.5));
        let cfg = parse_onto(SessionConfig::default(), "intercept_fraction = 0.5\nadversary = \"none\"").unwrap();
        assert_eq!(cfg.adversary, AdversaryStrategy::intercept(0.5));
        assert!(parse_onto(SessionConfig::default(), "adversary = \"impersonate\"\nintercept_fraction = 0.5").is_err());
    }

    #[test]
    fn sweep_parsing() {
        let s: Sweep = "intercept_fraction=0,0.25, 0.5".parse().unwrap();
        assert_eq!(s.values, ["0", "0.25", "0.5"]);
        assert!("variant=baseline".parse::<Sweep>().is_err());
        assert!("tag_len=".parse::<Sweep>().is_err());
        assert!("tag_len".parse::<Sweep>().is_err());
    }
}
