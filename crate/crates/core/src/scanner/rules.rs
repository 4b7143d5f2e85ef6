//! Rule file parsing and per-class validators.

use regex::Regex;

use super::{ScanError, SecretClass};

/// Rules compiled into the binary.
pub const DEFAULT_RULES: &str = include_str!("../../rules/default.rules");

/// Rule file format version understood by this build.
pub const RULES_VERSION: u32 = 1;

/// Post-match check applied to a candidate span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validator {
    Luhn,
    Ipv6,
}

impl Validator {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "luhn" => Some(Self::Luhn),
            "ipv6" => Some(Self::Ipv6),
            _ => None,
        }
    }

    pub fn accepts(self, candidate: &str) -> bool {
        match self {
            Self::Luhn => luhn_valid(candidate),
            Self::Ipv6 => candidate.parse::<std::net::Ipv6Addr>().is_ok(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub id: String,
    pub class: SecretClass,
    pub regex: Regex,
    pub validator: Option<Validator>,
    pub(crate) narrow: bool,
}

/// Parses a rule file. Rule ids are `<class_id>/<n>`, numbered per class
/// in file order starting at 1.
pub fn parse_rules(source: &str) -> Result<Vec<Rule>, ScanError> {
    let mut rules = Vec::new();
    let mut per_class = std::collections::HashMap::<SecretClass, usize>::new();
    let mut seen_version = false;

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| ScanError::RuleFile {
            line: line_no,
            message,
        };
        if let Some(rest) = line.strip_prefix("!version") {
            let v: u32 = rest
                .trim()
                .parse()
                .map_err(|_| err(format!("bad version `{}`", rest.trim())))?;
            if v != RULES_VERSION {
                return Err(err(format!(
                    "unsupported rules version {v}, expected {RULES_VERSION}"
                )));
            }
            seen_version = true;
            continue;
        }
        if !seen_version {
            return Err(err("missing `!version` header before first rule".into()));
        }

        let mut fields = line.split('\t');
        let class_id = fields.next().unwrap_or_default().trim();
        let pattern = fields
            .next()
            .ok_or_else(|| err("expected class_id<TAB>pattern".into()))?;
        let validator = match fields.next().map(str::trim) {
            None | Some("") => None,
            Some(name) => Some(
                Validator::parse(name).ok_or_else(|| err(format!("unknown validator `{name}`")))?,
            ),
        };
        if fields.next().is_some() {
            return Err(err("too many fields".into()));
        }
        let class = SecretClass::from_id(class_id)
            .ok_or_else(|| err(format!("unknown class `{class_id}`")))?;
        let regex = Regex::new(pattern).map_err(|e| err(e.to_string()))?;
        let narrow = regex.capture_names().any(|n| n == Some("s"));
        let n = per_class.entry(class).or_default();
        *n += 1;
        rules.push(Rule {
            id: format!("{}/{}", class.id(), n),
            class,
            regex,
            validator,
            narrow,
        });
    }
    if !seen_version {
        return Err(ScanError::RuleFile {
            line: 0,
            message: "missing `!version` header".into(),
        });
    }
    Ok(rules)
}

/// Luhn checksum over the digits of `candidate`; separators are ignored.
/// Requires 13 to 19 digits.
pub fn luhn_valid(candidate: &str) -> bool {
    let digits: Vec<u32> = candidate.chars().filter_map(|c| c.to_digit(10)).collect();
    if !(13..=19).contains(&digits.len()) {
        return false;
    }
    let sum: u32 = digits
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &d)| {
            if i % 2 == 1 {
                let x = d * 2;
                if x > 9 {
                    x - 9
                } else {
                    x
                }
            } else {
                d
            }
        })
        .sum();
    sum % 10 == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rules_parse() {
        let rules = parse_rules(DEFAULT_RULES).unwrap();
        for class in SecretClass::ALL {
            assert!(
                rules.iter().any(|r| r.class == class),
                "no rule for {}",
                class.id()
            );
        }
        assert!(rules.iter().any(|r| r.id == "api_key/3"));
    }

    #[test]
    fn luhn() {
        assert!(luhn_valid("4111 1111 1111 1111"));
        assert!(luhn_valid("4539-1488-0343-6467"));
        assert!(!luhn_valid("4111 1111 1111 1112"));
        assert!(!luhn_valid("0000"));
    }

    #[test]
    fn rule_file_errors() {
        let e = parse_rules("email\tfoo").unwrap_err();
        assert!(matches!(e, ScanError::RuleFile { line: 1, .. }));
        let e = parse_rules("!version 1\nbogus\tx").unwrap_err();
        assert!(e.to_string().contains("unknown class"));
        let e = parse_rules("!version 1\nemail\t(").unwrap_err();
        assert!(matches!(e, ScanError::RuleFile { line: 2, .. }));
        let e = parse_rules("!version 2\n").unwrap_err();
        assert!(e.to_string().contains("unsupported"));
        let e = parse_rules("!version 1\nemail\tx\tsha1").unwrap_err();
        assert!(e.to_string().contains("unknown validator"));
    }
}
