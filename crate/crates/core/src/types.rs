use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Screening class assigned by a rule, a model or a reviewer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Include,
    Exclude,
}

impl Label {
    /// +1 for INCLUDE, −1 for EXCLUDE.
    pub fn sign(self) -> i8 {
        match self {
            Label::Include => 1,
            Label::Exclude => -1,
        }
    }

    /// Index into 2×2 tables: INCLUDE = 0, EXCLUDE = 1.
    pub fn index(self) -> usize {
        match self {
            Label::Include => 0,
            Label::Exclude => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Include => "INCLUDE",
            Label::Exclude => "EXCLUDE",
        }
    }

    /// Threshold a probability of INCLUDE; ties go to INCLUDE.
    pub fn from_probability(p: f64) -> Label {
        if p >= 0.5 {
            Label::Include
        } else {
            Label::Exclude
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?}, expected INCLUDE or EXCLUDE")]
pub struct LabelParseError(pub String);

impl FromStr for Label {
    type Err = LabelParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "INCLUDE" | "I" | "+1" | "1" => Ok(Label::Include),
            "EXCLUDE" | "E" | "-1" => Ok(Label::Exclude),
            _ => Err(LabelParseError(s.to_owned())),
        }
    }
}

/// PubMed identifier. Ordered numerically (shorter digit strings first).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pmid(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid PMID {0:?}: expected a non-empty string of digits")]
pub struct PmidParseError(pub String);

impl Pmid {
    pub fn new(s: impl AsRef<str>) -> Result<Self, PmidParseError> {
        let t = s.as_ref().trim();
        if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
            return Err(PmidParseError(s.as_ref().to_owned()));
        }
        let stripped = t.trim_start_matches('0');
        let canonical = if stripped.is_empty() { "0" } else { stripped };
        Ok(Pmid(canonical.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Ord for Pmid {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Pmid {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Pmid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Pmid {
    type Err = PmidParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pmid::new(s)
    }
}

/// Round half away from zero to `decimals` places.
pub fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).round() / scale
}

/// Render a fraction as a percentage with two decimals, e.g. `84.78%`.
pub fn percent(fraction: f64) -> String {
    format!("{:.2}%", round_to(fraction * 100.0, 2))
}

/// Scientific notation as printed in the report tables: `3.478E-03`.
pub fn sci(x: f64) -> String {
    if x == 0.0 {
        return "0.000E+00".to_owned();
    }
    let s = format!("{x:.3E}");
    let (mantissa, exp) = s.split_once('E').expect("E in scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}E{sign}{:02}", exp.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmid_orders_numerically() {
        let mut v: Vec<Pmid> = ["100", "99", "1000", "007"]
            .iter()
            .map(|s| Pmid::new(s).unwrap())
            .collect();
        v.sort();
        let s: Vec<&str> = v.iter().map(Pmid::as_str).collect();
        assert_eq!(s, ["7", "99", "100", "1000"]);
        assert!(Pmid::new("abc").is_err());
        assert!(Pmid::new("").is_err());
    }

    #[test]
    fn label_parsing_and_threshold() {
        assert_eq!("include".parse::<Label>().unwrap(), Label::Include);
        assert_eq!("E".parse::<Label>().unwrap(), Label::Exclude);
        assert!("maybe".parse::<Label>().is_err());
        assert_eq!(Label::from_probability(0.5), Label::Include);
        assert_eq!(Label::from_probability(0.4999), Label::Exclude);
    }

    #[test]
    fn percent_and_sci_rendering() {
        assert_eq!(percent(39.0 / 46.0), "84.78%");
        assert_eq!(percent(0.0), "0.00%");
        assert_eq!(sci(3.478e-3), "3.478E-03");
        assert_eq!(sci(2.0e-5), "2.000E-05");
        assert_eq!(sci(1.0), "1.000E+00");
    }
}
