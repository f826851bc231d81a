//! Names of merged checkpoints.
//!
//! Soups follow `last_{k}[_{m}]_{unweighted|loss_pf-{n}_{d}|steps_pf-{n}_{d}}`
//! where `{n}_{d}` spells the penalty factor with its decimal point replaced
//! by an underscore (`0.7` is `pf-0_7`, `1.0` is `pf-1_0`). Baseline merges
//! use `{ties|dare_ties|slerp}_last_{k}[_{m}]_base_{first|last}`.
//!
//! Only canonical spellings parse, so `format(parse(s)) == s` whenever
//! parsing succeeds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::BaseChoice;
use crate::error::{Error, Result};
use crate::selection::SelectionSpec;
use crate::weighting::MetricKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", content = "penalty", rename_all = "lowercase")]
pub enum SoupScheme {
    Unweighted,
    Loss(f64),
    Steps(f64),
}

impl SoupScheme {
    pub fn weighted(metric: MetricKind, penalty: f64) -> Self {
        match metric {
            MetricKind::Loss => SoupScheme::Loss(penalty),
            MetricKind::Steps => SoupScheme::Steps(penalty),
        }
    }

    pub fn penalty(&self) -> Option<f64> {
        match *self {
            SoupScheme::Unweighted => None,
            SoupScheme::Loss(p) | SoupScheme::Steps(p) => Some(p),
        }
    }
}

/// Name of a uniform or metrics-weighted soup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeName {
    pub k: u32,
    pub interval: Option<u32>,
    #[serde(flatten)]
    pub scheme: SoupScheme,
}

impl MergeName {
    pub fn new(selection: SelectionSpec, scheme: SoupScheme) -> Self {
        Self {
            k: selection.k,
            interval: selection.interval,
            scheme,
        }
    }

    pub fn selection(&self) -> SelectionSpec {
        SelectionSpec {
            k: self.k,
            interval: self.interval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Ties,
    DareTies,
    Slerp,
}

impl BaselineMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMethod::Ties => "ties",
            BaselineMethod::DareTies => "dare_ties",
            BaselineMethod::Slerp => "slerp",
        }
    }
}

/// Name of a Ties, Dare-Ties or SLERP merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineName {
    pub method: BaselineMethod,
    pub k: u32,
    pub interval: Option<u32>,
    pub base: BaseChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelName {
    Soup(MergeName),
    Baseline(BaselineName),
}

/// `0.7 -> "0_7"`, `1.0 -> "1_0"`, `1.05 -> "1_05"`.
pub fn format_penalty(p: f64) -> String {
    let text = p.to_string();
    match text.split_once('.') {
        Some((int, frac)) => format!("{int}_{frac}"),
        None => format!("{text}_0"),
    }
}

fn write_selection(f: &mut fmt::Formatter<'_>, k: u32, interval: Option<u32>) -> fmt::Result {
    write!(f, "last_{k}")?;
    if let Some(m) = interval {
        write!(f, "_{m}")?;
    }
    Ok(())
}

impl fmt::Display for MergeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_selection(f, self.k, self.interval)?;
        match self.scheme {
            SoupScheme::Unweighted => f.write_str("_unweighted"),
            SoupScheme::Loss(p) => write!(f, "_loss_pf-{}", format_penalty(p)),
            SoupScheme::Steps(p) => write!(f, "_steps_pf-{}", format_penalty(p)),
        }
    }
}

impl fmt::Display for BaselineName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_", self.method.as_str())?;
        write_selection(f, self.k, self.interval)?;
        write!(f, "_base_{}", self.base.as_str())
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelName::Soup(n) => n.fmt(f),
            ModelName::Baseline(n) => n.fmt(f),
        }
    }
}

pub fn format_name(name: &MergeName) -> String {
    name.to_string()
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::MalformedName {
            position: self.pos,
            reason: reason.into(),
        })
    }

    fn eat(&mut self, literal: &str) -> bool {
        if self.rest().starts_with(literal) {
            self.pos += literal.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, literal: &str) -> Result<()> {
        if self.eat(literal) {
            Ok(())
        } else {
            self.fail(format!("expected {literal:?}"))
        }
    }

    fn peek_digit(&self) -> bool {
        self.rest().starts_with(|c: char| c.is_ascii_digit())
    }

    /// A run of ASCII digits without superfluous leading zeros.
    fn digits(&mut self, allow_leading_zero: bool) -> Result<&'a str> {
        let len = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if len == 0 {
            return self.fail("expected digits");
        }
        let run = &self.rest()[..len];
        if !allow_leading_zero && len > 1 && run.starts_with('0') {
            return self.fail(format!("leading zero in {run:?}"));
        }
        self.pos += len;
        Ok(run)
    }

    fn integer(&mut self, what: &str, min: u32) -> Result<u32> {
        let start = self.pos;
        let run = self.digits(false)?;
        match run.parse::<u32>() {
            Ok(v) if v >= min => Ok(v),
            _ => Err(Error::MalformedName {
                position: start,
                reason: format!("{what} must be an integer >= {min}, got {run:?}"),
            }),
        }
    }

    fn end(&self) -> Result<()> {
        if self.rest().is_empty() {
            Ok(())
        } else {
            self.fail(format!("unexpected trailing text {:?}", self.rest()))
        }
    }

    /// `last_{k}[_{m}]_`, leaving the cursor after the final underscore.
    fn selection(&mut self) -> Result<(u32, Option<u32>)> {
        self.expect("last_")?;
        let k = self.integer("k", 1)?;
        self.expect("_")?;
        let interval = if self.peek_digit() {
            let m = self.integer("interval", 2)?;
            self.expect("_")?;
            Some(m)
        } else {
            None
        };
        Ok((k, interval))
    }

    fn penalty(&mut self) -> Result<f64> {
        let start = self.pos;
        self.expect("pf-")?;
        let int = self.digits(false)?;
        self.expect("_")?;
        let frac = self.digits(true)?;
        let value: f64 = format!("{int}.{frac}").parse().map_err(|_| Error::MalformedName {
            position: start,
            reason: "unparseable penalty".into(),
        })?;
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::MalformedName {
                position: start,
                reason: "penalty factor must be positive".into(),
            });
        }
        if format_penalty(value) != format!("{int}_{frac}") {
            return Err(Error::MalformedName {
                position: start,
                reason: format!(
                    "non-canonical penalty {int}_{frac}, write pf-{}",
                    format_penalty(value)
                ),
            });
        }
        Ok(value)
    }
}

/// Parses a soup name such as `last_4_3_loss_pf-0_8`.
pub fn parse_name(text: &str) -> Result<MergeName> {
    let mut c = Cursor::new(text);
    let (k, interval) = c.selection()?;
    let scheme = if c.eat("unweighted") {
        SoupScheme::Unweighted
    } else if c.eat("loss_") {
        SoupScheme::Loss(c.penalty()?)
    } else if c.eat("steps_") {
        SoupScheme::Steps(c.penalty()?)
    } else {
        return c.fail("expected \"unweighted\", \"loss_pf-\" or \"steps_pf-\"");
    };
    c.end()?;
    Ok(MergeName { k, interval, scheme })
}

/// Parses a baseline name such as `dare_ties_last_10_base_first`.
pub fn parse_baseline_name(text: &str) -> Result<BaselineName> {
    let mut c = Cursor::new(text);
    let method = if c.eat("dare_ties_") {
        BaselineMethod::DareTies
    } else if c.eat("ties_") {
        BaselineMethod::Ties
    } else if c.eat("slerp_") {
        BaselineMethod::Slerp
    } else {
        return c.fail("expected \"ties_\", \"dare_ties_\" or \"slerp_\"");
    };
    let (k, interval) = c.selection()?;
    c.expect("base_")?;
    let base = if c.eat("first") {
        BaseChoice::First
    } else if c.eat("last") {
        BaseChoice::Last
    } else {
        return c.fail("expected \"first\" or \"last\"");
    };
    c.end()?;
    Ok(BaselineName {
        method,
        k,
        interval,
        base,
    })
}

/// Parses either grammar, dispatching on the leading token.
pub fn parse_model_name(text: &str) -> Result<ModelName> {
    if text.starts_with("last_") {
        parse_name(text).map(ModelName::Soup)
    } else {
        parse_baseline_name(text).map(ModelName::Baseline)
    }
}

impl FromStr for MergeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_name(s)
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_model_name(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formats_table_names() {
        let n = MergeName { k: 10, interval: None, scheme: SoupScheme::Loss(0.7) };
        assert_eq!(format_name(&n), "last_10_loss_pf-0_7");
        let n = MergeName { k: 4, interval: Some(3), scheme: SoupScheme::Loss(0.8) };
        assert_eq!(format_name(&n), "last_4_3_loss_pf-0_8");
        let n = MergeName { k: 5, interval: Some(3), scheme: SoupScheme::Unweighted };
        assert_eq!(format_name(&n), "last_5_3_unweighted");
        let n = MergeName { k: 10, interval: None, scheme: SoupScheme::Steps(1.0) };
        assert_eq!(format_name(&n), "last_10_steps_pf-1_0");
    }

    #[test]
    fn parses_table_names() {
        assert_eq!(
            parse_name("last_10_steps_pf-1_05").unwrap(),
            MergeName { k: 10, interval: None, scheme: SoupScheme::Steps(1.05) }
        );
        assert_eq!(
            parse_name("last_10_unweighted").unwrap(),
            MergeName { k: 10, interval: None, scheme: SoupScheme::Unweighted }
        );
        assert_eq!(
            parse_name("last_10_loss_pf-0_75").unwrap().scheme,
            SoupScheme::Loss(0.75)
        );
        assert_eq!(
            parse_baseline_name("dare_ties_last_5_3_base_first").unwrap(),
            BaselineName {
                method: BaselineMethod::DareTies,
                k: 5,
                interval: Some(3),
                base: BaseChoice::First
            }
        );
    }

    fn position(text: &str) -> usize {
        match parse_model_name(text) {
            Err(Error::MalformedName { position, .. }) => position,
            other => panic!("{text:?} parsed as {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed() {
        assert_eq!(position("last_x_loss"), 5);
        assert_eq!(position("last_10_loss"), 8);
        assert_eq!(position("last_10_loss_pf-0_50"), 13);
        assert_eq!(position("last_0_unweighted"), 5);
        assert_eq!(position("last_4_1_unweighted"), 7);
        assert_eq!(position("last_04_unweighted"), 5);
        assert_eq!(position("last_10_loss_pf-0_0"), 13);
        assert_eq!(position("last_10_unweighted_"), 18);
        assert_eq!(position("ties_last_3_base_middle"), 17);
        assert_eq!(position("soup_last_3"), 0);
        assert_eq!(position(""), 0);
        assert_eq!(position("last_99999999999_unweighted"), 5);
    }

    fn name_strategy() -> impl Strategy<Value = MergeName> {
        let scheme = prop_oneof![
            Just(SoupScheme::Unweighted),
            (1u32..5000).prop_map(|c| SoupScheme::Loss(c as f64 / 1000.0)),
            (1u32..5000).prop_map(|c| SoupScheme::Steps(c as f64 / 100.0)),
            (1e-6f64..1e6).prop_map(SoupScheme::Loss),
        ];
        (1u32..10_000, prop::option::of(2u32..100), scheme)
            .prop_map(|(k, interval, scheme)| MergeName { k, interval, scheme })
    }

    proptest! {
        #[test]
        fn soup_names_round_trip(name in name_strategy()) {
            let text = format_name(&name);
            prop_assert_eq!(parse_name(&text).unwrap(), name);
            prop_assert_eq!(parse_model_name(&text).unwrap(), ModelName::Soup(name));
        }

        #[test]
        fn parsed_text_is_canonical(text in "last_[0-9]{1,3}(_[0-9]{1,2})?_(unweighted|(loss|steps)_pf-[0-9]{1,2}_[0-9]{1,3})") {
            if let Ok(name) = parse_name(&text) {
                prop_assert_eq!(format_name(&name), text);
            }
        }
    }
}
