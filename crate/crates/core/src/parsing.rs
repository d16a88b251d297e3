//! Extraction of targets and stance labels from raw model output.
//!
//! All parsers are total: any input yields a value or a [`ParseError`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::StanceLabel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unparseable stance: {reason} in {raw:?}")]
    Stance { raw: String, reason: &'static str },
    #[error("unparseable target: nothing left of {raw:?}")]
    Target { raw: String },
    #[error("unparseable joint output: {reason} in {raw:?}")]
    Joint { raw: String, reason: String },
}

/// A cleaned target and whether it was cut to the word cap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTarget {
    pub text: String,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedJoint {
    pub target: String,
    pub stance: StanceLabel,
    pub truncated: bool,
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

fn label_of_word(word: &str) -> Option<StanceLabel> {
    if word.eq_ignore_ascii_case("favor") {
        Some(StanceLabel::Favor)
    } else if word.eq_ignore_ascii_case("against") {
        Some(StanceLabel::Against)
    } else if word.eq_ignore_ascii_case("none") {
        Some(StanceLabel::None)
    } else {
        None
    }
}

/// Reads a stance label. A bare label word (any case, optional surrounding
/// punctuation) is accepted directly; otherwise the text must contain label
/// words of exactly one kind.
pub fn parse_stance(raw: &str) -> Result<StanceLabel, ParseError> {
    let bare = raw.trim().trim_matches(|c: char| !c.is_alphanumeric());
    if let Some(label) = label_of_word(bare) {
        return Ok(label);
    }
    let mut found: Option<StanceLabel> = None;
    for word in raw.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        if let Some(label) = label_of_word(word) {
            match found {
                Some(prev) if prev != label => {
                    return Err(ParseError::Stance { raw: raw.to_string(), reason: "several labels" })
                }
                _ => found = Some(label),
            }
        }
    }
    found.ok_or_else(|| ParseError::Stance { raw: raw.to_string(), reason: "no label" })
}

/// Removes code fences (with an optional language tag) and markdown bold.
fn strip_fences(raw: &str) -> String {
    let mut s = raw.trim();
    if let Some(rest) = s.strip_prefix("```") {
        s = rest;
        // a language tag runs up to the first newline
        if let Some(nl) = s.find('\n') {
            let tag = &s[..nl];
            if !tag.is_empty() && tag.chars().all(|c| c.is_ascii_alphanumeric()) {
                s = &s[nl + 1..];
            }
        }
    }
    let s = s.trim_end();
    let s = s.strip_suffix("```").unwrap_or(s);
    s.replace("**", "").trim().to_string()
}

/// Byte offset just past `label` followed by optional whitespace and `:`,
/// when `text` starts with it (ASCII case-insensitive).
fn label_prefix_len(text: &str, label: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    if bytes.len() < label.len() || !bytes[..label.len()].eq_ignore_ascii_case(label.as_bytes()) {
        return None;
    }
    let rest = &text[label.len()..];
    let ws = rest.len() - rest.trim_start().len();
    rest[ws..].starts_with(':').then_some(label.len() + ws + 1)
}

/// Start of the last `stance:` label in `text`.
fn last_stance_label(text: &str) -> Option<(usize, usize)> {
    let mut best = None;
    for i in 0..text.len() {
        if text.is_char_boundary(i) {
            if let Some(len) = label_prefix_len(&text[i..], "stance") {
                best = Some((i, i + len));
            }
        }
    }
    best
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Cleans a generated target: drops fences, a `Target:` prefix, surrounding
/// quotes and a trailing period, keeps the first non-empty line, collapses
/// whitespace, and cuts to `max_words` words.
pub fn parse_target(raw: &str, max_words: usize) -> Result<ParsedTarget, ParseError> {
    let unfenced = strip_fences(raw);
    let line = unfenced.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let mut s = line;
    loop {
        let before = s;
        if let Some(n) = label_prefix_len(s, "target") {
            s = s[n..].trim();
        }
        s = s.trim_matches(|c: char| c.is_whitespace() || QUOTES.contains(&c));
        s = s.strip_suffix('.').unwrap_or(s).trim_end();
        if s == before {
            break;
        }
    }
    let text = collapse_whitespace(s);
    if text.is_empty() {
        return Err(ParseError::Target { raw: raw.to_string() });
    }
    let words: Vec<&str> = text.split(' ').collect();
    if words.len() > max_words.max(1) {
        Ok(ParsedTarget { text: words[..max_words.max(1)].join(" "), truncated: true })
    } else {
        Ok(ParsedTarget { text, truncated: false })
    }
}

/// Splits joint output into its target and stance fields. The split is at
/// the last `Stance:` so targets may contain commas.
fn split_joint(raw: &str) -> Result<(String, String), ParseError> {
    let err = |reason: &str| ParseError::Joint { raw: raw.to_string(), reason: reason.to_string() };
    let text = strip_fences(raw);
    let text = text.strip_suffix('.').unwrap_or(&text).trim();
    let target_start = label_prefix_len(text, "target").ok_or_else(|| err("no `Target:` label"))?;
    let (stance_at, stance_end) = last_stance_label(text).ok_or_else(|| err("no `Stance:` label"))?;
    if stance_at < target_start {
        return Err(err("`Stance:` precedes `Target:`"));
    }
    let target = text[target_start..stance_at].trim_end();
    let target = target.strip_suffix(',').unwrap_or(target);
    Ok((target.to_string(), text[stance_end..].trim().to_string()))
}

/// Parses `Target: <target>, Stance: <stance>`, tolerating case, extra
/// whitespace, code fences and a final period.
pub fn parse_joint(raw: &str, max_words: usize) -> Result<ParsedJoint, ParseError> {
    let (target_field, stance_field) = split_joint(raw)?;
    let target = parse_target(&target_field, max_words).map_err(|_| ParseError::Joint {
        raw: raw.to_string(),
        reason: "empty target field".into(),
    })?;
    let stance = parse_stance(&stance_field).map_err(|e| ParseError::Joint {
        raw: raw.to_string(),
        reason: e.to_string(),
    })?;
    Ok(ParsedJoint { target: target.text, stance, truncated: target.truncated })
}

/// Like [`parse_joint`], but on failure salvages what it can: the target
/// field (or the whole text) as target, and the stance as read from the
/// stance field (or the whole text), else NONE. The flag reports whether
/// the fallback was used. Fails only when no target can be recovered.
pub fn parse_joint_with_fallback(raw: &str, max_words: usize) -> Result<(ParsedJoint, bool), ParseError> {
    match parse_joint(raw, max_words) {
        Ok(p) => Ok((p, false)),
        Err(original) => {
            let (target_field, stance_field) = match split_joint(raw) {
                Ok(fields) => fields,
                Err(_) => (raw.to_string(), raw.to_string()),
            };
            let target = parse_target(&target_field, max_words).map_err(|_| original)?;
            let stance = parse_stance(&stance_field).unwrap_or(StanceLabel::None);
            Ok((ParsedJoint { target: target.text, stance, truncated: target.truncated }, true))
        }
    }
}

/// The canonical joint output line.
pub fn format_joint(target: &str, stance: StanceLabel) -> String {
    format!("Target: {target}, Stance: {stance}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stance_examples() {
        assert_eq!(parse_stance("FAVOR").unwrap(), StanceLabel::Favor);
        assert_eq!(parse_stance(" none. ").unwrap(), StanceLabel::None);
        assert_eq!(parse_stance("The stance is against.").unwrap(), StanceLabel::Against);
        assert_eq!(parse_stance("AGAINST, clearly AGAINST").unwrap(), StanceLabel::Against);
        assert!(parse_stance("FAVOR or AGAINST").is_err());
        assert!(parse_stance("favorable").is_err());
        assert!(parse_stance("").is_err());
    }

    #[test]
    fn target_examples() {
        let t = |raw| parse_target(raw, 4).unwrap();
        assert_eq!(t("Religious diversity").text, "Religious diversity");
        assert_eq!(t("Target: gun control").text, "gun control");
        assert_eq!(t("\"Climate change.\"").text, "Climate change");
        assert_eq!(t("  target :  'vaccine   mandates' ").text, "vaccine mandates");
        assert_eq!(t("abortion\n\nThe tweet argues...").text, "abortion");
        assert!(parse_target("", 4).is_err());
        assert!(parse_target(" \"\" ", 4).is_err());
        assert!(parse_target("Target:", 4).is_err());
    }

    #[test]
    fn long_target_truncated_and_flagged() {
        let p = parse_target("the future of renewable energy policy", 4).unwrap();
        assert_eq!(p.text, "the future of renewable");
        assert!(p.truncated);
        assert!(!parse_target("one two three four", 4).unwrap().truncated);
    }

    #[test]
    fn joint_examples() {
        let p = parse_joint("Target: gun control, Stance: AGAINST", 4).unwrap();
        assert_eq!((p.target.as_str(), p.stance), ("gun control", StanceLabel::Against));
        let p = parse_joint("```Target: vaccines, Stance: favor```", 4).unwrap();
        assert_eq!((p.target.as_str(), p.stance), ("vaccines", StanceLabel::Favor));
        let p = parse_joint("Target: taxes, Stance: NONE", 4).unwrap();
        assert_eq!((p.target.as_str(), p.stance), ("taxes", StanceLabel::None));
        assert!(matches!(parse_joint("I think it's favorable", 4), Err(ParseError::Joint { .. })));
    }

    #[test]
    fn joint_tolerances() {
        let p = parse_joint("```text\n  TARGET :  Paris,   France ,\nstance:   Against.\n```", 4).unwrap();
        assert_eq!((p.target.as_str(), p.stance), ("Paris, France", StanceLabel::Against));
        let p = parse_joint("**Target:** the stance debate, **Stance:** NONE", 4).unwrap();
        assert_eq!(p.target, "the stance debate");
        let p = parse_joint("Target: stance: a meta topic, Stance: FAVOR", 4).unwrap();
        assert_eq!(p.target, "stance: a meta topic");
    }

    #[test]
    fn joint_errors_keep_raw_text() {
        match parse_joint("Target: x, Stance: maybe", 4) {
            Err(ParseError::Joint { raw, .. }) => assert_eq!(raw, "Target: x, Stance: maybe"),
            other => panic!("{other:?}"),
        }
        assert!(parse_joint("Target: , Stance: NONE", 4).is_err());
        assert!(parse_joint("Stance: NONE, Target: x", 4).is_err());
    }

    #[test]
    fn fallback_salvages() {
        let (p, fell) = parse_joint_with_fallback("Target: x, Stance: maybe", 4).unwrap();
        assert!(fell);
        assert_eq!((p.target.as_str(), p.stance), ("x", StanceLabel::None));
        let (p, fell) = parse_joint_with_fallback("school prayer", 4).unwrap();
        assert!(fell);
        assert_eq!(p.target, "school prayer");
        let (_, fell) = parse_joint_with_fallback("Target: x, Stance: FAVOR", 4).unwrap();
        assert!(!fell);
        assert!(parse_joint_with_fallback("```\n```", 4).is_err());
    }

    proptest! {
        #[test]
        fn parsers_are_total(s in "\\PC*") {
            let _ = parse_stance(&s);
            let _ = parse_target(&s, 4);
            let _ = parse_joint(&s, 4);
            let _ = parse_joint_with_fallback(&s, 4);
        }

        #[test]
        fn joint_round_trip(words in prop::collection::vec("[A-Za-z][A-Za-z0-9-]{0,9}", 1..=4), i in 0usize..3) {
            let target = words.join(" ");
            let stance = StanceLabel::ALL[i];
            let p = parse_joint(&format_joint(&target, stance), 4).unwrap();
            prop_assert_eq!(p.target, target);
            prop_assert_eq!(p.stance, stance);
        }
    }
}
