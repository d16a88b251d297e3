//! Zero-shot prompt templates for target generation (TG), stance detection
//! (SD) and the joint TG&SD prompt.
//!
//! The task definition goes in the system message; the tweet (and, for SD,
//! the target) go in the user message. The only parameter in the system
//! templates is `{max_words}`, the per-model target length cap.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::ModelEndpointConfig;

const TG_SYSTEM: &str = include_str!("../assets/prompts/tg.system.txt");
const SD_SYSTEM: &str = include_str!("../assets/prompts/sd.system.txt");
const JOINT_SYSTEM: &str = include_str!("../assets/prompts/joint.system.txt");
const TG_USER: &str = include_str!("../assets/prompts/tg.user.txt");
const SD_USER: &str = include_str!("../assets/prompts/sd.user.txt");
const JOINT_USER: &str = include_str!("../assets/prompts/joint.user.txt");

pub const PROMPT_ASSET_VERSION: &str = "prompts-v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown prompt kind `{0}`")]
    UnknownKind(String),
    #[error("{kind} prompt: {message}")]
    Argument { kind: PromptKind, message: String },
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
    #[error("reading template {name}: {message}")]
    Io { name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    TargetGeneration,
    StanceDetection,
    JointTGSD,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] =
        [PromptKind::TargetGeneration, PromptKind::StanceDetection, PromptKind::JointTGSD];

    /// Short tag used in cache entries and file names.
    pub fn tag(self) -> &'static str {
        match self {
            PromptKind::TargetGeneration => "TG",
            PromptKind::StanceDetection => "SD",
            PromptKind::JointTGSD => "TG&SD",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            PromptKind::TargetGeneration => "tg",
            PromptKind::StanceDetection => "sd",
            PromptKind::JointTGSD => "joint",
        }
    }

    fn takes_target(self) -> bool {
        self == PromptKind::StanceDetection
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PromptKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tg" | "target-generation" | "targetgeneration" => Ok(PromptKind::TargetGeneration),
            "sd" | "stance-detection" | "stancedetection" => Ok(PromptKind::StanceDetection),
            "tg&sd" | "joint" | "jointtgsd" => Ok(PromptKind::JointTGSD),
            _ => Err(PromptError::UnknownKind(s.to_string())),
        }
    }
}

/// A system prompt with the word cap filled in, plus the user template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub system_prompt: String,
    pub user_template: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TemplatePair {
    system: String,
    user: String,
}

/// The full template set. Defaults to the built-in assets; a directory
/// holding `{tg,sd,joint}.{system,user}.txt` may replace any of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    tg: TemplatePair,
    sd: TemplatePair,
    joint: TemplatePair,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let pair = |system: &str, user: &str| TemplatePair {
            system: system.to_string(),
            user: user.to_string(),
        };
        PromptTemplates {
            tg: pair(TG_SYSTEM, TG_USER),
            sd: pair(SD_SYSTEM, SD_USER),
            joint: pair(JOINT_SYSTEM, JOINT_USER),
        }
    }
}

impl PromptTemplates {
    /// Built-in templates, with any files present in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut templates = PromptTemplates::default();
        for kind in PromptKind::ALL {
            for (suffix, is_system) in [("system", true), ("user", false)] {
                let name = format!("{}.{suffix}.txt", kind.file_stem());
                let path = dir.join(&name);
                if !path.exists() {
                    continue;
                }
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| PromptError::Io { name: name.clone(), message: e.to_string() })?;
                let pair = templates.pair_mut(kind);
                if is_system {
                    pair.system = text;
                } else {
                    pair.user = text;
                }
            }
        }
        templates.validate()?;
        Ok(templates)
    }

    fn pair(&self, kind: PromptKind) -> &TemplatePair {
        match kind {
            PromptKind::TargetGeneration => &self.tg,
            PromptKind::StanceDetection => &self.sd,
            PromptKind::JointTGSD => &self.joint,
        }
    }

    fn pair_mut(&mut self, kind: PromptKind) -> &mut TemplatePair {
        match kind {
            PromptKind::TargetGeneration => &mut self.tg,
            PromptKind::StanceDetection => &mut self.sd,
            PromptKind::JointTGSD => &mut self.joint,
        }
    }

    fn validate(&self) -> Result<(), PromptError> {
        for kind in PromptKind::ALL {
            let pair = self.pair(kind);
            let stem = kind.file_stem();
            let system_ok: &[&str] = &["max_words"];
            let user_ok: &[&str] = if kind.takes_target() { &["tweet", "target"] } else { &["tweet"] };
            check_placeholders(&format!("{stem}.system.txt"), &pair.system, system_ok, &[])?;
            check_placeholders(&format!("{stem}.user.txt"), &pair.user, user_ok, user_ok)?;
        }
        Ok(())
    }

    /// SHA-256 per template file, in a fixed order.
    pub fn asset_hashes(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for kind in PromptKind::ALL {
            let pair = self.pair(kind);
            for (suffix, text) in [("system", &pair.system), ("user", &pair.user)] {
                let name = format!("{}.{suffix}.txt", kind.file_stem());
                out.push((name, hex::encode(Sha256::digest(text.as_bytes()))));
            }
        }
        out
    }

    pub fn build(&self, kind: PromptKind, max_words: u32) -> Result<PromptBundle, PromptError> {
        if max_words == 0 {
            return Err(PromptError::Argument { kind, message: "max_words must be positive".into() });
        }
        let pair = self.pair(kind);
        let words = max_words.to_string();
        let system_prompt = substitute(&pair.system, |name| (name == "max_words").then_some(words.as_str()));
        Ok(PromptBundle { kind, system_prompt, user_template: pair.user.clone() })
    }
}

/// The built-in template for `kind` with the word cap taken from `config`.
pub fn build_prompt(kind: PromptKind, config: &ModelEndpointConfig) -> Result<PromptBundle, PromptError> {
    PromptTemplates::default().build(kind, config.target_word_cap())
}

/// Fills the user template. `target` must be given for SD and only for SD.
/// Inserted text is never re-scanned for placeholders.
pub fn render(
    bundle: &PromptBundle,
    tweet: &str,
    target: Option<&str>,
) -> Result<(String, String), PromptError> {
    let kind = bundle.kind;
    match (kind.takes_target(), target) {
        (true, None) => {
            return Err(PromptError::Argument { kind, message: "a target is required".into() })
        }
        (false, Some(_)) => {
            return Err(PromptError::Argument { kind, message: "takes no target".into() })
        }
        _ => {}
    }
    let user = substitute(&bundle.user_template, |name| match name {
        "tweet" => Some(tweet),
        "target" => target,
        _ => None,
    });
    Ok((bundle.system_prompt.clone(), user))
}

/// Positions of `{identifier}` placeholders as (start, end, name).
fn placeholders(template: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let rest = &template[i + 1..];
            let len = rest
                .bytes()
                .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
                .count();
            if len > 0 && rest.as_bytes().get(len) == Some(&b'}') {
                out.push((i, i + len + 2, &rest[..len]));
                i += len + 2;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn substitute<'a>(template: &str, value: impl Fn(&str) -> Option<&'a str>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for (start, end, name) in placeholders(template) {
        if let Some(v) = value(name) {
            out.push_str(&template[last..start]);
            out.push_str(v);
            last = end;
        }
    }
    out.push_str(&template[last..]);
    out
}

fn check_placeholders(
    name: &str,
    template: &str,
    allowed: &[&str],
    required: &[&str],
) -> Result<(), PromptError> {
    let found = placeholders(template);
    if let Some((_, _, p)) = found.iter().find(|(_, _, p)| !allowed.contains(p)) {
        return Err(PromptError::Template { name: name.into(), message: format!("unknown placeholder {{{p}}}") });
    }
    for r in required {
        if !found.iter().any(|(_, _, p)| p == r) {
            return Err(PromptError::Template { name: name.into(), message: format!("missing placeholder {{{r}}}") });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TG_PRINTED: &str = "You will be provided with a tweet, and your task is to generate a target for this tweet. A target should be the topic on which the tweet is talking. The target can be a single word or a phrase, but its maximum length MUST be 4 words. The output should only be the target, no other words. Do not provide any explanation but you MUST give an output, do not leave any output blank.";
    const SD_PRINTED: &str = "Stance classification is the task of determining the expressed or implied opinion, or stance, of a statement toward a certain, specified target. Analyze the following tweet and determine its stance towards the provided target. If the stance is in favor of the target, write FAVOR, if it is against the target write AGAINST and if it is ambiguous, write NONE. Do not provide any explanation but you MUST give an output, do not leave any output blank. Only return the stance as a single word, and no other text.";
    const JOINT_PRINTED: &str = "Stance classification is the task of determining the expressed or implied opinion, or stance, of a statement toward a certain, specified target. Analyze the following tweet, generate the target for this tweet, and determine its stance towards the generated target. A target should be the topic on which the tweet is talking. The target can be a single word or a phrase, but its maximum length MUST be 4 words. If the stance is in favor of the target, write FAVOR, if it is against the target write AGAINST and if it is ambiguous, write NONE. If the stance is in favor of the generated target, write FAVOR, if it is against the target write AGAINST and if it is ambiguous, write NONE. The answer only has to be one of these three words: FAVOR, AGAINST, or NONE. Do not provide any explanation but you MUST give an output, do not leave any output blank. The output format should be: ```Target: <target>, Stance: <stance>```.";

    fn cfg(model: &str) -> ModelEndpointConfig {
        ModelEndpointConfig::new(model, "http://localhost:1/v1")
    }

    #[test]
    fn golden_templates_at_four_words() {
        let t = PromptTemplates::default();
        assert_eq!(t.build(PromptKind::TargetGeneration, 4).unwrap().system_prompt, TG_PRINTED);
        assert_eq!(t.build(PromptKind::StanceDetection, 4).unwrap().system_prompt, SD_PRINTED);
        assert_eq!(t.build(PromptKind::JointTGSD, 4).unwrap().system_prompt, JOINT_PRINTED);
    }

    #[test]
    fn only_the_cap_changes() {
        let t = PromptTemplates::default();
        for kind in [PromptKind::TargetGeneration, PromptKind::JointTGSD] {
            let four = t.build(kind, 4).unwrap().system_prompt;
            let seven = t.build(kind, 7).unwrap().system_prompt;
            assert_eq!(seven.replace("MUST be 7 words", "MUST be 4 words"), four);
        }
    }

    #[test]
    fn gpt35_gets_five_words() {
        let b = build_prompt(PromptKind::TargetGeneration, &cfg("gpt-3.5-turbo")).unwrap();
        assert!(b.system_prompt.contains("maximum length MUST be 5 words"));
        let b = build_prompt(PromptKind::TargetGeneration, &cfg("gpt-4")).unwrap();
        assert!(b.system_prompt.contains("maximum length MUST be 4 words"));
    }

    #[test]
    fn sd_lists_labels_and_joint_fixes_format() {
        let sd = build_prompt(PromptKind::StanceDetection, &cfg("m")).unwrap();
        for w in ["FAVOR", "AGAINST", "NONE"] {
            assert!(sd.system_prompt.contains(w));
        }
        let joint = build_prompt(PromptKind::JointTGSD, &cfg("m")).unwrap();
        assert!(joint.system_prompt.contains("Target: <target>, Stance: <stance>"));
    }

    #[test]
    fn render_places_inputs_in_user_message() {
        let tg = build_prompt(PromptKind::TargetGeneration, &cfg("m")).unwrap();
        let (system, user) = render(&tg, "hello", None).unwrap();
        assert!(user.contains("hello"));
        assert!(!system.contains("hello"));

        let sd = build_prompt(PromptKind::StanceDetection, &cfg("m")).unwrap();
        let (_, user) = render(&sd, "we need stricter laws", Some("gun control")).unwrap();
        assert!(user.contains("we need stricter laws") && user.contains("gun control"));
        assert!(matches!(render(&sd, "x", None), Err(PromptError::Argument { .. })));
        assert!(matches!(render(&tg, "x", Some("t")), Err(PromptError::Argument { .. })));
    }

    #[test]
    fn inserted_braces_are_not_expanded() {
        let sd = build_prompt(PromptKind::StanceDetection, &cfg("m")).unwrap();
        let (_, user) = render(&sd, "literal {target} here", Some("T")).unwrap();
        assert_eq!(user, "Tweet: literal {target} here\nTarget: T");
    }

    #[test]
    fn no_placeholders_survive_rendering() {
        let t = PromptTemplates::default();
        for kind in PromptKind::ALL {
            let b = t.build(kind, 4).unwrap();
            let target = kind.takes_target().then_some("t");
            let (s, u) = render(&b, "x", target).unwrap();
            assert!(placeholders(&s).is_empty() && placeholders(&u).is_empty());
        }
    }

    #[test]
    fn tweets_render_injectively() {
        let b = build_prompt(PromptKind::JointTGSD, &cfg("m")).unwrap();
        let tweets = ["a", "a ", " a", "b", "", "{tweet}", "Tweet: a"];
        let rendered: std::collections::HashSet<_> =
            tweets.iter().map(|t| render(&b, t, None).unwrap().1).collect();
        assert_eq!(rendered.len(), tweets.len());
    }

    #[test]
    fn overrides_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tg.user.txt"), "Text: {tweet}\n{extra}").unwrap();
        assert!(matches!(
            PromptTemplates::with_overrides(dir.path()),
            Err(PromptError::Template { .. })
        ));
        std::fs::write(dir.path().join("tg.user.txt"), "Text: {tweet}").unwrap();
        let t = PromptTemplates::with_overrides(dir.path()).unwrap();
        let b = t.build(PromptKind::TargetGeneration, 4).unwrap();
        assert_eq!(render(&b, "x", None).unwrap().1, "Text: x");
        assert_ne!(t.asset_hashes(), PromptTemplates::default().asset_hashes());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("tg".parse::<PromptKind>().unwrap(), PromptKind::TargetGeneration);
        assert_eq!("TG&SD".parse::<PromptKind>().unwrap(), PromptKind::JointTGSD);
        assert!(matches!("cot".parse::<PromptKind>(), Err(PromptError::UnknownKind(_))));
    }
}
