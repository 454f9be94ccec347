//! `{{placeholder}}` prompt templates for the three prompt families.
//!
//! Shipped templates wrap every list-valued placeholder in an XML-style tag
//! (`<reviews>`, `<features>`, `<positive_reviews>`, ...) and every count in
//! `<count>`. The mock backend reads those tags, so edited templates should
//! keep them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("missing placeholder {0}")]
    MissingBinding(String),
    #[error("{family} template lacks required placeholder {{{{{name}}}}}")]
    MissingFromTemplate { family: PromptFamily, name: String },
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptFamily {
    Extraction,
    Assignment,
    Suggestion,
}

impl PromptFamily {
    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            PromptFamily::Extraction => &["category", "k", "definition", "one_shot", "reviews"],
            PromptFamily::Assignment => &["features_with_meanings", "five_shots", "reviews"],
            PromptFamily::Suggestion => &["feature", "complaint", "positive_reviews", "n"],
        }
    }

    fn file_name(self) -> &'static str {
        match self {
            PromptFamily::Extraction => "extraction.txt",
            PromptFamily::Assignment => "assignment.txt",
            PromptFamily::Suggestion => "suggestion.txt",
        }
    }
}

impl fmt::Display for PromptFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptFamily::Extraction => "extraction",
            PromptFamily::Assignment => "assignment",
            PromptFamily::Suggestion => "suggestion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    family: PromptFamily,
    text: String,
}

impl PromptTemplate {
    /// Fails if the text does not mention every placeholder its family needs.
    pub fn new(family: PromptFamily, text: impl Into<String>) -> Result<Self, TemplateError> {
        let text = text.into();
        let present: Vec<&str> = PLACEHOLDER
            .captures_iter(&text)
            .map(|c| c.get(1).unwrap().as_str())
            .collect();
        if let Some(missing) = family
            .required_placeholders()
            .iter()
            .find(|p| !present.contains(p))
        {
            return Err(TemplateError::MissingFromTemplate {
                family,
                name: missing.to_string(),
            });
        }
        Ok(Self { family, text })
    }

    pub fn family(&self) -> PromptFamily {
        self.family
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

pub type Bindings = BTreeMap<String, String>;

/// Single-pass substitution; bound values are inserted verbatim and never
/// re-expanded.
pub fn render_prompt(
    template: &PromptTemplate,
    bindings: &Bindings,
) -> Result<String, TemplateError> {
    for name in template.family.required_placeholders() {
        if !bindings.contains_key(*name) {
            return Err(TemplateError::MissingBinding(name.to_string()));
        }
    }
    for caps in PLACEHOLDER.captures_iter(&template.text) {
        let name = caps.get(1).unwrap().as_str();
        if !bindings.contains_key(name) {
            return Err(TemplateError::MissingBinding(name.to_string()));
        }
    }
    Ok(PLACEHOLDER
        .replace_all(&template.text, |caps: &regex::Captures<'_>| {
            bindings[caps.get(1).unwrap().as_str()].clone()
        })
        .into_owned())
}

/// Formats `(id, text)` pairs as `[id] text` lines, flattening newlines.
pub fn id_lines<'a, I>(items: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    items
        .into_iter()
        .map(|(id, text)| format!("[{id}] {}", single_line(text)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The three templates plus the fixed texts bound into the extraction prompt.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub extraction: PromptTemplate,
    pub assignment: PromptTemplate,
    pub suggestion: PromptTemplate,
    pub feature_definition: String,
    pub extraction_one_shot: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            extraction: PromptTemplate::new(
                PromptFamily::Extraction,
                include_str!("../../prompts/extraction.txt"),
            )
            .unwrap(),
            assignment: PromptTemplate::new(
                PromptFamily::Assignment,
                include_str!("../../prompts/assignment.txt"),
            )
            .unwrap(),
            suggestion: PromptTemplate::new(
                PromptFamily::Suggestion,
                include_str!("../../prompts/suggestion.txt"),
            )
            .unwrap(),
            feature_definition: include_str!("../../prompts/feature_definition.txt")
                .trim()
                .to_string(),
            extraction_one_shot: include_str!("../../prompts/extraction_one_shot.txt")
                .trim()
                .to_string(),
        }
    }

    /// Loads any of `extraction.txt`, `assignment.txt`, `suggestion.txt`,
    /// `feature_definition.txt`, `extraction_one_shot.txt` found in `dir`;
    /// absent files keep the built-in text.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str| -> Result<Option<String>, TemplateError> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(None);
            }
            fs::read_to_string(&path)
                .map(Some)
                .map_err(|e| TemplateError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })
        };
        let mut set = Self::builtin();
        for family in [
            PromptFamily::Extraction,
            PromptFamily::Assignment,
            PromptFamily::Suggestion,
        ] {
            if let Some(text) = read(family.file_name())? {
                let t = PromptTemplate::new(family, text)?;
                match family {
                    PromptFamily::Extraction => set.extraction = t,
                    PromptFamily::Assignment => set.assignment = t,
                    PromptFamily::Suggestion => set.suggestion = t,
                }
            }
        }
        if let Some(text) = read("feature_definition.txt")? {
            set.feature_definition = text.trim().to_string();
        }
        if let Some(text) = read("extraction_one_shot.txt")? {
            set.extraction_one_shot = text.trim().to_string();
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, &str)]) -> Bindings {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn extraction_substitution() {
        let set = PromptSet::builtin();
        let reviews = id_lines([("r1", "Radar keeps\nfreezing"), ("r2", "Too many ads")]);
        let out = render_prompt(
            &set.extraction,
            &bind(&[
                ("category", "Weather"),
                ("k", "14"),
                ("definition", &set.feature_definition),
                ("one_shot", &set.extraction_one_shot),
                ("reviews", &reviews),
            ]),
        )
        .unwrap();
        assert!(out.contains("[r1] Radar keeps freezing"));
        assert!(out.contains("[r2] Too many ads"));
        assert!(out.contains("<count>14</count>"));
        assert!(!out.contains("{{"));
    }

    #[test]
    fn missing_binding_is_named() {
        let set = PromptSet::builtin();
        let err = render_prompt(
            &set.assignment,
            &bind(&[
                ("features_with_meanings", "- Ads: ads"),
                ("reviews", "[r1] x"),
            ]),
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "missing placeholder five_shots");
    }

    #[test]
    fn suggestion_substitution() {
        let set = PromptSet::builtin();
        let positives: Vec<(String, String)> = (1..=5)
            .map(|i| (format!("p{i}"), format!("positive review number {i}")))
            .collect();
        let lines = id_lines(positives.iter().map(|(a, b)| (a.as_str(), b.as_str())));
        let out = render_prompt(
            &set.suggestion,
            &bind(&[
                ("feature", "Radar"),
                ("complaint", "No radar for my area"),
                ("positive_reviews", &lines),
                ("n", "3"),
            ]),
        )
        .unwrap();
        for (_, text) in &positives {
            assert!(out.contains(text.as_str()));
        }
        assert!(out.contains("<count>3</count>"));
    }

    #[test]
    fn values_are_not_re_expanded() {
        let t = PromptTemplate::new(
            PromptFamily::Suggestion,
            "{{feature}} {{complaint}} {{positive_reviews}} {{n}}",
        )
        .unwrap();
        let out = render_prompt(
            &t,
            &bind(&[
                ("feature", "{{n}}"),
                ("complaint", "c"),
                ("positive_reviews", "p"),
                ("n", "2"),
            ]),
        )
        .unwrap();
        assert_eq!(out, "{{n}} c p 2");
    }

    #[test]
    fn template_must_mention_family_placeholders() {
        let err = PromptTemplate::new(PromptFamily::Assignment, "{{reviews}} {{five_shots}}")
            .unwrap_err();
        assert!(
            matches!(err, TemplateError::MissingFromTemplate { ref name, .. } if name == "features_with_meanings")
        );
    }

    #[test]
    fn load_dir_overrides_present_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("suggestion.txt"),
            "custom {{feature}} {{complaint}} {{positive_reviews}} {{n}}",
        )
        .unwrap();
        let set = PromptSet::load_dir(dir.path()).unwrap();
        assert!(set.suggestion.text().starts_with("custom"));
        assert_eq!(set.extraction, PromptSet::builtin().extraction);
    }
}
