use std::collections::HashSet;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::{CandidatePool, SuggestionError};
use crate::corpus::{Analyzer, Review};
use crate::extraction::strip_list_marker;
use crate::gateway::{
    id_lines, render_prompt, single_line, Bindings, Gateway, PromptSet, REASK_MARKER,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionRecord {
    pub target_review_id: String,
    pub app_id: String,
    pub feature_name: String,
    pub target_posted_at: NaiveDate,
    pub suggestions: Vec<String>,
    pub supporting_review_ids: Vec<String>,
    pub generated_at: DateTime<Utc>,
}

/// Stable id of the `rank`-th (1-based) suggestion for a complaint.
pub fn suggestion_id(target_review_id: &str, rank: usize) -> String {
    format!("{target_review_id}#{rank}")
}

impl SuggestionRecord {
    pub fn ids(&self) -> impl Iterator<Item = (String, &str)> + '_ {
        self.suggestions
            .iter()
            .enumerate()
            .map(|(i, s)| (suggestion_id(&self.target_review_id, i + 1), s.as_str()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuggestionContext<'a> {
    pub prompts: &'a PromptSet,
    pub analyzer: &'a Analyzer,
    pub gateway: &'a Gateway,
    /// Stamped on every record.
    pub generated_at: DateTime<Utc>,
}

fn strip_suggestion_marker(line: &str) -> Option<&str> {
    let lower = line.to_ascii_lowercase();
    if !lower.starts_with("suggestion") {
        return None;
    }
    let rest =
        line["suggestion".len()..].trim_start_matches(|c: char| c.is_ascii_digit() || c == ' ');
    rest.strip_prefix(':').map(str::trim)
}

/// Items from a completion. Lines marked `Suggestion:`, numbered or
/// bulleted win; without any marked line every non-empty line is an item.
pub fn parse_suggestions(text: &str) -> Vec<String> {
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let marked: Vec<String> = lines
        .iter()
        .filter_map(|l| {
            let unlisted = strip_list_marker(l);
            let body = strip_suggestion_marker(unlisted)
                .or_else(|| (unlisted.len() != l.len()).then_some(unlisted))?;
            let body = body.trim_matches('*').trim();
            (!body.is_empty()).then(|| body.to_string())
        })
        .collect();
    if !marked.is_empty() {
        return marked;
    }
    lines.into_iter().map(str::to_string).collect()
}

fn normalized(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

enum Check {
    Ok(Vec<String>),
    TooFew(usize),
    Duplicate,
}

fn check(items: Vec<String>, n: usize) -> Check {
    if items.len() < n {
        return Check::TooFew(items.len());
    }
    if items.len() > n {
        log::warn!(
            "model returned {} suggestions, keeping the first {n}",
            items.len()
        );
    }
    let items: Vec<String> = items.into_iter().take(n).collect();
    let mut seen = HashSet::new();
    if items.iter().all(|s| seen.insert(normalized(s))) {
        Check::Ok(items)
    } else {
        Check::Duplicate
    }
}

/// Asks for `n` suggestions grounded in the pool; one re-ask is allowed
/// when the answer is short or repeats itself.
pub fn generate_suggestions(
    target: &Review,
    pool: &CandidatePool,
    n: usize,
    ctx: SuggestionContext<'_>,
) -> Result<SuggestionRecord, SuggestionError> {
    if n == 0 {
        return Err(SuggestionError::ZeroSuggestions);
    }
    if pool.candidates.is_empty() {
        return Err(SuggestionError::EmptyPool(target.id.clone()));
    }
    let bindings: Bindings = [
        ("feature", pool.feature_name.clone()),
        ("complaint", single_line(&ctx.analyzer.text(target))),
        (
            "positive_reviews",
            id_lines(
                pool.candidates
                    .iter()
                    .map(|c| (c.review_id.as_str(), c.text.as_str())),
            ),
        ),
        ("n", n.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let prompt = render_prompt(&ctx.prompts.suggestion, &bindings)?;

    let raw = ctx.gateway.generate(&ctx.gateway.request(prompt.clone()))?;
    let suggestions = match check(parse_suggestions(&raw), n) {
        Check::Ok(items) => items,
        first => {
            let why = match first {
                Check::TooFew(got) => format!("only {got} suggestion(s)"),
                _ => "repeated suggestions".to_string(),
            };
            log::warn!("review {}: {why}; asking again", target.id);
            let reask = format!(
                "{prompt}\n\n{REASK_MARKER}: reply with exactly {n} different lines, each starting with \"Suggestion:\"."
            );
            let raw = ctx.gateway.generate(&ctx.gateway.request(reask))?;
            match check(parse_suggestions(&raw), n) {
                Check::Ok(items) => items,
                Check::TooFew(got) => {
                    return Err(SuggestionError::TooFew {
                        expected: n,
                        got,
                        raw,
                    })
                }
                Check::Duplicate => return Err(SuggestionError::Duplicate { raw }),
            }
        }
    };

    Ok(SuggestionRecord {
        target_review_id: target.id.clone(),
        app_id: target.app_id.clone(),
        feature_name: pool.feature_name.clone(),
        target_posted_at: target.posted_at,
        suggestions,
        supporting_review_ids: pool.ids(),
        generated_at: ctx.generated_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::review;
    use crate::gateway::{GatewayConfig, MockBackend, MockMode, ScriptedBackend};
    use crate::suggestion::Candidate;
    use std::sync::Arc;

    fn pool(n: usize) -> CandidatePool {
        CandidatePool {
            target_review_id: "t".into(),
            feature_name: "Radar".into(),
            candidates: (0..n)
                .map(|i| Candidate {
                    review_id: format!("p{i}"),
                    app_id: "rival".into(),
                    posted_at: "2020-01-01".parse().unwrap(),
                    similarity: 1.0 - i as f64 / 10.0,
                    text: format!("candidate {i} praises the smooth radar"),
                })
                .collect(),
        }
    }

    fn run(gw: &Gateway, n: usize, p: &CandidatePool) -> Result<SuggestionRecord, SuggestionError> {
        let (prompts, analyzer) = (PromptSet::builtin(), Analyzer::default());
        let target = review("t", "target", 1, "2020-02-01", "Radar is slow");
        let ctx = SuggestionContext {
            prompts: &prompts,
            analyzer: &analyzer,
            gateway: gw,
            generated_at: DateTime::UNIX_EPOCH,
        };
        generate_suggestions(&target, p, n, ctx)
    }

    #[test]
    fn parse_variants() {
        assert_eq!(
            parse_suggestions("Suggestion: a\n\nSuggestion 2: b\nnoise"),
            ["a", "b"]
        );
        assert_eq!(
            parse_suggestions("1. a\n2) b\n- c\n* **d**"),
            ["a", "b", "c", "d"]
        );
        assert_eq!(
            parse_suggestions("plain one\nplain two"),
            ["plain one", "plain two"]
        );
        assert!(parse_suggestions("  \n").is_empty());
    }

    #[test]
    fn mock_contract() {
        let gw = Gateway::mock(0);
        let rec = run(&gw, 3, &pool(5)).unwrap();
        assert_eq!(rec.suggestions.len(), 3);
        assert!(rec.suggestions[0].starts_with("Radar: candidate 0"));
        assert_eq!(rec.supporting_review_ids.len(), 5);
        assert_eq!(rec.ids().next().unwrap().0, "t#1");
        assert_eq!(run(&gw, 1, &pool(5)).unwrap().suggestions.len(), 1);
    }

    #[test]
    fn short_output_twice_is_an_error() {
        let gw = Gateway::new(
            Arc::new(MockBackend::new(0).with_mode(MockMode::ShortOutput)),
            GatewayConfig::default(),
        );
        assert!(matches!(
            run(&gw, 3, &pool(5)),
            Err(SuggestionError::TooFew {
                expected: 3,
                got: 2,
                ..
            })
        ));
        let gw = Gateway::new(
            Arc::new(MockBackend::new(0).with_mode(MockMode::DuplicateOutput)),
            GatewayConfig::default(),
        );
        assert!(matches!(
            run(&gw, 3, &pool(5)),
            Err(SuggestionError::Duplicate { .. })
        ));
    }

    #[test]
    fn reask_recovers() {
        let gw = Gateway::new(
            Arc::new(MockBackend::new(0).with_mode(MockMode::RecoverOnReask)),
            GatewayConfig::default(),
        );
        assert_eq!(run(&gw, 3, &pool(5)).unwrap().suggestions.len(), 3);
        let scripted = Arc::new(ScriptedBackend::new([
            "Suggestion: a\nSuggestion:  a ",
            "Suggestion: a\nSuggestion: b",
        ]));
        let gw = Gateway::new(scripted.clone(), GatewayConfig::default());
        assert_eq!(run(&gw, 2, &pool(1)).unwrap().suggestions, ["a", "b"]);
        assert!(scripted.prompts()[1].contains(REASK_MARKER));
    }

    #[test]
    fn pool_smaller_than_n_repeats_under_mock() {
        let gw = Gateway::mock(0);
        assert!(matches!(
            run(&gw, 3, &pool(2)),
            Err(SuggestionError::Duplicate { .. })
        ));
        assert!(matches!(
            run(&gw, 3, &pool(0)),
            Err(SuggestionError::EmptyPool(_))
        ));
    }
}
