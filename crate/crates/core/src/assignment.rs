//! One feature per review, via the few-shot assignment prompt, plus
//! micro-averaged precision / recall / F1 against labelled reviews.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Analyzer, Review};
use crate::extraction::{strip_list_marker, FeatureLabel};
use crate::gateway::{
    cosine_similarity, id_lines, render_prompt, single_line, Bindings, Gateway, GatewayError,
    PromptSet, TemplateError,
};

#[derive(Debug, thiserror::Error)]
pub enum AssignmentError {
    #[error("feature catalog is empty")]
    EmptyCatalog,
    #[error("few-shot example references unknown feature {0:?}")]
    UnknownShotFeature(String),
    #[error("no few-shot examples")]
    NoShots,
    #[error("chunk size must be at least 1")]
    ZeroChunkSize,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("labelled review {0:?} is neither assigned nor quarantined")]
    TruthNotInCorpus(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolvedVia {
    Exact,
    Alias,
    NearestEmbedding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub review_id: String,
    pub feature_name: String,
    pub resolved_via: ResolvedVia,
}

/// A review whose emitted label could not be resolved to a catalog feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quarantined {
    pub review_id: String,
    pub raw_label: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssignmentOutcome {
    /// In input review order.
    pub assignments: Vec<Assignment>,
    pub quarantined: Vec<Quarantined>,
}

impl AssignmentOutcome {
    pub fn feature_of(&self) -> HashMap<&str, &str> {
        self.assignments
            .iter()
            .map(|a| (a.review_id.as_str(), a.feature_name.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub review_id: String,
    pub feature_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl AssignmentMetrics {
    /// Ratios default to 0 when their denominator is 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// The final top-k features that reviews get assigned to.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCatalog {
    features: Vec<FeatureLabel>,
}

impl FeatureCatalog {
    pub fn new(features: Vec<FeatureLabel>) -> Result<Self, AssignmentError> {
        if features.is_empty() {
            return Err(AssignmentError::EmptyCatalog);
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &[FeatureLabel] {
        &self.features
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.features.iter().any(|f| f.name == name)
    }

    fn exact(&self, raw: &str) -> Option<&FeatureLabel> {
        self.features
            .iter()
            .find(|f| f.name.eq_ignore_ascii_case(raw))
    }

    fn alias(&self, raw: &str) -> Option<&FeatureLabel> {
        self.features
            .iter()
            .find(|f| f.alias_names.iter().any(|a| a.eq_ignore_ascii_case(raw)))
    }
}

/// A worked example shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub review_text: String,
    pub feature_name: String,
}

/// Picks up to `count` examples: for each catalog feature in order, the
/// unused review sharing the most stems with the feature's name and
/// description (ties to the smaller review id). Features with no
/// overlapping review are skipped.
pub fn select_shots(
    reviews: &[&Review],
    catalog: &FeatureCatalog,
    count: usize,
    analyzer: &Analyzer,
) -> Vec<Shot> {
    let tokenized: Vec<(&Review, BTreeSet<String>)> = reviews
        .iter()
        .map(|r| (*r, analyzer.tokens(r).into_inner().into_iter().collect()))
        .collect();
    let mut used: HashSet<&str> = HashSet::new();
    let mut shots = Vec::new();
    for feature in catalog.features() {
        if shots.len() == count {
            break;
        }
        let stems: BTreeSet<String> = analyzer
            .preprocessor
            .preprocess(&FeatureLabel::embedding_text(
                &feature.name,
                &feature.description,
            ))
            .into_inner()
            .into_iter()
            .collect();
        let best = tokenized
            .iter()
            .filter(|(r, _)| !used.contains(r.id.as_str()))
            .map(|(r, toks)| (toks.intersection(&stems).count(), *r))
            .filter(|(n, _)| *n > 0)
            .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.id.cmp(&a.1.id)));
        if let Some((_, review)) = best {
            used.insert(review.id.as_str());
            shots.push(Shot {
                review_text: analyzer.text(review),
                feature_name: feature.name.clone(),
            });
        }
    }
    shots
}

fn clean_label(raw: &str) -> &str {
    strip_list_marker(raw.trim()).trim_matches(|c: char| "\"'*`.".contains(c) || c.is_whitespace())
}

/// Exact (case-insensitive) name, then alias, then the nearest catalog
/// embedding if its cosine reaches `fallback_threshold`. `Ok(None)` means
/// the label cannot be resolved.
pub fn resolve_label(
    raw: &str,
    catalog: &FeatureCatalog,
    gateway: &Gateway,
    fallback_threshold: f64,
) -> Result<Option<(String, ResolvedVia)>, GatewayError> {
    Ok(
        resolve_labels(&[raw.to_string()], catalog, gateway, fallback_threshold)?
            .pop()
            .unwrap(),
    )
}

/// Batch form of [`resolve_label`]; embeds all fallback labels in one call.
pub fn resolve_labels(
    raws: &[String],
    catalog: &FeatureCatalog,
    gateway: &Gateway,
    fallback_threshold: f64,
) -> Result<Vec<Option<(String, ResolvedVia)>>, GatewayError> {
    let mut out: Vec<Option<(String, ResolvedVia)>> = Vec::with_capacity(raws.len());
    let mut pending: Vec<(usize, String)> = Vec::new();
    for (i, raw) in raws.iter().enumerate() {
        let label = clean_label(raw);
        if label.is_empty() {
            out.push(None);
        } else if let Some(f) = catalog.exact(label) {
            out.push(Some((f.name.clone(), ResolvedVia::Exact)));
        } else if let Some(f) = catalog.alias(label) {
            out.push(Some((f.name.clone(), ResolvedVia::Alias)));
        } else {
            out.push(None);
            pending.push((i, label.to_string()));
        }
    }
    if pending.is_empty() {
        return Ok(out);
    }
    let unique: Vec<String> = pending
        .iter()
        .map(|(_, l)| l.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let vectors = gateway.embed(&unique)?;
    let mut nearest: HashMap<&str, Option<String>> = HashMap::new();
    for (label, v) in unique.iter().zip(&vectors) {
        let mut best: Option<(&FeatureLabel, f64)> = None;
        for f in catalog.features() {
            let Ok(sim) = cosine_similarity(v, &f.embedding) else {
                continue;
            };
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((f, sim));
            }
        }
        nearest.insert(
            label.as_str(),
            best.filter(|(_, s)| *s >= fallback_threshold)
                .map(|(f, _)| f.name.clone()),
        );
    }
    for (i, label) in pending {
        out[i] = nearest[label.as_str()]
            .clone()
            .map(|n| (n, ResolvedVia::NearestEmbedding));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignOptions {
    pub chunk_size: usize,
    pub fallback_threshold: f64,
}

impl Default for AssignOptions {
    fn default() -> Self {
        Self {
            chunk_size: 50,
            fallback_threshold: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AssignmentContext<'a> {
    pub prompts: &'a PromptSet,
    pub analyzer: &'a Analyzer,
    pub gateway: &'a Gateway,
    pub options: AssignOptions,
}

fn parse_assignment_lines<'a>(text: &'a str, ids: &HashSet<&str>) -> HashMap<String, &'a str> {
    let mut out = HashMap::new();
    for line in text.lines() {
        let line = strip_list_marker(line.trim());
        let Some((id, label)) = line.split_once(':') else {
            continue;
        };
        let id = id.trim().trim_matches(|c| c == '[' || c == ']').trim();
        if ids.contains(id) && !out.contains_key(id) {
            out.insert(id.to_string(), label.trim());
        }
    }
    out
}

/// Assigns exactly one catalog feature to each review, or quarantines it.
/// Chunks are sent concurrently through the gateway.
pub fn assign_features(
    reviews: &[&Review],
    catalog: &FeatureCatalog,
    shots: &[Shot],
    ctx: AssignmentContext<'_>,
) -> Result<AssignmentOutcome, AssignmentError> {
    if shots.is_empty() {
        return Err(AssignmentError::NoShots);
    }
    if let Some(bad) = shots.iter().find(|s| !catalog.contains(&s.feature_name)) {
        return Err(AssignmentError::UnknownShotFeature(
            bad.feature_name.clone(),
        ));
    }
    if ctx.options.chunk_size == 0 {
        return Err(AssignmentError::ZeroChunkSize);
    }

    let features_block = catalog
        .features()
        .iter()
        .map(|f| format!("- {}: {}", f.name, single_line(&f.description)))
        .collect::<Vec<_>>()
        .join("\n");
    let shots_block = shots
        .iter()
        .map(|s| {
            format!(
                "Review: {}\nFeature: {}",
                single_line(&s.review_text),
                s.feature_name
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n");

    let chunks: Vec<&[&Review]> = reviews.chunks(ctx.options.chunk_size).collect();
    let mut requests = Vec::with_capacity(chunks.len());
    for chunk in &chunks {
        let texts: Vec<(&str, String)> = chunk
            .iter()
            .map(|r| (r.id.as_str(), ctx.analyzer.text(r)))
            .collect();
        let bindings: Bindings = [
            ("features_with_meanings", features_block.clone()),
            ("five_shots", shots_block.clone()),
            (
                "reviews",
                id_lines(texts.iter().map(|(id, t)| (*id, t.as_str()))),
            ),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b))
        .collect();
        requests.push(
            ctx.gateway
                .request(render_prompt(&ctx.prompts.assignment, &bindings)?),
        );
    }
    let completions = ctx.gateway.generate_many(&requests);

    // review id -> raw label, in review order
    let mut raw: Vec<(&str, Option<String>)> = Vec::with_capacity(reviews.len());
    for (chunk, completion) in chunks.iter().zip(completions) {
        let completion = completion?;
        let ids: HashSet<&str> = chunk.iter().map(|r| r.id.as_str()).collect();
        let parsed = parse_assignment_lines(&completion, &ids);
        for r in chunk.iter() {
            raw.push((
                r.id.as_str(),
                parsed.get(r.id.as_str()).map(|s| s.to_string()),
            ));
        }
    }

    let labels: Vec<String> = raw
        .iter()
        .map(|(_, l)| l.clone().unwrap_or_default())
        .collect();
    let resolved = resolve_labels(
        &labels,
        catalog,
        ctx.gateway,
        ctx.options.fallback_threshold,
    )?;

    let mut outcome = AssignmentOutcome::default();
    for ((id, label), res) in raw.into_iter().zip(resolved) {
        match (label, res) {
            (_, Some((feature_name, resolved_via))) => outcome.assignments.push(Assignment {
                review_id: id.to_string(),
                feature_name,
                resolved_via,
            }),
            (None, None) => outcome.quarantined.push(Quarantined {
                review_id: id.to_string(),
                raw_label: None,
                reason: "no label emitted".into(),
            }),
            (Some(l), None) => outcome.quarantined.push(Quarantined {
                review_id: id.to_string(),
                reason: format!("label {l:?} matches no catalog feature"),
                raw_label: Some(l),
            }),
        }
    }
    if !outcome.quarantined.is_empty() {
        log::warn!("{} review(s) quarantined", outcome.quarantined.len());
    }
    Ok(outcome)
}

/// Single-label micro counting: a correct prediction is one tp; a wrong one
/// is one fp and one fn; a quarantined review is one fn. Assignments of
/// unlabelled reviews are ignored.
pub fn evaluate_assignment(
    outcome: &AssignmentOutcome,
    truth: &[GroundTruthLabel],
) -> Result<AssignmentMetrics, AssignmentError> {
    let predicted = outcome.feature_of();
    let quarantined: HashSet<&str> = outcome
        .quarantined
        .iter()
        .map(|q| q.review_id.as_str())
        .collect();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for label in truth {
        match predicted.get(label.review_id.as_str()) {
            Some(p) if *p == label.feature_name => tp += 1,
            Some(_) => {
                fp += 1;
                fn_ += 1;
            }
            None if quarantined.contains(label.review_id.as_str()) => fn_ += 1,
            None => return Err(AssignmentError::TruthNotInCorpus(label.review_id.clone())),
        }
    }
    Ok(AssignmentMetrics::from_counts(tp, fp, fn_))
}

/// Precision on negative (1-2 star) and positive (4-5 star) labelled
/// reviews separately, and their absolute difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentGap {
    pub precision_negative: f64,
    pub precision_positive: f64,
    pub difference: f64,
}

pub fn sentiment_gap(
    outcome: &AssignmentOutcome,
    truth: &[GroundTruthLabel],
    rating_of: impl Fn(&str) -> Option<u8>,
) -> Result<SentimentGap, AssignmentError> {
    let split = |keep: fn(u8) -> bool| -> Vec<GroundTruthLabel> {
        truth
            .iter()
            .filter(|t| rating_of(&t.review_id).is_some_and(keep))
            .cloned()
            .collect()
    };
    let neg = evaluate_assignment(outcome, &split(|r| r <= 2))?.precision;
    let pos = evaluate_assignment(outcome, &split(|r| r >= 4))?.precision;
    Ok(SentimentGap {
        precision_negative: neg,
        precision_positive: pos,
        difference: (neg - pos).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::review;
    use crate::gateway::{GatewayConfig, ScriptedBackend};
    use std::sync::Arc;

    fn catalog(gw: &Gateway, items: &[(&str, &str, &[&str])]) -> FeatureCatalog {
        FeatureCatalog::new(
            items
                .iter()
                .map(|(n, d, aliases)| FeatureLabel {
                    name: n.to_string(),
                    description: d.to_string(),
                    embedding: gw.embed_one(&FeatureLabel::embedding_text(n, d)).unwrap(),
                    first_seen_batch: 1,
                    support_count: 1,
                    alias_names: aliases.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn assigned(id: &str, f: &str) -> Assignment {
        Assignment {
            review_id: id.into(),
            feature_name: f.into(),
            resolved_via: ResolvedVia::Exact,
        }
    }

    fn truth(id: &str, f: &str) -> GroundTruthLabel {
        GroundTruthLabel {
            review_id: id.into(),
            feature_name: f.into(),
        }
    }

    #[test]
    fn resolution_order() {
        let gw = Gateway::mock(0);
        let cat = catalog(
            &gw,
            &[
                (
                    "Advertisements",
                    "banner promos",
                    &["In-app Advertisements"],
                ),
                ("Ads", "Adverts", &[]),
                ("Radar", "radar maps", &[]),
            ],
        );
        assert_eq!(
            resolve_label("ads", &cat, &gw, 0.6).unwrap(),
            Some(("Ads".into(), ResolvedVia::Exact))
        );
        assert_eq!(
            resolve_label(" \"In-app Advertisements\". ", &cat, &gw, 0.6).unwrap(),
            Some(("Advertisements".into(), ResolvedVia::Alias))
        );
        // "Adverts" -> {advert}; "Ads: Adverts" -> {ad, advert}: cosine 1/sqrt(2)
        assert_eq!(
            resolve_label("Adverts", &cat, &gw, 0.6).unwrap(),
            Some(("Ads".into(), ResolvedVia::NearestEmbedding))
        );
        assert_eq!(resolve_label("qwzx", &cat, &gw, 0.6).unwrap(), None);
        assert_eq!(resolve_label("", &cat, &gw, 0.6).unwrap(), None);
    }

    #[test]
    fn mock_assigns_by_description_overlap() {
        let gw = Gateway::mock(0);
        let cat = catalog(
            &gw,
            &[
                ("radar", "All about radar", &[]),
                ("widget", "All about widget", &[]),
            ],
        );
        let reviews = [
            review("r1", "a", 1, "2020-01-01", "The widget never refreshes"),
            review("r2", "a", 5, "2020-01-01", "Radar is superb"),
            review("r3", "a", 5, "2020-01-01", "nothing relevant"),
        ];
        let refs: Vec<&Review> = reviews.iter().collect();
        let (prompts, analyzer) = (PromptSet::builtin(), Analyzer::default());
        let shots = select_shots(&refs, &cat, 5, &analyzer);
        assert_eq!(shots.len(), 2);
        let ctx = AssignmentContext {
            prompts: &prompts,
            analyzer: &analyzer,
            gateway: &gw,
            options: AssignOptions {
                chunk_size: 2,
                ..Default::default()
            },
        };
        let out = assign_features(&refs, &cat, &shots, ctx).unwrap();
        assert!(out.quarantined.is_empty());
        let got: Vec<_> = out
            .assignments
            .iter()
            .map(|a| {
                (
                    a.review_id.as_str(),
                    a.feature_name.as_str(),
                    a.resolved_via,
                )
            })
            .collect();
        assert_eq!(
            got,
            [
                ("r1", "widget", ResolvedVia::Exact),
                ("r2", "radar", ResolvedVia::Exact),
                ("r3", "radar", ResolvedVia::Exact),
            ]
        );
    }

    #[test]
    fn unresolvable_and_missing_labels_are_quarantined() {
        let scripted = ScriptedBackend::new(["[r1]: Radar\nr2: Teleportation\n- r9: Radar"]);
        let gw = Gateway::new(Arc::new(scripted), GatewayConfig::default());
        let cat = catalog(&gw, &[("Radar", "radar maps", &[])]);
        let reviews = [
            review("r1", "a", 1, "2020-01-01", "x"),
            review("r2", "a", 1, "2020-01-01", "y"),
            review("r3", "a", 1, "2020-01-01", "z"),
        ];
        let refs: Vec<&Review> = reviews.iter().collect();
        let (prompts, analyzer) = (PromptSet::builtin(), Analyzer::default());
        let shots = vec![Shot {
            review_text: "radar".into(),
            feature_name: "Radar".into(),
        }];
        let ctx = AssignmentContext {
            prompts: &prompts,
            analyzer: &analyzer,
            gateway: &gw,
            options: AssignOptions::default(),
        };
        let out = assign_features(&refs, &cat, &shots, ctx).unwrap();
        assert_eq!(out.assignments, vec![assigned("r1", "Radar")]);
        assert_eq!(out.quarantined.len(), 2);
        assert_eq!(
            out.quarantined[0].raw_label.as_deref(),
            Some("Teleportation")
        );
        assert_eq!(out.quarantined[1].raw_label, None);
        assert_eq!(out.assignments.len() + out.quarantined.len(), refs.len());

        let bad = vec![Shot {
            review_text: "x".into(),
            feature_name: "Nope".into(),
        }];
        assert!(matches!(
            assign_features(&refs, &cat, &bad, ctx),
            Err(AssignmentError::UnknownShotFeature(_))
        ));
    }

    #[test]
    fn metrics_formulas() {
        let outcome = AssignmentOutcome {
            assignments: vec![
                assigned("a", "X"),
                assigned("b", "X"),
                assigned("c", "Y"),
                assigned("d", "Y"),
            ],
            quarantined: vec![],
        };
        let t = [
            truth("a", "X"),
            truth("b", "X"),
            truth("c", "Y"),
            truth("d", "X"),
        ];
        let m = evaluate_assignment(&outcome, &t).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (3, 1, 1));
        assert_eq!((m.precision, m.recall, m.f1), (0.75, 0.75, 0.75));

        let all = evaluate_assignment(&outcome, &t[..3]).unwrap();
        assert_eq!((all.precision, all.recall, all.f1), (1.0, 1.0, 1.0));

        let zero = AssignmentMetrics::from_counts(0, 0, 0);
        assert_eq!((zero.precision, zero.recall, zero.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn quarantine_counts_as_false_negative_and_unknown_ids_fail() {
        let outcome = AssignmentOutcome {
            assignments: vec![assigned("a", "X")],
            quarantined: vec![Quarantined {
                review_id: "b".into(),
                raw_label: None,
                reason: String::new(),
            }],
        };
        let m = evaluate_assignment(&outcome, &[truth("a", "X"), truth("b", "X")]).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 1));
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
        assert!(matches!(
            evaluate_assignment(&outcome, &[truth("zz", "X")]),
            Err(AssignmentError::TruthNotInCorpus(_))
        ));
    }

    #[test]
    fn sentiment_gap_splits_by_rating() {
        let outcome = AssignmentOutcome {
            assignments: vec![
                assigned("n1", "X"),
                assigned("n2", "Y"),
                assigned("p1", "X"),
                assigned("p2", "X"),
            ],
            quarantined: vec![],
        };
        let t = [
            truth("n1", "X"),
            truth("n2", "X"),
            truth("p1", "X"),
            truth("p2", "X"),
        ];
        let gap = sentiment_gap(&outcome, &t, |id| {
            Some(if id.starts_with('n') { 1 } else { 5 })
        })
        .unwrap();
        assert_eq!(gap.precision_negative, 0.5);
        assert_eq!(gap.precision_positive, 1.0);
        assert_eq!(gap.difference, 0.5);
    }
}
