use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use reviewlens_core::assignment::{
    assign_features, evaluate_assignment, select_shots, sentiment_gap, AssignmentContext,
    AssignmentError, AssignmentMetrics, AssignmentOutcome, GroundTruthLabel, SentimentGap, Shot,
};
use reviewlens_core::corpus::Review;

use super::{resolved_via_name, table, Env, ASSIGNMENTS, ASSIGNMENT_METRICS, QUARANTINE, SHOTS};
use crate::artifact::{read_jsonl, write_json, write_jsonl, write_text};
use crate::{CliError, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBody {
    pub labelled_reviews: usize,
    pub metrics: AssignmentMetrics,
    pub sentiment: Option<SentimentGap>,
}

pub fn run(env: &Env) -> Result<Outcome, CliError> {
    let (catalog_path, catalog) = env.catalog()?;
    let reviews = env.reviews()?;
    let refs: Vec<&Review> = reviews.iter().collect();

    let shots: Vec<Shot> = match &env.cfg.paths.shots {
        Some(p) => read_jsonl(p)?.1,
        None => select_shots(&refs, &catalog, env.cfg.assignment.n_shots, &env.analyzer),
    };
    if shots.is_empty() {
        return Err(AssignmentError::NoShots.into());
    }

    let mut hash = env
        .base_hash()?
        .file("catalog", &catalog_path)?
        .file("reviews", env.cfg.reviews_path()?)?
        .value("assignment", &env.cfg.assignment)
        .text("prompt", env.prompts.assignment.text())
        .value("shots", &shots);
    if let Some(p) = &env.cfg.paths.ground_truth {
        hash = hash.file("ground_truth", p)?;
    }
    let hash = hash.finish();

    let ctx = AssignmentContext {
        prompts: &env.prompts,
        analyzer: &env.analyzer,
        gateway: &env.gateway,
        options: env.cfg.assign_options(),
    };
    let outcome = assign_features(&refs, &catalog, &shots, ctx)?;

    write_jsonl(&env.out(SHOTS), &env.header("shots", &hash), &shots)?;
    write_jsonl(
        &env.out(ASSIGNMENTS),
        &env.header("assignments", &hash),
        &outcome.assignments,
    )?;
    write_jsonl(
        &env.out(QUARANTINE),
        &env.header("quarantine", &hash),
        &outcome.quarantined,
    )?;

    let metrics = match &env.cfg.paths.ground_truth {
        Some(p) => {
            let truth: Vec<GroundTruthLabel> = read_jsonl(p)?.1;
            let metrics = evaluate_assignment(&outcome, &truth)?;
            let sentiment =
                sentiment_gap(&outcome, &truth, |id| reviews.get(id).map(|r| r.rating)).ok();
            let body = MetricsBody {
                labelled_reviews: truth.len(),
                metrics,
                sentiment,
            };
            write_json(
                &env.out(ASSIGNMENT_METRICS),
                &env.header("assignment_metrics", &hash),
                &body,
            )?;
            Some(body)
        }
        None => None,
    };

    write_text(
        &env.out("assign_summary.txt"),
        &summary(&outcome, &catalog.names(), refs.len(), metrics.as_ref()),
    )?;
    println!(
        "assigned {} of {} reviews ({} quarantined)",
        outcome.assignments.len(),
        refs.len(),
        outcome.quarantined.len()
    );
    Ok(Outcome::Done)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

fn summary(
    outcome: &AssignmentOutcome,
    names: &[&str],
    total: usize,
    metrics: Option<&MetricsBody>,
) -> String {
    let mut per_feature: BTreeMap<&str, usize> = names.iter().map(|n| (*n, 0)).collect();
    let mut via: BTreeMap<&str, usize> = BTreeMap::new();
    for a in &outcome.assignments {
        *per_feature.entry(a.feature_name.as_str()).or_default() += 1;
        *via.entry(resolved_via_name(a.resolved_via)).or_default() += 1;
    }
    let mut out = format!(
        "Feature assignment\n\nReviews: {total}\nAssigned: {}\nQuarantined: {}\n\n",
        outcome.assignments.len(),
        outcome.quarantined.len()
    );
    let rows: Vec<Vec<String>> = names
        .iter()
        .map(|n| vec![n.to_string(), per_feature[n].to_string()])
        .collect();
    out += &table(&["Feature", "Reviews"], &rows);
    out += "\n";
    let rows: Vec<Vec<String>> = via
        .iter()
        .map(|(k, v)| vec![k.to_string(), v.to_string()])
        .collect();
    out += &table(&["Resolved via", "Reviews"], &rows);
    if let Some(m) = metrics {
        let x = &m.metrics;
        out += &format!("\nAgainst {} labelled reviews\n\n", m.labelled_reviews);
        out += &table(
            &["Metric", "Value"],
            &[
                vec!["TP".into(), x.tp.to_string()],
                vec!["FP".into(), x.fp.to_string()],
                vec!["FN".into(), x.fn_.to_string()],
                vec!["Precision".into(), pct(x.precision)],
                vec!["Recall".into(), pct(x.recall)],
                vec!["F1".into(), pct(x.f1)],
            ],
        );
        if let Some(s) = &m.sentiment {
            out += &format!(
                "\nPrecision on 1-2 star reviews: {}\nPrecision on 4-5 star reviews: {}\nDifference: {}\n",
                pct(s.precision_negative),
                pct(s.precision_positive),
                pct(s.difference)
            );
        }
    }
    out
}
