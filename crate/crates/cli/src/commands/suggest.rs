use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use reviewlens_core::suggestion::{
    find_candidates, generate_suggestions, segregate, CandidatePool, SuggestionContext,
    SuggestionError, SuggestionRecord,
};

use super::rank::{load_assignments, ComplaintRow};
use super::{Env, CANDIDATES, COMPLAINTS, SUGGESTIONS};
use crate::artifact::{read_jsonl, write_jsonl, write_text};
use crate::config::BackendKind;
use crate::{CliError, Outcome};

/// One suggestion per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionLine {
    pub suggestion_id: String,
    pub target_review_id: String,
    pub app_id: String,
    pub feature: String,
    pub rank: usize,
    pub suggestion: String,
    pub supporting_review_ids: Vec<String>,
    pub target_posted_at: NaiveDate,
    pub generated_at: DateTime<Utc>,
}

pub fn to_lines(rec: &SuggestionRecord) -> Vec<SuggestionLine> {
    rec.ids()
        .enumerate()
        .map(|(i, (id, text))| SuggestionLine {
            suggestion_id: id,
            target_review_id: rec.target_review_id.clone(),
            app_id: rec.app_id.clone(),
            feature: rec.feature_name.clone(),
            rank: i + 1,
            suggestion: text.to_string(),
            supporting_review_ids: rec.supporting_review_ids.clone(),
            target_posted_at: rec.target_posted_at,
            generated_at: rec.generated_at,
        })
        .collect()
}

/// Regroups lines into records, keeping first-seen order.
pub fn from_lines(lines: Vec<SuggestionLine>) -> Vec<SuggestionRecord> {
    let mut out: Vec<SuggestionRecord> = Vec::new();
    for l in lines {
        match out.last_mut() {
            Some(rec)
                if rec.target_review_id == l.target_review_id && rec.feature_name == l.feature =>
            {
                rec.suggestions.push(l.suggestion)
            }
            _ => out.push(SuggestionRecord {
                target_review_id: l.target_review_id,
                app_id: l.app_id,
                feature_name: l.feature,
                target_posted_at: l.target_posted_at,
                suggestions: vec![l.suggestion],
                supporting_review_ids: l.supporting_review_ids,
                generated_at: l.generated_at,
            }),
        }
    }
    out
}

pub fn run(env: &Env) -> Result<Outcome, CliError> {
    let complaints_path = env.require(COMPLAINTS, "rank")?;
    let complaints: Vec<ComplaintRow> = read_jsonl(&complaints_path)?.1;
    let (assignments_path, outcome) = load_assignments(env)?;
    let reviews = env.reviews()?;
    let s = &env.cfg.suggestion;

    let hash = env
        .base_hash()?
        .file("complaints", &complaints_path)?
        .file("assignments", &assignments_path)?
        .file("reviews", env.cfg.reviews_path()?)?
        .value("sample_size", &s.sample_size)
        .value("n_suggestions", &s.n_suggestions)
        .value("allow_empty_history", &s.allow_empty_history)
        .text("prompt", env.prompts.suggestion.text())
        .finish();

    let generated_at = match env.cfg.backend.kind {
        BackendKind::Mock => DateTime::UNIX_EPOCH,
        BackendKind::Remote => Utc::now(),
    };
    let ctx = SuggestionContext {
        prompts: &env.prompts,
        analyzer: &env.analyzer,
        gateway: &env.gateway,
        generated_at,
    };

    let mut pools: Vec<CandidatePool> = Vec::new();
    let mut records: Vec<SuggestionRecord> = Vec::new();
    let mut skipped: Vec<String> = Vec::new();
    for c in &complaints {
        let target = reviews
            .get(&c.review_id)
            .ok_or_else(|| CliError::UnknownReview(c.review_id.clone()))?;
        let positives = segregate(&reviews, &c.feature_name, &outcome, &c.app_id).positives;
        let pool = match find_candidates(
            target,
            &c.feature_name,
            &positives,
            s.sample_size,
            &env.analyzer,
            &env.gateway,
        ) {
            Ok(pool) => pool,
            Err(SuggestionError::NoHistoricalCandidates(id)) if s.allow_empty_history => {
                log::warn!(
                    "skipping {id}: no earlier competitor praise for {}",
                    c.feature_name
                );
                skipped.push(id);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        records.push(generate_suggestions(target, &pool, s.n_suggestions, ctx)?);
        pools.push(pool);
    }

    let lines: Vec<SuggestionLine> = records.iter().flat_map(to_lines).collect();
    write_jsonl(
        &env.out(CANDIDATES),
        &env.header("candidates", &hash),
        &pools,
    )?;
    write_jsonl(
        &env.out(SUGGESTIONS),
        &env.header("suggestions", &hash),
        &lines,
    )?;

    let mut text = format!(
        "Suggestions\n\nComplaints: {}\nWith suggestions: {}\nSkipped (no earlier competitor praise): {}\n",
        complaints.len(),
        records.len(),
        skipped.len()
    );
    for rec in &records {
        let complaint = reviews
            .get(&rec.target_review_id)
            .map(|r| env.analyzer.text(r))
            .unwrap_or_default();
        text += &format!(
            "\n[{}] {} / {} ({})\nComplaint: {}\nGrounded in: {}\n",
            rec.target_review_id,
            rec.app_id,
            rec.feature_name,
            rec.target_posted_at,
            complaint,
            rec.supporting_review_ids.join(", ")
        );
        for (id, s) in rec.ids() {
            text += &format!("  {id}  {s}\n");
        }
    }
    write_text(&env.out("suggest_summary.txt"), &text)?;
    println!(
        "{} suggestion(s) for {} complaint(s)",
        lines.len(),
        records.len()
    );
    Ok(Outcome::Done)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_round_trip() {
        let rec = |id: &str, n: usize| SuggestionRecord {
            target_review_id: id.into(),
            app_id: "a".into(),
            feature_name: "Radar".into(),
            target_posted_at: "2021-01-01".parse().unwrap(),
            suggestions: (0..n).map(|i| format!("s{i}")).collect(),
            supporting_review_ids: vec!["p".into()],
            generated_at: DateTime::UNIX_EPOCH,
        };
        let recs = vec![rec("x", 3), rec("y", 1)];
        let lines: Vec<SuggestionLine> = recs.iter().flat_map(to_lines).collect();
        assert_eq!(lines[2].suggestion_id, "x#3");
        assert_eq!(from_lines(lines), recs);
    }
}
