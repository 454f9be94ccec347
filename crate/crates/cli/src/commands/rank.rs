use serde::{Deserialize, Serialize};

use reviewlens_core::assignment::{Assignment, AssignmentOutcome};
use reviewlens_core::corpus::Review;
use reviewlens_core::suggestion::{compute_ufs, rank_complaints_tfidf, segregate};

use super::{table, Env, ASSIGNMENTS, COMPLAINTS, UFS};
use crate::artifact::{read_jsonl, write_jsonl, write_text};
use crate::config::IdfScope;
use crate::{CliError, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UfsRow {
    pub app_id: String,
    pub rank: usize,
    pub feature_name: String,
    pub negative_count: usize,
    pub ufs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplaintRow {
    pub app_id: String,
    pub feature_name: String,
    pub review_id: String,
    pub rank: usize,
    pub tfidf_score: f64,
}

/// Assignments artifact as an outcome (quarantined reviews carry no feature).
pub fn load_assignments(env: &Env) -> Result<(std::path::PathBuf, AssignmentOutcome), CliError> {
    let path = env.require(ASSIGNMENTS, "assign")?;
    let assignments: Vec<Assignment> = read_jsonl(&path)?.1;
    Ok((
        path,
        AssignmentOutcome {
            assignments,
            quarantined: Vec::new(),
        },
    ))
}

pub fn run(env: &Env) -> Result<Outcome, CliError> {
    let (assignments_path, outcome) = load_assignments(env)?;
    let (catalog_path, records) = env.catalog_records()?;
    let names: Vec<&str> = records.iter().map(|r| r.name.as_str()).collect();
    let reviews = env.reviews()?;
    let s = &env.cfg.suggestion;
    if let Some(f) = &s.feature {
        if !names.contains(&f.as_str()) {
            return Err(CliError::UnknownFeature(f.clone()));
        }
    }
    let apps: Vec<String> = if s.target_apps.is_empty() {
        reviews.app_ids().into_iter().map(str::to_string).collect()
    } else {
        s.target_apps.clone()
    };

    let hash = env
        .base_hash()?
        .file("assignments", &assignments_path)?
        .file("catalog", &catalog_path)?
        .file("reviews", env.cfg.reviews_path()?)?
        .value("apps", &apps)
        .value("feature", &s.feature)
        .value("top_features", &s.top_features)
        .value("top_complaints", &s.top_complaints)
        .value("idf_scope", &s.idf_scope)
        .value("length_normalized", &s.length_normalized)
        .finish();

    let all: Vec<&Review> = reviews.iter().collect();
    let mut ufs_rows = Vec::new();
    let mut complaint_rows = Vec::new();
    let mut text = String::from("Underperforming features\n");
    for app in &apps {
        let scores = compute_ufs(&outcome, &reviews, &names, app);
        let total: usize = scores.iter().map(|x| x.negative_count).sum();
        let mut rows: Vec<Vec<String>> = Vec::new();
        for (i, sc) in scores.iter().enumerate() {
            ufs_rows.push(UfsRow {
                app_id: app.clone(),
                rank: i + 1,
                feature_name: sc.feature_name.clone(),
                negative_count: sc.negative_count,
                ufs: sc.ufs,
            });
            rows.push(vec![
                (i + 1).to_string(),
                sc.feature_name.clone(),
                sc.negative_count.to_string(),
                format!("{:.2}%", sc.ufs),
            ]);
        }
        rows.push(vec![
            String::new(),
            "Total".into(),
            total.to_string(),
            format!("{:.2}%", scores.iter().map(|x| x.ufs).sum::<f64>()),
        ]);
        text += &format!("\n{app}\n\n");
        text += &table(&["#", "Feature", "Negative reviews", "UFS"], &rows);

        let chosen: Vec<&str> = match &s.feature {
            Some(f) => vec![f.as_str()],
            None => scores
                .iter()
                .filter(|x| x.negative_count > 0)
                .take(s.top_features)
                .map(|x| x.feature_name.as_str())
                .collect(),
        };
        let scope: Vec<&Review> = match s.idf_scope {
            IdfScope::Category => all.clone(),
            IdfScope::TargetApp => reviews.for_app(app).collect(),
        };
        for feature in chosen {
            let seg = segregate(&reviews, feature, &outcome, app);
            if seg.negatives.is_empty() {
                log::warn!("{app}: no negative reviews for {feature}");
                continue;
            }
            let ranked = rank_complaints_tfidf(
                &seg.negatives,
                &scope,
                s.top_complaints,
                &env.analyzer,
                s.length_normalized,
            )?;
            text += &format!("\n{app} / {feature}: top complaints\n\n");
            let rows: Vec<Vec<String>> = ranked
                .iter()
                .map(|c| {
                    let body = reviews
                        .get(&c.review_id)
                        .map(|r| env.analyzer.text(r))
                        .unwrap_or_default();
                    vec![
                        c.rank.to_string(),
                        format!("{:.4}", c.tfidf_score),
                        c.review_id.clone(),
                        body,
                    ]
                })
                .collect();
            text += &table(&["#", "TF-IDF", "Review", "Text"], &rows);
            complaint_rows.extend(ranked.into_iter().map(|c| ComplaintRow {
                app_id: app.clone(),
                feature_name: feature.to_string(),
                review_id: c.review_id,
                rank: c.rank,
                tfidf_score: c.tfidf_score,
            }));
        }
    }

    write_jsonl(&env.out(UFS), &env.header("ufs", &hash), &ufs_rows)?;
    write_jsonl(
        &env.out(COMPLAINTS),
        &env.header("complaints", &hash),
        &complaint_rows,
    )?;
    write_text(&env.out("rank_summary.txt"), &text)?;
    println!(
        "scored {} app(s); {} complaint(s) selected",
        apps.len(),
        complaint_rows.len()
    );
    Ok(Outcome::Done)
}
