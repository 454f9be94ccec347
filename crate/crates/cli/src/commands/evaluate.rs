use serde::{Deserialize, Serialize};

use reviewlens_core::corpus::ingest_release_notes;
use reviewlens_core::evaluation::{
    compute_sir, format_percent, propose_matches, validate_labels, MatchLabel, SirReport,
};

use super::suggest::{from_lines, SuggestionLine};
use super::{table, Env, MATCH_PROPOSALS, SIR, SUGGESTIONS};
use crate::artifact::{read_jsonl, write_json, write_jsonl, write_text};
use crate::{CliError, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirBody {
    #[serde(flatten)]
    pub report: SirReport,
    pub sir_percent: String,
}

pub fn run(env: &Env) -> Result<Outcome, CliError> {
    let suggestions_path = env.require(SUGGESTIONS, "suggest")?;
    let lines: Vec<SuggestionLine> = read_jsonl(&suggestions_path)?.1;
    let records = from_lines(lines);
    let notes_path = env
        .cfg
        .paths
        .release_notes
        .as_deref()
        .ok_or(CliError::MissingSetting("paths.release_notes"))?;
    let notes = ingest_release_notes(notes_path)?;
    if let Some(p) = &env.cfg.paths.match_labels {
        if !p.exists() {
            return Err(CliError::MissingPath(p.clone()));
        }
    }

    let mut hash = env
        .base_hash()?
        .file("suggestions", &suggestions_path)?
        .file("release_notes", notes_path)?
        .value("match_threshold", &env.cfg.evaluation.match_threshold);
    if let Some(p) = &env.cfg.paths.match_labels {
        hash = hash.file("match_labels", p)?;
    }
    let hash = hash.finish();

    let proposals = propose_matches(
        &records,
        &notes,
        env.cfg.evaluation.match_threshold,
        &env.gateway,
    )?;
    write_jsonl(
        &env.out(MATCH_PROPOSALS),
        &env.header("match_proposals", &hash),
        &proposals,
    )?;

    let total: usize = records.iter().map(|r| r.suggestions.len()).sum();
    let mut text = format!(
        "Release-note matching\n\nSuggestions: {total}\nProposed matches (similarity >= {}): {}\n",
        env.cfg.evaluation.match_threshold,
        proposals.len()
    );

    match &env.cfg.paths.match_labels {
        Some(p) => {
            let labels: Vec<MatchLabel> = read_jsonl(p)?.1;
            let labels = validate_labels(&labels, &records, &notes)?;
            let report = compute_sir(&labels)?;
            text += &format!(
                "\nSuggestions Implementation Rate: {}/{} = {}\n\n",
                report.matched_count,
                report.total_count,
                format_percent(report.sir)
            );
            let mut rows: Vec<Vec<String>> = report
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.app_id.clone().unwrap_or_default(),
                        r.feature.clone(),
                        format!("{}/{}", r.matched_count, r.total_count),
                        format_percent(r.sir),
                    ]
                })
                .collect();
            rows.push(vec![
                "Total".into(),
                String::new(),
                format!("{}/{}", report.matched_count, report.total_count),
                format_percent(report.sir),
            ]);
            text += &table(&["App", "Feature", "Matched/Total", "SIR"], &rows);
            println!(
                "SIR {}/{} = {}",
                report.matched_count,
                report.total_count,
                format_percent(report.sir)
            );
            let body = SirBody {
                sir_percent: format_percent(report.sir),
                report,
            };
            write_json(&env.out(SIR), &env.header("sir", &hash), &body)?;
        }
        None => {
            log::warn!("no match labels configured; wrote proposals only");
            text +=
                "\nNo match labels given; confirm proposals by hand and set paths.match_labels.\n";
            println!(
                "{} match proposal(s); no labels, SIR not computed",
                proposals.len()
            );
        }
    }
    write_text(&env.out("evaluate_summary.txt"), &text)?;
    Ok(Outcome::Done)
}
