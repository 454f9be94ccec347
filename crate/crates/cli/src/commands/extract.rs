use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use reviewlens_core::extraction::{
    restore_features, run_extraction_with, ExtractionContext, ExtractionReport, FeatureRecord,
    MergedFeatureSet, RunControl,
};

use super::{table, Env, CATALOG, CHECKPOINTS, EXTRACTION_REPORT};
use crate::artifact::{read_jsonl, write_json, write_jsonl, write_text};
use crate::{CliError, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub category: String,
    pub k: usize,
    pub batch_size: usize,
    pub batches_processed: usize,
    pub total_reviews: usize,
    pub reviews_fraction: f64,
    pub percent_of_reviews: u32,
    pub converged: bool,
    pub distinct_features: usize,
    pub catalog: Vec<String>,
}

fn checkpoint_path(dir: &Path, batch: usize) -> PathBuf {
    dir.join(format!("batch-{batch:04}.jsonl"))
}

fn load_checkpoints(
    env: &Env,
    dir: &Path,
    hash: &str,
    k: usize,
) -> Result<Vec<MergedFeatureSet>, CliError> {
    let mut history = Vec::new();
    for batch in 1.. {
        let path = checkpoint_path(dir, batch);
        if !path.exists() {
            break;
        }
        let (header, records): (_, Vec<FeatureRecord>) = read_jsonl(&path)?;
        if header.map(|h| h.inputs_sha256) != Some(hash.to_string()) {
            return Err(CliError::StaleCheckpoint(path));
        }
        let features = restore_features(&records, &env.gateway)?;
        history.push(MergedFeatureSet::new(batch, features, k));
    }
    Ok(history)
}

pub fn run(env: &Env, resume: bool, max_batches: Option<usize>) -> Result<Outcome, CliError> {
    let reviews = env.reviews()?;
    let cfg = env.cfg.extraction_config();
    let p = &env.prompts;
    let hash = env
        .base_hash()?
        .file("reviews", env.cfg.reviews_path()?)?
        .value("extraction", &cfg)
        .text("prompt", p.extraction.text())
        .text("definition", &p.feature_definition)
        .text("one_shot", &p.extraction_one_shot)
        .finish();

    let dir = env.out(CHECKPOINTS);
    let history = if resume {
        let h = load_checkpoints(env, &dir, &hash, cfg.k)?;
        log::info!("resuming after {} checkpointed batch(es)", h.len());
        h
    } else {
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|source| CliError::Io {
                path: dir.clone(),
                source,
            })?;
        }
        Vec::new()
    };

    let category = reviews.category().to_string();
    let ctx = ExtractionContext {
        config: &cfg,
        prompts: &env.prompts,
        analyzer: &env.analyzer,
        gateway: &env.gateway,
    };
    let checkpoint_header = env.header("checkpoint", &hash);
    let report = run_extraction_with(
        &reviews,
        &category,
        ctx,
        RunControl {
            resume_from: history,
            stop_after_batch: max_batches,
        },
        |merged| {
            let records: Vec<FeatureRecord> = merged.features.iter().map(|f| f.record()).collect();
            write_jsonl(
                &checkpoint_path(&dir, merged.up_to_batch),
                &checkpoint_header,
                &records,
            )
            .map_err(|e| reviewlens_core::extraction::ExtractionError::Checkpoint(e.to_string()))
        },
    )?;

    let total_batches = reviews.len().div_ceil(cfg.batch_size);
    if !report.converged && report.batches_processed < total_batches {
        for name in [CATALOG, EXTRACTION_REPORT, "extract_summary.txt"] {
            let _ = fs::remove_file(env.out(name));
        }
        println!(
            "stopped after batch {} of {total_batches}; continue with --resume",
            report.batches_processed
        );
        return Ok(Outcome::Stopped);
    }

    let records: Vec<FeatureRecord> = report.catalog.iter().map(|f| f.record()).collect();
    write_jsonl(&env.out(CATALOG), &env.header("catalog", &hash), &records)?;
    let body = report_body(&report, &category, cfg.k);
    write_json(
        &env.out(EXTRACTION_REPORT),
        &env.header("extraction_report", &hash),
        &body,
    )?;
    write_text(&env.out("extract_summary.txt"), &summary(&body, &records))?;

    println!(
        "{} features after {} batches ({}% of {} reviews); converged: {}",
        records.len(),
        report.batches_processed,
        body.percent_of_reviews,
        report.total_reviews,
        report.converged
    );
    if report.converged {
        Ok(Outcome::Done)
    } else {
        log::warn!("corpus exhausted before the top-{} features settled", cfg.k);
        Ok(Outcome::NotConverged)
    }
}

fn report_body(r: &ExtractionReport, category: &str, k: usize) -> ReportBody {
    ReportBody {
        category: category.to_string(),
        k,
        batch_size: r.batch_size,
        batches_processed: r.batches_processed,
        total_reviews: r.total_reviews,
        reviews_fraction: r.reviews_fraction,
        percent_of_reviews: r.percent_of_reviews(),
        converged: r.converged,
        distinct_features: r.distinct_features,
        catalog: r.catalog_names().into_iter().map(str::to_string).collect(),
    }
}

fn summary(body: &ReportBody, records: &[FeatureRecord]) -> String {
    let mut out = format!(
        "Feature extraction: {}\n\nBatches processed: {} x {}\nReviews used: {}% of {}\nConverged: {}\nDistinct merged features: {}\n\n",
        body.category,
        body.batches_processed,
        body.batch_size,
        body.percent_of_reviews,
        body.total_reviews,
        if body.converged { "yes" } else { "no" },
        body.distinct_features,
    );
    let rows: Vec<Vec<String>> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                (i + 1).to_string(),
                r.name.clone(),
                r.support_count.to_string(),
                r.first_seen_batch.to_string(),
                r.description.clone(),
            ]
        })
        .collect();
    out += &table(
        &["#", "Feature", "Support", "First batch", "Description"],
        &rows,
    );
    out
}
