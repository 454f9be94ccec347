use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{CorpusError, ReleaseNote, Review, ReviewSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReviewFormat {
    Jsonl,
    Csv,
}

impl ReviewFormat {
    /// Guess from a file extension; anything other than `.csv` is jsonl.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => ReviewFormat::Csv,
            _ => ReviewFormat::Jsonl,
        }
    }
}

impl FromStr for ReviewFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" | "json" => Ok(ReviewFormat::Jsonl),
            "csv" => Ok(ReviewFormat::Csv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawReview {
    id: String,
    app_id: String,
    category: String,
    #[serde(default)]
    title: Option<String>,
    body: String,
    rating: i64,
    posted_at: String,
}

#[derive(Debug, Deserialize)]
struct RawNote {
    app_id: String,
    version: String,
    released_at: String,
    text: String,
}

fn parse_date(line: usize, value: &str) -> Result<NaiveDate, CorpusError> {
    let trimmed = value.trim();
    // Accept full timestamps but keep only the day.
    let day = trimmed.get(..10).unwrap_or(trimmed);
    NaiveDate::parse_from_str(day, "%Y-%m-%d").map_err(|_| CorpusError::InvalidDate {
        line,
        value: value.to_string(),
    })
}

fn open(path: &Path) -> Result<File, CorpusError> {
    File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn ingest_reviews(path: &Path, format: ReviewFormat) -> Result<ReviewSet, CorpusError> {
    let file = open(path)?;
    read_reviews(BufReader::new(file), format).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Parse reviews, keeping records in input order.
pub fn read_reviews<R: Read>(reader: R, format: ReviewFormat) -> Result<ReviewSet, CorpusError> {
    let raw = match format {
        ReviewFormat::Jsonl => read_jsonl::<RawReview, _>(BufReader::new(reader))?,
        ReviewFormat::Csv => read_csv::<RawReview, _>(reader)?,
    };
    if raw.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }

    let mut reviews = Vec::with_capacity(raw.len());
    let mut ids = HashSet::with_capacity(raw.len());
    let mut category: Option<String> = None;
    for (line, r) in raw {
        if !(1..=5).contains(&r.rating) {
            return Err(CorpusError::InvalidRating {
                line,
                rating: r.rating,
            });
        }
        if r.body.trim().is_empty() {
            return Err(CorpusError::EmptyBody { line });
        }
        if !ids.insert(r.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: r.id });
        }
        match &category {
            None => category = Some(r.category.clone()),
            Some(expected) if *expected != r.category => {
                return Err(CorpusError::CategoryMismatch {
                    line,
                    expected: expected.clone(),
                    found: r.category,
                })
            }
            Some(_) => {}
        }
        let posted_at = parse_date(line, &r.posted_at)?;
        reviews.push(Review {
            id: r.id,
            app_id: r.app_id,
            category: r.category,
            title: r.title.filter(|t| !t.trim().is_empty()),
            body: r.body,
            rating: r.rating as u8,
            posted_at,
        });
    }
    ReviewSet::new(reviews)
}

pub fn ingest_release_notes(path: &Path) -> Result<Vec<ReleaseNote>, CorpusError> {
    let file = open(path)?;
    let format = ReviewFormat::from_path(path);
    read_release_notes(BufReader::new(file), format)
}

pub fn read_release_notes<R: Read>(
    reader: R,
    format: ReviewFormat,
) -> Result<Vec<ReleaseNote>, CorpusError> {
    let raw = match format {
        ReviewFormat::Jsonl => read_jsonl::<RawNote, _>(BufReader::new(reader))?,
        ReviewFormat::Csv => read_csv::<RawNote, _>(reader)?,
    };
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    let mut notes = Vec::with_capacity(raw.len());
    for (line, n) in raw {
        if n.text.trim().is_empty() {
            return Err(CorpusError::EmptyNote { line });
        }
        if seen
            .insert((n.app_id.clone(), n.version.clone()), line)
            .is_some()
        {
            return Err(CorpusError::DuplicateRelease {
                line,
                app_id: n.app_id,
                version: n.version,
            });
        }
        notes.push(ReleaseNote {
            released_at: parse_date(line, &n.released_at)?,
            app_id: n.app_id,
            version: n.version,
            text: n.text,
        });
    }
    Ok(notes)
}

fn read_jsonl<T, R>(reader: R) -> Result<Vec<(usize, T)>, CorpusError>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: Default::default(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

fn read_csv<T, R>(reader: R) -> Result<Vec<(usize, T)>, CorpusError>
where
    T: for<'de> Deserialize<'de>,
    R: Read,
{
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(reader);
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    loop {
        let line = rdr.position().line() as usize;
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map(|p| p.line() as usize).unwrap_or(line);
                let row: T =
                    record
                        .deserialize(Some(&headers))
                        .map_err(|e| CorpusError::Malformed {
                            line,
                            message: e.to_string(),
                        })?;
                out.push((line, row));
            }
            Err(e) => {
                let line = e
                    .position()
                    .map(|p| p.line() as usize)
                    .unwrap_or(line.max(1));
                return Err(CorpusError::Malformed {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}
