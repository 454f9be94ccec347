//! Deterministic stand-ins for a language model.
//!
//! [`MockBackend`] answers each prompt family with a simple rule computed from
//! the tagged sections of the rendered prompt:
//!
//! * extraction: the `k` most frequent stems in `<reviews>` as
//!   `stem: All about stem` lines;
//! * assignment: for each `[id] text` line in `<reviews>`, the `<features>`
//!   entry whose description shares the most stems with the review (ties go
//!   to the smallest name), as `id: Name` lines;
//! * suggestion: `n` lines `Suggestion: <feature>: <first 8 tokens of
//!   candidate j>` over the `<positive_reviews>` entries.
//!
//! Embeddings are 64-bucket hashed bags of stems, L2-normalised.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest, REASK_MARKER};
use crate::corpus::{tokenize, Preprocessor};

pub const MOCK_EMBEDDING_DIM: usize = 64;

/// Failure modes used to exercise parsers and re-ask paths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockMode {
    #[default]
    Normal,
    /// Drops the last expected line.
    ShortOutput,
    /// Repeats the first line in place of all others.
    DuplicateOutput,
    /// Nothing parseable.
    Garbage,
    /// Garbage until the prompt carries the re-ask reminder.
    RecoverOnReask,
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    mode: MockMode,
    context_limit: usize,
    preprocessor: Preprocessor,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            mode: MockMode::Normal,
            context_limit: 4_000_000,
            preprocessor: Preprocessor::default(),
        }
    }

    pub fn with_mode(mut self, mode: MockMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_context_limit(mut self, tokens: usize) -> Self {
        self.context_limit = tokens;
        self
    }

    fn effective_mode(&self, prompt: &str) -> MockMode {
        match self.mode {
            MockMode::RecoverOnReask if prompt.contains(REASK_MARKER) => MockMode::Normal,
            MockMode::RecoverOnReask => MockMode::Garbage,
            m => m,
        }
    }

    fn stems(&self, text: &str) -> Vec<String> {
        self.preprocessor.preprocess(text).into_inner()
    }

    fn extraction(&self, prompt: &str, reviews: &str, mode: MockMode) -> String {
        if mode == MockMode::Garbage {
            return "Sorry, I am unable to help with this request.".into();
        }
        let k = last_count(prompt).unwrap_or(14);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for (_, text) in id_text_lines(reviews) {
            for s in self.stems(text) {
                *counts.entry(s).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let lines: Vec<String> = ranked
            .into_iter()
            .take(k)
            .map(|(s, _)| format!("{s}: All about {s}"))
            .collect();
        shape(lines, mode).join("\n")
    }

    fn assignment(&self, features: &str, reviews: &str, mode: MockMode) -> String {
        if mode == MockMode::Garbage {
            return "I cannot classify these reviews.".into();
        }
        let catalog: Vec<(String, BTreeSet<String>)> = features
            .lines()
            .filter_map(|l| {
                let l = l.trim().trim_start_matches(['-', '*']).trim();
                let (name, desc) = l.split_once(':')?;
                Some((
                    name.trim().to_string(),
                    self.stems(desc).into_iter().collect(),
                ))
            })
            .filter(|(n, _)| !n.is_empty())
            .collect();
        if catalog.is_empty() {
            return String::new();
        }
        let lines: Vec<String> = id_text_lines(reviews)
            .into_iter()
            .map(|(id, text)| {
                let stems: BTreeSet<String> = self.stems(text).into_iter().collect();
                let best = catalog
                    .iter()
                    .map(|(name, desc)| (desc.intersection(&stems).count(), name))
                    .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(a.1)))
                    .map(|(_, name)| name.clone())
                    .unwrap();
                format!("{id}: {best}")
            })
            .collect();
        shape(lines, mode).join("\n")
    }

    fn suggestion(&self, prompt: &str, mode: MockMode) -> String {
        if mode == MockMode::Garbage {
            return String::new();
        }
        let n = last_count(prompt).unwrap_or(3);
        let feature = last_block(prompt, "feature").unwrap_or("feature").trim();
        let candidates = id_text_lines(last_block(prompt, "positive_reviews").unwrap_or(""));
        if candidates.is_empty() {
            return String::new();
        }
        let lines: Vec<String> = (0..n)
            .map(|j| {
                let text = candidates[j % candidates.len()].1;
                let head: Vec<&str> = text.split_whitespace().take(8).collect();
                format!("Suggestion: {feature}: {}", head.join(" "))
            })
            .collect();
        shape(lines, mode).join("\n")
    }

    /// Hashed bag-of-stems vector. Texts with no stems fall back to raw
    /// tokens, then to the whole trimmed text; only blank text maps to zero.
    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut keys = self.stems(text);
        if keys.is_empty() {
            keys = tokenize(text).collect();
        }
        if keys.is_empty() && !text.trim().is_empty() {
            keys.push(text.trim().to_string());
        }
        let mut v = vec![0.0; MOCK_EMBEDDING_DIM];
        for k in &keys {
            v[bucket(self.seed, k)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    /// Bucket a stem lands in under this backend's seed.
    pub fn bucket_of(&self, stem: &str) -> usize {
        bucket(self.seed, stem)
    }
}

fn shape(mut lines: Vec<String>, mode: MockMode) -> Vec<String> {
    match mode {
        MockMode::ShortOutput => {
            lines.pop();
            lines
        }
        MockMode::DuplicateOutput => {
            if let Some(first) = lines.first().cloned() {
                lines.iter_mut().for_each(|l| *l = first.clone());
            }
            lines
        }
        _ => lines,
    }
}

fn bucket(seed: u64, key: &str) -> usize {
    // FNV-1a, salted with the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(key.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (h % MOCK_EMBEDDING_DIM as u64) as usize
}

fn last_block<'a>(prompt: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = prompt.rfind(&open)? + open.len();
    let end = prompt[start..].find(&close)? + start;
    Some(&prompt[start..end])
}

fn last_count(prompt: &str) -> Option<usize> {
    last_block(prompt, "count")?.trim().parse().ok()
}

fn id_text_lines(block: &str) -> Vec<(&str, &str)> {
    block
        .lines()
        .filter_map(|l| {
            let l = l.trim().strip_prefix('[')?;
            let (id, text) = l.split_once(']')?;
            Some((id.trim(), text.trim()))
        })
        .collect()
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn context_limit_tokens(&self) -> usize {
        self.context_limit
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let prompt = request.prompt.as_str();
        let mode = self.effective_mode(prompt);
        if prompt.contains("<positive_reviews>") {
            return Ok(self.suggestion(prompt, mode));
        }
        if let Some(reviews) = last_block(prompt, "reviews") {
            return Ok(match last_block(prompt, "features") {
                Some(features) => self.assignment(features, reviews, mode),
                None => self.extraction(prompt, reviews, mode),
            });
        }
        Ok(format!("mock completion {:02}", bucket(self.seed, prompt)))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Replays canned completions in order (cycling) and records every prompt.
/// Embeddings come from a seed-0 [`MockBackend`].
#[derive(Debug)]
pub struct ScriptedBackend {
    responses: Vec<String>,
    next: AtomicUsize,
    prompts: Mutex<Vec<String>>,
    embedder: MockBackend,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        let responses: Vec<String> = responses.into_iter().map(Into::into).collect();
        assert!(
            !responses.is_empty(),
            "ScriptedBackend needs at least one response"
        );
        Self {
            responses,
            next: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
            embedder: MockBackend::new(0),
        }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn context_limit_tokens(&self) -> usize {
        usize::MAX
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        let i = self.next.fetch_add(1, Ordering::SeqCst) % self.responses.len();
        Ok(self.responses[i].clone())
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.embedder.embed(texts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{cosine_similarity, EmbeddingVector, Gateway};

    fn complete(backend: &MockBackend, prompt: &str) -> String {
        let req = GenerationRequest {
            prompt: prompt.into(),
            max_output_tokens: 100,
            temperature: 0.0,
            seed: None,
        };
        backend.complete(&req).unwrap()
    }

    #[test]
    fn extraction_returns_top_stems() {
        let b = MockBackend::new(1);
        let prompt = "top <count>2</count>\n<reviews>\n[r1] Ads and crashes\n[r2] crash after ads\n[r3] ads radar\n</reviews>";
        assert_eq!(
            complete(&b, prompt),
            "ad: All about ad\ncrash: All about crash"
        );
    }

    #[test]
    fn assignment_picks_best_overlap_then_name() {
        let b = MockBackend::new(1);
        let prompt = "<features>\n- Radar: radar maps\n- Ads: ads shown\n- Zoom: nothing here\n</features>\n\
                      <reviews>\n[a] the radar map is slow\n[b] too many ads\n[c] battery\n</reviews>";
        assert_eq!(complete(&b, prompt), "a: Radar\nb: Ads\nc: Ads");
    }

    #[test]
    fn suggestion_lines_follow_candidates() {
        let b = MockBackend::new(1);
        let prompt = "<feature>Radar</feature> <count>3</count>\n<positive_reviews>\n\
                      [p1] one two three four five six seven eight nine\n[p2] radar is great\n</positive_reviews>";
        let out = complete(&b, prompt);
        assert_eq!(
            out.lines().collect::<Vec<_>>(),
            [
                "Suggestion: Radar: one two three four five six seven eight",
                "Suggestion: Radar: radar is great",
                "Suggestion: Radar: one two three four five six seven eight",
            ]
        );
        let short = MockBackend::new(1).with_mode(MockMode::ShortOutput);
        assert_eq!(complete(&short, prompt).lines().count(), 2);
        let recover = MockBackend::new(1).with_mode(MockMode::RecoverOnReask);
        assert_eq!(complete(&recover, prompt), "");
        assert_eq!(
            complete(&recover, &format!("{prompt}\n{REASK_MARKER}"))
                .lines()
                .count(),
            3
        );
    }

    #[test]
    fn mock_is_deterministic() {
        let gw = Gateway::mock(9);
        let req = gw.request("hello there");
        assert_eq!(gw.generate(&req).unwrap(), gw.generate(&req).unwrap());
        let a = gw.embed(&["x".into()]).unwrap();
        let b = gw.embed(&["x".into(), "x".into()]).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(b[0], b[1]);
        assert_eq!(a[0].dimension(), MOCK_EMBEDDING_DIM);
    }

    #[test]
    fn embeddings_are_unit_and_nonzero() {
        let b = MockBackend::new(3);
        for text in ["radar", "The", "!!!", "a b c radar radar"] {
            let v = EmbeddingVector::new(b.embed_text(text));
            assert!((v.norm() - 1.0).abs() < 1e-12, "{text}");
        }
        assert!(EmbeddingVector::new(b.embed_text("  ")).is_zero());
        let same = cosine_similarity(
            &EmbeddingVector::new(b.embed_text("Radar maps")),
            &EmbeddingVector::new(b.embed_text("radar map")),
        )
        .unwrap();
        assert!((same - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scripted_cycles_and_records() {
        let s = ScriptedBackend::new(["a", "b"]);
        let req = |p: &str| GenerationRequest {
            prompt: p.into(),
            max_output_tokens: 1,
            temperature: 0.0,
            seed: None,
        };
        let out: Vec<_> = ["1", "2", "3"]
            .iter()
            .map(|p| s.complete(&req(p)).unwrap())
            .collect();
        assert_eq!(out, ["a", "b", "a"]);
        assert_eq!(s.prompts(), ["1", "2", "3"]);
    }
}
