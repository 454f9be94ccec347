use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Review};

const ENGLISH_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// Words dropped before stemming.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    /// The bundled English list.
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOPWORDS)
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// One word per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        fs::read_to_string(path)
            .map(|t| Self::parse(&t))
            .map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for StopWords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

/// Lowercase word stems with stop words removed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenList(Vec<String>);

impl TokenList {
    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    pub fn join(&self, sep: &str) -> String {
        self.0.join(sep)
    }
}

impl Deref for TokenList {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

impl From<TokenList> for Vec<String> {
    fn from(t: TokenList) -> Self {
        t.0
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Tokenize, drop stop words, Porter-stem.
pub fn preprocess(text: &str, stopwords: &StopWords) -> TokenList {
    stem_filtered(tokenize(text), stopwords)
}

fn stem_filtered(tokens: impl Iterator<Item = String>, stopwords: &StopWords) -> TokenList {
    TokenList(
        tokens
            .filter(|t| !stopwords.contains(t))
            .map(|t| porter_stemmer::stem(&t))
            // a stem can collide with a stop word ("doing" -> "do")
            .filter(|s| !s.is_empty() && !stopwords.contains(s))
            .collect(),
    )
}

/// Edit-distance-1 corrector over a user dictionary.
///
/// Dictionary lines are `word` or `word count`; with counts the most
/// frequent candidate wins, otherwise the lexicographically smallest.
#[derive(Debug, Clone, Default)]
pub struct SpellChecker {
    words: HashMap<String, u64>,
}

impl SpellChecker {
    pub fn parse(text: &str) -> Self {
        let mut words = HashMap::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap().to_lowercase();
            let count = parts.next().and_then(|c| c.parse().ok()).unwrap_or(1);
            *words.entry(word).or_insert(0) += count;
        }
        Self { words }
    }

    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        fs::read_to_string(path)
            .map(|t| Self::parse(&t))
            .map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn correct(&self, word: &str) -> String {
        if self.words.contains_key(word)
            || word.chars().any(|c| c.is_ascii_digit() || !c.is_ascii())
        {
            return word.to_string();
        }
        edits1(word)
            .into_iter()
            .filter_map(|w| self.words.get(&w).map(|&n| (n, w)))
            .max_by(|(na, wa), (nb, wb)| na.cmp(nb).then_with(|| wb.cmp(wa)))
            .map(|(_, w)| w)
            .unwrap_or_else(|| word.to_string())
    }
}

fn edits1(word: &str) -> BTreeSet<String> {
    const LETTERS: &str = "abcdefghijklmnopqrstuvwxyz";
    let chars: Vec<char> = word.chars().collect();
    let mut out = BTreeSet::new();
    for i in 0..=chars.len() {
        let (left, right) = chars.split_at(i);
        let left: String = left.iter().collect();
        if !right.is_empty() {
            out.insert(format!("{left}{}", right[1..].iter().collect::<String>()));
        }
        if right.len() > 1 {
            out.insert(format!(
                "{left}{}{}{}",
                right[1],
                right[0],
                right[2..].iter().collect::<String>()
            ));
        }
        for c in LETTERS.chars() {
            if !right.is_empty() {
                out.insert(format!(
                    "{left}{c}{}",
                    right[1..].iter().collect::<String>()
                ));
            }
            out.insert(format!("{left}{c}{}", right.iter().collect::<String>()));
        }
    }
    out.remove(word);
    out
}

/// Stop words plus the optional spell-check pass.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    stopwords: StopWords,
    spell: Option<SpellChecker>,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::new(StopWords::english())
    }
}

impl Preprocessor {
    pub fn new(stopwords: StopWords) -> Self {
        Self {
            stopwords,
            spell: None,
        }
    }

    pub fn with_spell_checker(mut self, spell: SpellChecker) -> Self {
        self.spell = Some(spell);
        self
    }

    pub fn stopwords(&self) -> &StopWords {
        &self.stopwords
    }

    pub fn preprocess(&self, text: &str) -> TokenList {
        match &self.spell {
            None => stem_filtered(tokenize(text), &self.stopwords),
            Some(spell) => {
                stem_filtered(tokenize(text).map(|t| spell.correct(&t)), &self.stopwords)
            }
        }
    }
}

/// Turns reviews into token lists with a fixed title policy.
#[derive(Debug, Clone)]
pub struct Analyzer {
    pub preprocessor: Preprocessor,
    pub concat_title: bool,
}

impl Default for Analyzer {
    fn default() -> Self {
        Self::new(Preprocessor::default(), true)
    }
}

impl Analyzer {
    pub fn new(preprocessor: Preprocessor, concat_title: bool) -> Self {
        Self {
            preprocessor,
            concat_title,
        }
    }

    pub fn text(&self, review: &Review) -> String {
        review.text(self.concat_title)
    }

    pub fn tokens(&self, review: &Review) -> TokenList {
        self.preprocessor
            .preprocess(&review.text(self.concat_title))
    }
}
