//! Tokenization, vocabulary construction and sparse count vectors.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::BugReport;

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Error)]
pub enum TextError {
    #[error("every token list is empty")]
    NoTokens,
    #[error("empty vocabulary")]
    EmptyVocabulary,
    #[error("tokenizer must use at least one field")]
    NoFields,
    #[error("min_token_length must be at least 1")]
    ZeroTokenLength,
    #[error("malformed vocabulary file at line {line}: {reason}")]
    MalformedVocabulary { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Summary,
    Description,
    Product,
    Component,
}

impl Field {
    fn is_categorical(self) -> bool {
        matches!(self, Field::Product | Field::Component)
    }

    fn prefix(self) -> &'static str {
        match self {
            Field::Summary => "summary",
            Field::Description => "description",
            Field::Product => "product",
            Field::Component => "component",
        }
    }

    pub fn value(self, report: &BugReport) -> &str {
        match self {
            Field::Summary => &report.summary,
            Field::Description => &report.description,
            Field::Product => &report.product,
            Field::Component => &report.component,
        }
    }
}

/// Parses a one-word-per-line stop-word list. Blank lines and `#` comments
/// are skipped; entries are lowercased.
pub fn parse_stopwords<R: Read>(source: R) -> Result<BTreeSet<String>, TextError> {
    let mut words = BTreeSet::new();
    for line in BufReader::new(source).lines() {
        let line = line?;
        let word = line.trim();
        if word.is_empty() || word.starts_with('#') {
            continue;
        }
        words.insert(word.to_lowercase());
    }
    Ok(words)
}

/// The English list shipped with the crate.
pub fn bundled_stopwords() -> BTreeSet<String> {
    parse_stopwords(BUNDLED_STOPWORDS.as_bytes()).expect("bundled list is valid utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub remove_stopwords: bool,
    pub stopwords: BTreeSet<String>,
    pub min_token_length: usize,
    pub fields: Vec<Field>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            remove_stopwords: true,
            stopwords: bundled_stopwords(),
            min_token_length: 2,
            fields: vec![Field::Summary, Field::Description, Field::Component],
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<(), TextError> {
        if self.fields.is_empty() {
            return Err(TextError::NoFields);
        }
        if self.min_token_length == 0 {
            return Err(TextError::ZeroTokenLength);
        }
        Ok(())
    }

    fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token) || self.stopwords.contains(&token.to_lowercase())
    }
}

/// Splits the configured fields into tokens.
///
/// Free text is cut on every non-alphanumeric character (Unicode-aware,
/// digits kept). Product and component values are emitted whole as a single
/// `field:value` token; the `:` cannot occur in a free-text token, so these
/// never collide with words from the summary or description. Stop-word and
/// length filters only apply to free text.
pub fn tokenize(report: &BugReport, config: &TokenizerConfig) -> Vec<String> {
    let mut tokens = Vec::new();
    for &field in &config.fields {
        let text = field.value(report);
        if field.is_categorical() {
            let value = text.trim();
            if value.is_empty() {
                continue;
            }
            let value = if config.lowercase {
                value.to_lowercase()
            } else {
                value.to_string()
            };
            tokens.push(format!("{}:{}", field.prefix(), value));
            continue;
        }
        for piece in text.split(|c: char| !c.is_alphanumeric()) {
            if piece.chars().count() < config.min_token_length {
                continue;
            }
            if config.remove_stopwords && config.is_stopword(piece) {
                continue;
            }
            tokens.push(if config.lowercase {
                piece.to_lowercase()
            } else {
                piece.to_string()
            });
        }
    }
    tokens
}

/// Raw text handed to external classifiers: summary, description and
/// component joined by newlines, untouched otherwise.
pub fn raw_text(report: &BugReport) -> String {
    format!("{}\n{}\n{}", report.summary, report.description, report.component)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct VocabEntry {
    token: String,
    index: u32,
    doc_freq: u32,
}

/// Token/index bijection with indices assigned in lexicographic token order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    doc_freq: Vec<u32>,
    min_count: u32,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    pub fn doc_freq(&self, index: u32) -> Option<u32> {
        self.doc_freq.get(index as usize).copied()
    }

    pub fn min_count(&self) -> u32 {
        self.min_count
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// JSONL, one `{token, index, doc_freq}` object per line in index order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TextError> {
        for (i, token) in self.tokens.iter().enumerate() {
            let entry = VocabEntry {
                token: token.clone(),
                index: i as u32,
                doc_freq: self.doc_freq[i],
            };
            serde_json::to_writer(&mut out, &entry)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: Read>(source: R, min_count: u32) -> Result<Vocabulary, TextError> {
        let mut tokens = Vec::new();
        let mut doc_freq = Vec::new();
        let mut index = HashMap::new();
        for (line_no, line) in BufReader::new(source).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| TextError::MalformedVocabulary {
                line: line_no + 1,
                reason,
            };
            let entry: VocabEntry = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            if entry.index as usize != tokens.len() {
                return Err(bad(format!("expected index {}, found {}", tokens.len(), entry.index)));
            }
            if index.insert(entry.token.clone(), entry.index).is_some() {
                return Err(bad(format!("duplicate token `{}`", entry.token)));
            }
            tokens.push(entry.token);
            doc_freq.push(entry.doc_freq);
        }
        if tokens.is_empty() {
            return Err(TextError::EmptyVocabulary);
        }
        Ok(Vocabulary {
            tokens,
            index,
            doc_freq,
            min_count,
        })
    }

    /// SHA-256 over the JSONL form.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

/// Keeps tokens that occur in at least `min_count` documents.
pub fn build_vocabulary<S: AsRef<str>>(
    docs: &[Vec<S>],
    min_count: u32,
) -> Result<Vocabulary, TextError> {
    if docs.iter().all(|d| d.is_empty()) {
        return Err(TextError::NoTokens);
    }
    let mut df: BTreeMap<&str, u32> = BTreeMap::new();
    for doc in docs {
        let unique: HashSet<&str> = doc.iter().map(AsRef::as_ref).collect();
        for token in unique {
            *df.entry(token).or_default() += 1;
        }
    }
    let min_count = min_count.max(1);
    let mut tokens = Vec::new();
    let mut doc_freq = Vec::new();
    let mut index = HashMap::new();
    for (token, count) in df.into_iter().filter(|&(_, c)| c >= min_count) {
        index.insert(token.to_string(), tokens.len() as u32);
        tokens.push(token.to_string());
        doc_freq.push(count);
    }
    if tokens.is_empty() {
        return Err(TextError::EmptyVocabulary);
    }
    Ok(Vocabulary {
        tokens,
        index,
        doc_freq,
        min_count,
    })
}

/// Sparse term counts: strictly increasing indices, every count ≥ 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CountVector {
    entries: Vec<(u32, u32)>,
    total: u64,
}

impl CountVector {
    /// Builds from arbitrary `(index, count)` pairs; duplicates are summed
    /// and zero counts dropped.
    pub fn from_pairs<I: IntoIterator<Item = (u32, u32)>>(pairs: I) -> CountVector {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for (idx, c) in pairs {
            if c > 0 {
                *counts.entry(idx).or_default() += c;
            }
        }
        let total = counts.values().map(|&c| c as u64).sum();
        CountVector {
            entries: counts.into_iter().collect(),
            total,
        }
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Every count multiplied by `factor`.
    pub fn scaled(&self, factor: u32) -> CountVector {
        CountVector::from_pairs(self.entries.iter().map(|&(i, c)| (i, c * factor)))
    }

    /// Expands back into one index per token occurrence.
    pub fn expand(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries
            .iter()
            .flat_map(|&(i, c)| std::iter::repeat(i).take(c as usize))
    }
}

/// Counts in-vocabulary tokens; unknown tokens are dropped.
pub fn vectorize<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> CountVector {
    CountVector::from_pairs(
        tokens
            .iter()
            .filter_map(|t| vocab.index_of(t.as_ref()))
            .map(|i| (i, 1)),
    )
}
