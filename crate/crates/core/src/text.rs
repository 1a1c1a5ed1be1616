//! Tokenization and IDF weights for lexical matching.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

use crate::error::{Error, Result};

pub const DEFAULT_OOV_IDF: f64 = 1.5;

pub(crate) const DEFAULT_IDF_TSV: &str = include_str!("../data/idf_default.tsv");

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "either",
    "else", "ever", "every", "few", "for", "from", "further", "get", "gets", "got", "had", "has",
    "have", "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i",
    "if", "in", "into", "is", "it", "its", "itself", "just", "let", "may", "me", "might", "more",
    "most", "much", "must", "my", "myself", "neither", "no", "nor", "not", "now", "of", "off",
    "often", "on", "once", "only", "or", "other", "ought", "our", "ours", "ourselves", "out",
    "over", "own", "same", "shall", "she", "should", "since", "so", "some", "such", "than",
    "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they",
    "this", "those", "through", "thus", "to", "too", "under", "until", "up", "upon", "us", "very",
    "was", "we", "were", "what", "when", "where", "whether", "which", "while", "who", "whom",
    "whose", "why", "will", "with", "within", "without", "would", "yet", "you", "your", "yours",
    "yourself", "yourselves", "s", "t", "don", "doesn", "didn", "isn", "wasn", "aren", "weren",
    "won", "can't", "cannot", "via", "per", "among", "amongst", "around", "across", "along",
];

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.iter().copied().collect())
}

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

pub fn is_stopword(word: &str) -> bool {
    stopwords().contains(word)
}

/// Lowercased alphanumeric words, in order, stopwords removed (no stemming).
pub fn content_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !is_stopword(w))
        .collect()
}

/// Content words reduced to their stems.
pub fn tokenize(text: &str) -> Vec<String> {
    let stem = stemmer();
    content_words(text)
        .into_iter()
        .map(|w| stem.stem(&w).into_owned())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    weights: HashMap<String, f64>,
    default_idf: f64,
}

impl Default for IdfTable {
    fn default() -> Self {
        Self::from_tsv(DEFAULT_IDF_TSV, DEFAULT_OOV_IDF).expect("bundled IDF table is well formed")
    }
}

impl IdfTable {
    pub fn empty(default_idf: f64) -> Self {
        Self {
            weights: HashMap::new(),
            default_idf,
        }
    }

    /// Parses `term<TAB>weight` lines. Blank lines and `#` comments are skipped;
    /// terms are stemmed so lookups agree with [`tokenize`].
    pub fn from_tsv(text: &str, default_idf: f64) -> Result<Self> {
        if !(default_idf > 0.0) {
            return Err(Error::Config(format!("default idf must be positive, got {default_idf}")));
        }
        let mut table = Self::empty(default_idf);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (term, weight) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("idf line {}: expected term<TAB>weight", lineno + 1)))?;
            let weight: f64 = weight
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("idf line {}: bad weight {weight:?}", lineno + 1)))?;
            table.insert(term, weight)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path, default_idf: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, default_idf)
    }

    pub fn insert(&mut self, term: &str, weight: f64) -> Result<()> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Config(format!("idf weight for {term:?} must be positive")));
        }
        let key = tokenize(term)
            .into_iter()
            .next()
            .unwrap_or_else(|| term.to_lowercase());
        self.weights.insert(key, weight);
        Ok(())
    }

    pub fn default_idf(&self) -> f64 {
        self.default_idf
    }

    /// Weight of an already stemmed token.
    pub fn idf(&self, stem: &str) -> f64 {
        self.weights.get(stem).copied().unwrap_or(self.default_idf)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}
