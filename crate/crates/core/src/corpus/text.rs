//! Tokenization, stop-word removal and dictionary lemmatization.
//!
//! Both the stop-word list and the lemma lexicon are vendored assets, so the
//! token stream for a given input never changes between machines or runs.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

/// Version tag of the vendored lemma lexicon. Bump when the asset changes.
pub const LEXICON_VERSION: &str = "en-lemmas-v1";

const LEXICON_TSV: &str = include_str!("../../assets/lexicon/en-lemmas.tsv");

/// Fixed English stop-word list (179 entries).
pub const STOP_WORDS: &[&str] = &[
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've",
    "you'll", "you'd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself",
    "she", "she's", "her", "hers", "herself", "it", "it's", "its", "itself", "they", "them",
    "their", "theirs", "themselves", "what", "which", "who", "whom", "this", "that", "that'll",
    "these", "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has",
    "had", "having", "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or",
    "because", "as", "until", "while", "of", "at", "by", "for", "with", "about", "against",
    "between", "into", "through", "during", "before", "after", "above", "below", "to", "from",
    "up", "down", "in", "out", "on", "off", "over", "under", "again", "further", "then", "once",
    "here", "there", "when", "where", "why", "how", "all", "any", "both", "each", "few", "more",
    "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than",
    "too", "very", "s", "t", "can", "will", "just", "don", "don't", "should", "should've", "now",
    "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't", "didn",
    "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn", "hasn't", "haven", "haven't", "isn",
    "isn't", "ma", "mightn", "mightn't", "mustn", "mustn't", "needn", "needn't", "shan",
    "shan't", "shouldn", "shouldn't", "wasn", "wasn't", "weren", "weren't", "won", "won't",
    "wouldn", "wouldn't",
];

fn stop_words() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOP_WORDS.iter().copied().collect())
}

pub fn is_stop_word(word: &str) -> bool {
    stop_words().contains(word)
}

/// Inflected form to lemma lookup backed by the vendored lexicon.
#[derive(Debug)]
pub struct Lemmatizer {
    table: HashMap<&'static str, &'static str>,
}

impl Lemmatizer {
    /// Shared instance over the vendored lexicon.
    pub fn english() -> &'static Lemmatizer {
        static LEMMATIZER: OnceLock<Lemmatizer> = OnceLock::new();
        LEMMATIZER.get_or_init(|| {
            let table = LEXICON_TSV
                .lines()
                .filter(|line| !line.starts_with('#') && !line.is_empty())
                .filter_map(|line| line.split_once('\t'))
                .collect();
            Lemmatizer { table }
        })
    }

    /// Lemma for a lowercase word. Words outside the lexicon are their own lemma.
    pub fn lemma<'a>(&'a self, word: &'a str) -> &'a str {
        self.table.get(word).copied().unwrap_or(word)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Lowercase word tokens split on every non-alphanumeric character.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Lowercase lemmas of `text` with stop words and special characters removed.
pub fn preprocess_tokens(text: &str) -> Vec<String> {
    let stops = stop_words();
    let lemmatizer = Lemmatizer::english();
    word_tokens(text)
        .into_iter()
        .filter(|t| !stops.contains(t.as_str()))
        .map(|t| lemmatizer.lemma(&t).to_string())
        .filter(|l| !stops.contains(l.as_str()))
        .collect()
}
