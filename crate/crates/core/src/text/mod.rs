//! Tokenization and description cleanup.

mod porter;

use std::collections::HashSet;
use std::sync::OnceLock;

pub use porter::stem_once;

static STOPWORD_LIST: &str = include_str!("stopwords.txt");

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORD_LIST.lines().filter(|l| !l.is_empty()).collect())
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Porter stem applied until it reaches a fixed point. A single Porter pass
/// is not idempotent (`agreed` → `agre` → `agr`).
pub fn stem(token: &str) -> String {
    let mut current = token.to_string();
    loop {
        let next = stem_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Tokenizes, drops stopwords and stems. Stems that collide with a stopword
/// (`ones` → `on`) are dropped too, so the output is a fixed point of this
/// function.
pub fn clean_text(raw: &str) -> Vec<String> {
    tokenize(raw)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .map(|t| stem(&t))
        .filter(|t| !is_stopword(t))
        .collect()
}
