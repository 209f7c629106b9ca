//! Pretrained word-embedding tables, phrase vectors and cosine similarity.
//!
//! The on-disk format is plain text: one `token f1 f2 ... fD` record per line,
//! fields separated by a single ASCII space. Tokens are lowercased on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text;

/// Immutable token → vector store.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    entries: BTreeMap<String, Vec<f64>>,
    /// Stem → mean vector of every table token with that stem, for stems that
    /// are not table tokens themselves. Lets cleaned (stemmed) text hit the table.
    stem_aliases: BTreeMap<String, Vec<f64>>,
    duplicates: usize,
}

/// Unit-norm mean of the in-vocabulary token vectors of a phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseVector {
    pub vector: Vec<f64>,
    pub covered_tokens: usize,
    pub skipped_tokens: usize,
}

impl EmbeddingTable {
    /// Builds a table from `(token, vector)` pairs. Later duplicates replace
    /// earlier ones and are counted in [`EmbeddingTable::duplicates`].
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut dimension = None;
        let mut map = BTreeMap::new();
        let mut duplicates = 0;
        for (idx, (token, vector)) in entries.into_iter().enumerate() {
            let token = token.as_ref().to_lowercase();
            validate_entry(&token, &vector, &mut dimension)
                .map_err(|msg| Error::format("<memory>", idx + 1, msg))?;
            if map.insert(token, vector).is_some() {
                duplicates += 1;
            }
        }
        let dimension = dimension.ok_or_else(|| Error::format("<memory>", 0, "no entries"))?;
        Ok(Self::assemble(dimension, map, duplicates))
    }

    fn assemble(dimension: usize, entries: BTreeMap<String, Vec<f64>>, duplicates: usize) -> Self {
        let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        for (token, vector) in &entries {
            let stem = text::stem(token);
            if entries.contains_key(&stem) {
                continue;
            }
            let slot = sums
                .entry(stem)
                .or_insert_with(|| (vec![0.0; dimension], 0));
            for (acc, x) in slot.0.iter_mut().zip(vector) {
                *acc += x;
            }
            slot.1 += 1;
        }
        let stem_aliases = sums
            .into_iter()
            .filter_map(|(stem, (sum, n))| {
                let mean: Vec<f64> = sum.into_iter().map(|x| x / n as f64).collect();
                // opposing vectors can cancel; a zero alias would break cosine
                (norm(&mean) > 0.0).then_some((stem, mean))
            })
            .collect();
        EmbeddingTable {
            dimension,
            entries,
            stem_aliases,
            duplicates,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of duplicate tokens replaced while loading.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    /// Exact token lookup.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    /// Exact lookup, falling back to the stem alias table.
    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.get(token)
            .or_else(|| self.stem_aliases.get(token).map(Vec::as_slice))
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

fn validate_entry(
    token: &str,
    vector: &[f64],
    dimension: &mut Option<usize>,
) -> std::result::Result<(), String> {
    if token.is_empty() {
        return Err("empty token".into());
    }
    if vector.is_empty() {
        return Err(format!("token {token:?} has no vector components"));
    }
    match *dimension {
        None => *dimension = Some(vector.len()),
        Some(d) if d != vector.len() => {
            return Err(format!(
                "inconsistent arity: expected {d} floats, found {}",
                vector.len()
            ))
        }
        Some(_) => {}
    }
    if vector.iter().any(|x| !x.is_finite()) {
        return Err(format!("non-finite component for token {token:?}"));
    }
    if vector.iter().all(|&x| x == 0.0) {
        return Err(format!("zero vector for token {token:?}"));
    }
    Ok(())
}

/// Loads a plain-text embedding file.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&content, &path.display().to_string())
}

/// Parses the embedding text format; `origin` names the source in errors.
pub fn parse_embeddings(content: &str, origin: &str) -> Result<EmbeddingTable> {
    let mut dimension = None;
    let mut entries = BTreeMap::new();
    let mut duplicates = 0;
    for (idx, line) in content.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default().to_lowercase();
        let vector = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::format(origin, lineno, format!("invalid float {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        validate_entry(&token, &vector, &mut dimension)
            .map_err(|msg| Error::format(origin, lineno, msg))?;
        if entries.insert(token, vector).is_some() {
            duplicates += 1;
        }
    }
    let dimension = dimension.ok_or_else(|| Error::format(origin, 0, "no entries"))?;
    if duplicates > 0 {
        log::warn!("source={origin} duplicate_tokens={duplicates} policy=last_wins");
    }
    Ok(EmbeddingTable::assemble(dimension, entries, duplicates))
}

/// Averages the vectors of the in-vocabulary tokens and normalizes the mean.
/// Out-of-vocabulary tokens are skipped and counted.
pub fn phrase_vector<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> Result<PhraseVector> {
    let mut sum = vec![0.0; table.dimension()];
    let mut covered = 0;
    for token in tokens {
        if let Some(v) = table.lookup(token.as_ref()) {
            for (acc, x) in sum.iter_mut().zip(v) {
                *acc += x;
            }
            covered += 1;
        }
    }
    let joined = || {
        tokens
            .iter()
            .map(|t| t.as_ref())
            .collect::<Vec<_>>()
            .join(" ")
    };
    if covered == 0 {
        return Err(Error::Coverage(joined()));
    }
    let n = norm(&sum);
    if n == 0.0 {
        // token vectors cancelled exactly; there is no direction to report
        return Err(Error::Coverage(joined()));
    }
    let vector = sum.into_iter().map(|x| x / n).collect();
    Ok(PhraseVector {
        vector,
        covered_tokens: covered,
        skipped_tokens: tokens.len() - covered,
    })
}

/// Tokenizes free text and returns its phrase vector.
pub fn phrase_vector_text(text: &str, table: &EmbeddingTable) -> Result<PhraseVector> {
    phrase_vector(&text::tokenize(text), table)
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity clamped into `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::domain(format!(
            "cosine of vectors with dimensions {} and {}",
            u.len(),
            v.len()
        )));
    }
    let uu = dot(u, u);
    let vv = dot(v, v);
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::domain("cosine of a zero vector"));
    }
    // sqrt of the product keeps cosine(v, v) at exactly 1
    Ok((dot(u, v) / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy() -> EmbeddingTable {
        parse_embeddings("dog 1 0 0\nshow 0 1 0\n", "toy").unwrap()
    }

    #[test]
    fn loads_toy_table() {
        let t = toy();
        assert_eq!(t.dimension(), 3);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("dog"), Some(&[1.0, 0.0, 0.0][..]));
    }

    #[test]
    fn rejects_inconsistent_arity_with_line_number() {
        let err = parse_embeddings("dog 1 0 0\nshow 0 1\n", "bad").unwrap_err();
        match err {
            Error::Format { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("arity"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_file() {
        let err = parse_embeddings("", "empty").unwrap_err();
        assert!(err.to_string().contains("no entries"));
    }

    #[test]
    fn rejects_zero_vector() {
        let err = parse_embeddings("dog 1 0\ncat 0 0\n", "zero").unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(parse_embeddings("dog 1 NaN\n", "nan").is_err());
        assert!(parse_embeddings("dog 1 x\n", "junk").is_err());
    }

    #[test]
    fn duplicate_tokens_last_wins() {
        let t = parse_embeddings("dog 1 0\nDog 0 1\n", "dup").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.duplicates(), 1);
        assert_eq!(t.get("dog"), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn accepts_scientific_notation() {
        let t = parse_embeddings("dog 1e-3 2.5E2\n", "sci").unwrap();
        assert_eq!(t.get("dog"), Some(&[1e-3, 250.0][..]));
    }

    #[test]
    fn phrase_dog_show() {
        let p = phrase_vector(&["dog", "show"], &toy()).unwrap();
        assert_eq!(p.covered_tokens, 2);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(p.vector[0], h, epsilon = 1e-12);
        assert_abs_diff_eq!(p.vector[1], h, epsilon = 1e-12);
        assert_eq!(p.vector[2], 0.0);
    }

    #[test]
    fn phrase_single_token_is_identity() {
        let p = phrase_vector(&["dog"], &toy()).unwrap();
        assert_eq!(p.vector, vec![1.0, 0.0, 0.0]);
        assert_eq!(p.covered_tokens, 1);
    }

    #[test]
    fn phrase_skips_oov() {
        let p = phrase_vector(&["dog", "zzz"], &toy()).unwrap();
        assert_eq!(p.covered_tokens, 1);
        assert_eq!(p.skipped_tokens, 1);
    }

    #[test]
    fn phrase_fully_oov_is_coverage_error() {
        let err = phrase_vector(&["qwertyuiop"], &toy()).unwrap_err();
        assert!(matches!(err, Error::Coverage(_)));
        assert!(matches!(
            phrase_vector::<&str>(&[], &toy()),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn stem_alias_resolves_stemmed_tokens() {
        let t = parse_embeddings("parade 0 1\nparades 0 3\ndog 1 0\n", "alias").unwrap();
        // "parad" is the stem of both surface forms
        assert!(t.get("parad").is_none());
        assert_eq!(t.lookup("parad"), Some(&[0.0, 2.0][..]));
        assert!(t.lookup("dog").is_some());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(
            cosine(&[1.0, 0.0, 0.0], &[h, h, 0.0]).unwrap(),
            h,
            epsilon = 1e-12
        );
        let v = [0.3, -1.7, 2.2];
        assert_eq!(cosine(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn cosine_domain_errors() {
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::Domain(_))));
    }
}
