//! Average precision over ranked lists and the equal-weight Borda baseline.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::composer::ScoreMatrix;
use crate::error::{Error, Result};

/// `(video_id, score)` pairs by descending score, ties by ascending video_id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn new(mut entries: Vec<(String, f64)>) -> Result<Self> {
        if let Some((id, _)) = entries.iter().find(|(_, s)| s.is_nan()) {
            return Err(Error::domain(format!("NaN score for video {id:?}")));
        }
        let mut seen = HashSet::new();
        if let Some((id, _)) = entries.iter().find(|(id, _)| !seen.insert(id.clone())) {
            return Err(Error::domain(format!(
                "duplicate video_id {id:?} in ranking"
            )));
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(RankedList { entries })
    }

    pub fn from_scores(ids: &[String], scores: &[f64]) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::domain("id and score lists differ in length"));
        }
        Self::new(ids.iter().cloned().zip(scores.iter().copied()).collect())
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Non-interpolated average precision of `ranking` against `positives`.
pub fn average_precision<S: AsRef<str>>(ranking: &RankedList, positives: &[S]) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::domain(
            "average precision needs at least one positive",
        ));
    }
    let wanted: HashSet<&str> = positives.iter().map(|s| s.as_ref()).collect();
    let ranked: HashSet<&str> = ranking.ids().collect();
    let mut missing: Vec<&str> = wanted.difference(&ranked).copied().collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        return Err(Error::domain(format!(
            "positives not in ranking: {}",
            missing.join(", ")
        )));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, id) in ranking.ids().enumerate() {
        if wanted.contains(id) {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(total / wanted.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub per_event_ap: BTreeMap<String, f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
}

impl EvalReport {
    pub fn new(per_event_ap: BTreeMap<String, f64>) -> Result<Self> {
        if per_event_ap.is_empty() {
            return Err(Error::domain("no events to average"));
        }
        if per_event_ap.contains_key("mAP") {
            return Err(Error::domain("event id \"mAP\" clashes with the mean"));
        }
        let map = mean(per_event_ap.values().copied());
        Ok(EvalReport { per_event_ap, map })
    }
}

/// Running mean; exact when all values are equal.
fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut m = 0.0;
    for (k, x) in values.enumerate() {
        m += (x - m) / (k + 1) as f64;
    }
    m
}

/// Ranks by 1-based position with tied scores sharing their mean rank.
fn mid_ranks(column: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..column.len()).collect();
    order.sort_by(|&a, &b| column[b].total_cmp(&column[a]));
    let mut ranks = vec![0.0; column.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && column[order[end]] == column[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Equal-weight Borda fusion over the concepts with positive relevance (all
/// concepts when none has any): each concept awards `n - rank` points.
pub fn borda_baseline(s: &ScoreMatrix, relevance: &[f64]) -> Result<RankedList> {
    if relevance.len() != s.n_cols() {
        return Err(Error::domain(format!(
            "relevance has {} entries for {} concept columns",
            relevance.len(),
            s.n_cols()
        )));
    }
    let mut used: Vec<usize> = (0..s.n_cols()).filter(|&c| relevance[c] > 0.0).collect();
    if used.is_empty() {
        used = (0..s.n_cols()).collect();
    }
    let n = s.n_rows() as f64;
    let mut points = vec![0.0; s.n_rows()];
    for c in used {
        let column = s.data().column(c).to_vec();
        for (acc, r) in points.iter_mut().zip(mid_ranks(&column)) {
            *acc += n - r;
        }
    }
    RankedList::from_scores(s.video_ids(), &points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn ranking(ids: &[&str]) -> RankedList {
        let n = ids.len();
        RankedList::new(
            ids.iter()
                .enumerate()
                .map(|(k, id)| (id.to_string(), (n - k) as f64))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn ap_examples() {
        let r = ranking(&["a", "b", "c"]);
        assert_abs_diff_eq!(
            average_precision(&r, &["a", "c"]).unwrap(),
            0.5 * (1.0 + 2.0 / 3.0),
            epsilon = 1e-15
        );
        assert_eq!(average_precision(&r, &["a", "b"]).unwrap(), 1.0);
        assert_abs_diff_eq!(
            average_precision(&r, &["c"]).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(average_precision(&r, &[] as &[&str]).is_err());
        assert!(average_precision(&r, &["z"]).is_err());
    }

    #[test]
    fn sort_contract() {
        let r = RankedList::new(vec![
            ("b".into(), 1.0),
            ("a".into(), 1.0),
            ("c".into(), 2.0),
        ])
        .unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec!["c", "a", "b"]);
        assert!(RankedList::new(vec![("a".into(), 1.0), ("a".into(), 2.0)]).is_err());
    }

    #[test]
    fn report_mean() {
        let mut aps = BTreeMap::new();
        aps.insert("E1".to_string(), 0.3);
        aps.insert("E2".to_string(), 0.3);
        aps.insert("E3".to_string(), 0.3);
        assert_eq!(EvalReport::new(aps).unwrap().map, 0.3);
        assert!(EvalReport::new(BTreeMap::new()).is_err());
    }

    fn matrix(columns: &[&[f64]]) -> ScoreMatrix {
        let n = columns[0].len();
        let data = Array2::from_shape_fn((n, columns.len()), |(r, c)| columns[c][r]);
        ScoreMatrix::new(
            (0..n).map(|i| format!("v{i}")).collect(),
            (0..columns.len()).map(|c| format!("c{c}")).collect(),
            data,
            0,
        )
        .unwrap()
    }

    #[test]
    fn borda_single_and_duplicated_concepts() {
        let col = [0.2, 0.9, 0.5, 0.5, 0.1];
        let single = borda_baseline(&matrix(&[&col]), &[1.0]).unwrap();
        let direct =
            RankedList::from_scores(&(0..5).map(|i| format!("v{i}")).collect::<Vec<_>>(), &col)
                .unwrap();
        let ids = |r: &RankedList| r.ids().map(String::from).collect::<Vec<_>>();
        assert_eq!(ids(&single), ids(&direct));
        let doubled = borda_baseline(&matrix(&[&col, &col]), &[0.4, 0.7]).unwrap();
        assert_eq!(ids(&doubled), ids(&direct));
    }

    #[test]
    fn borda_ignores_irrelevant_concepts() {
        let good = [0.9, 0.1, 0.5];
        let bad = [0.0, 1.0, 0.2];
        let r = borda_baseline(&matrix(&[&good, &bad]), &[0.8, 0.0]).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec!["v0", "v2", "v1"]);
    }
}
