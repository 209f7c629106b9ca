//! Readers and writers for every on-disk format.
//!
//! * vocabulary: CSV `concept_id,name,source`
//! * videos: TSV `video_id<TAB>split<TAB>description`, optional header
//! * events: JSON lines with `event_id`, `name`, `description`
//! * scores: CSV `video_id,<concept ids in vocabulary order>`
//! * supervised scores: CSV `video_id,score`
//! * ground truth: CSV `event_id,video_id,label` with label 0 or 1
//! * rankings: TSV `rank<TAB>video_id<TAB>score`

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::composer::ScoreMatrix;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::RankedList;
use crate::semantic::{Concept, ConceptVocabulary, EventQuery, Split, VideoRecord};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn name(path: &Path) -> String {
    path.display().to_string()
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn expect_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    let got: Vec<&str> = got.iter().collect();
    if got != want {
        return Err(Error::format(
            name(path),
            1,
            format!(
                "expected header {:?}, found {:?}",
                want.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(())
}

fn record_line(r: &csv::StringRecord) -> usize {
    r.position().map_or(0, |p| p.line() as usize)
}

fn parse_float(path: &Path, line: usize, field: &str) -> Result<f64> {
    let x: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::format(name(path), line, format!("invalid number {field:?}")))?;
    if !x.is_finite() {
        return Err(Error::format(
            name(path),
            line,
            format!("non-finite number {field:?}"),
        ));
    }
    Ok(x)
}

pub fn read_vocabulary(path: impl AsRef<Path>) -> Result<ConceptVocabulary> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    expect_header(path, rdr.headers()?, &["concept_id", "name", "source"])?;
    let mut concepts = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != 3 {
            return Err(Error::format(name(path), line, "expected 3 fields"));
        }
        concepts.push(Concept {
            concept_id: rec[0].to_string(),
            name: rec[1].to_string(),
            source: rec[2].to_string(),
        });
    }
    ConceptVocabulary::new(concepts).map_err(|e| Error::format(name(path), 0, e.to_string()))
}

pub fn write_vocabulary(path: impl AsRef<Path>, vocab: &ConceptVocabulary) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["concept_id", "name", "source"])?;
    for c in vocab.concepts() {
        w.write_record([&c.concept_id, &c.name, &c.source])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

const VIDEO_HEADER: &str = "video_id\tsplit\tdescription";

pub fn read_videos(path: impl AsRef<Path>) -> Result<Vec<VideoRecord>> {
    let path = path.as_ref();
    let content = read(path)?;
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || (idx == 0 && line == VIDEO_HEADER) {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let id = fields.next().unwrap_or_default();
        let split = fields
            .next()
            .ok_or_else(|| Error::format(name(path), idx + 1, "missing split column"))?;
        let split: Split = split
            .parse()
            .map_err(|e: Error| Error::format(name(path), idx + 1, e.to_string()))?;
        out.push(VideoRecord {
            video_id: id.to_string(),
            split,
            description: fields.next().unwrap_or_default().to_string(),
        });
    }
    crate::semantic::validate_videos(&out)
        .map_err(|e| Error::format(name(path), 0, e.to_string()))?;
    Ok(out)
}

pub fn write_videos(path: impl AsRef<Path>, videos: &[VideoRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut body = format!("{VIDEO_HEADER}\n");
    for v in videos {
        if v.description.contains(['\t', '\n']) {
            return Err(Error::domain(format!(
                "description of {} has a tab or newline",
                v.video_id
            )));
        }
        body.push_str(&format!("{}\t{}\t{}\n", v.video_id, v.split, v.description));
    }
    w.write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<EventQuery>> {
    let path = path.as_ref();
    let content = read(path)?;
    let mut out: Vec<EventQuery> = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: EventQuery = serde_json::from_str(line)
            .map_err(|e| Error::format(name(path), idx + 1, e.to_string()))?;
        q.validate()
            .map_err(|e| Error::format(name(path), idx + 1, e.to_string()))?;
        if !seen.insert(q.event_id.clone()) {
            return Err(Error::format(
                name(path),
                idx + 1,
                format!("duplicate event_id {:?}", q.event_id),
            ));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn write_events(path: impl AsRef<Path>, events: &[EventQuery]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for e in events {
        let line = serde_json::to_string(e)?;
        writeln!(w, "{line}").map_err(|err| Error::io(path, err))?;
    }
    finish(path, w)
}

/// Raw detector scores as read from disk, one row per video.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub video_ids: Vec<String>,
    pub concept_ids: Vec<String>,
    pub data: Array2<f64>,
}

impl ScoreTable {
    /// Score matrix over the selected columns with weak videos first, then
    /// test videos, each in the order of `videos`.
    pub fn matrix_for(&self, videos: &[VideoRecord], columns: &[usize]) -> Result<ScoreMatrix> {
        let index: HashMap<&str, usize> = self
            .video_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let missing: Vec<&str> = videos
            .iter()
            .map(|v| v.video_id.as_str())
            .filter(|id| !index.contains_key(id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Coverage(format!(
                "videos without scores: {}",
                missing.join(", ")
            )));
        }
        let ordered: Vec<&VideoRecord> = videos
            .iter()
            .filter(|v| v.split == Split::Weak)
            .chain(videos.iter().filter(|v| v.split == Split::Test))
            .collect();
        let n_weak = videos.iter().filter(|v| v.split == Split::Weak).count();
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.concept_ids.len()) {
            return Err(Error::domain(format!("column {bad} out of range")));
        }
        let data = Array2::from_shape_fn((ordered.len(), columns.len()), |(r, c)| {
            self.data[(index[ordered[r].video_id.as_str()], columns[c])]
        });
        ScoreMatrix::new(
            ordered.iter().map(|v| v.video_id.clone()).collect(),
            columns
                .iter()
                .map(|&c| self.concept_ids[c].clone())
                .collect(),
            data,
            n_weak,
        )
    }
}

/// Reads a score file whose columns must match the vocabulary order.
pub fn read_scores(path: impl AsRef<Path>, vocab: &ConceptVocabulary) -> Result<ScoreTable> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers()?.clone();
    let mut want = vec!["video_id"];
    want.extend(vocab.ids());
    expect_header(path, &header, &want)?;
    let m = vocab.len();
    let mut video_ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != m + 1 {
            return Err(Error::format(
                name(path),
                line,
                format!("expected {} fields", m + 1),
            ));
        }
        if !seen.insert(rec[0].to_string()) {
            return Err(Error::format(
                name(path),
                line,
                format!("duplicate video_id {:?}", &rec[0]),
            ));
        }
        video_ids.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            values.push(parse_float(path, line, field)?);
        }
    }
    let data = Array2::from_shape_vec((video_ids.len(), m), values)
        .expect("row lengths checked while reading");
    Ok(ScoreTable {
        video_ids,
        concept_ids: vocab.ids().map(String::from).collect(),
        data,
    })
}

pub fn write_scores(path: impl AsRef<Path>, table: &ScoreTable) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    let mut header = vec!["video_id".to_string()];
    header.extend(table.concept_ids.iter().cloned());
    w.write_record(&header)?;
    for (id, row) in table.video_ids.iter().zip(table.data.outer_iter()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// Supervised classifier scores keyed by video_id.
pub fn read_supervised(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    expect_header(path, rdr.headers()?, &["video_id", "score"])?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != 2 {
            return Err(Error::format(name(path), line, "expected 2 fields"));
        }
        let score = parse_float(path, line, &rec[1])?;
        if out.insert(rec[0].to_string(), score).is_some() {
            return Err(Error::format(
                name(path),
                line,
                format!("duplicate video_id {:?}", &rec[0]),
            ));
        }
    }
    Ok(out)
}

pub fn write_supervised(path: impl AsRef<Path>, scores: &[(String, f64)]) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["video_id", "score"])?;
    for (id, s) in scores {
        w.write_record([id.clone(), s.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// Labels per event: event_id → video_id → positive.
pub type GroundTruth = BTreeMap<String, BTreeMap<String, bool>>;

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    expect_header(path, rdr.headers()?, &["event_id", "video_id", "label"])?;
    let mut out = GroundTruth::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != 3 {
            return Err(Error::format(name(path), line, "expected 3 fields"));
        }
        let label = match rec[2].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::format(
                    name(path),
                    line,
                    format!("label must be 0 or 1, got {other:?}"),
                ))
            }
        };
        let prev = out
            .entry(rec[0].to_string())
            .or_default()
            .insert(rec[1].to_string(), label);
        if prev.is_some() {
            return Err(Error::format(
                name(path),
                line,
                format!("duplicate label for ({}, {})", &rec[0], &rec[1]),
            ));
        }
    }
    Ok(out)
}

pub fn write_ground_truth(path: impl AsRef<Path>, truth: &GroundTruth) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["event_id", "video_id", "label"])?;
    for (event, labels) in truth {
        for (video, &positive) in labels {
            w.write_record([
                event.as_str(),
                video.as_str(),
                if positive { "1" } else { "0" },
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

const RANKING_HEADER: &str = "rank\tvideo_id\tscore";

pub fn write_ranking(path: impl AsRef<Path>, ranking: &RankedList) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    writeln!(w, "{RANKING_HEADER}").map_err(|e| Error::io(path, e))?;
    for (k, (id, score)) in ranking.entries().iter().enumerate() {
        writeln!(w, "{}\t{id}\t{score}", k + 1).map_err(|e| Error::io(path, e))?;
    }
    finish(path, w)
}

pub fn read_ranking(path: impl AsRef<Path>) -> Result<RankedList> {
    let path = path.as_ref();
    let content = read(path)?;
    let mut entries = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() || (idx == 0 && line == RANKING_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::format(name(path), idx + 1, "expected 3 fields"));
        }
        entries.push((
            fields[1].to_string(),
            parse_float(path, idx + 1, fields[2])?,
        ));
    }
    RankedList::new(entries).map_err(|e| Error::format(name(path), 0, e.to_string()))
}

/// Writes an embedding table in the plain-text format read by
/// [`crate::embedding::load_embeddings`].
pub fn write_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for token in table.tokens() {
        let v = table.get(token).expect("token listed by the table");
        let fields: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{token} {}", fields.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    finish(path, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> ConceptVocabulary {
        ConceptVocabulary::new(vec![
            Concept {
                concept_id: "c1".into(),
                name: "dog".into(),
                source: "toy".into(),
            },
            Concept {
                concept_id: "c2".into(),
                name: "parade, street".into(),
                source: "toy".into(),
            },
        ])
        .unwrap()
    }

    #[test]
    fn vocabulary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        write_vocabulary(&p, &vocab()).unwrap();
        assert_eq!(read_vocabulary(&p).unwrap(), vocab());
    }

    #[test]
    fn videos_round_trip_and_header_optional() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.tsv");
        let videos = vec![
            VideoRecord {
                video_id: "a".into(),
                split: Split::Weak,
                description: "a dog at a show".into(),
            },
            VideoRecord {
                video_id: "b".into(),
                split: Split::Test,
                description: String::new(),
            },
        ];
        write_videos(&p, &videos).unwrap();
        assert_eq!(read_videos(&p).unwrap(), videos);
        fs::write(&p, "a\tweak\tdog\nb\ttest\t\n").unwrap();
        assert_eq!(read_videos(&p).unwrap().len(), 2);
        fs::write(&p, "a\tbogus\tdog\n").unwrap();
        assert!(matches!(
            read_videos(&p),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn scores_header_must_follow_vocabulary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "video_id,c2,c1\na,0.1,0.2\n").unwrap();
        assert!(read_scores(&p, &vocab()).is_err());
        fs::write(&p, "video_id,c1,c2\na,0.1,0.2\nb,1e-1,3\n").unwrap();
        let t = read_scores(&p, &vocab()).unwrap();
        assert_eq!(t.data[(1, 1)], 3.0);
        fs::write(&p, "video_id,c1,c2\na,0.1,nan\n").unwrap();
        assert!(read_scores(&p, &vocab()).is_err());
    }

    #[test]
    fn matrix_orders_weak_rows_first() {
        let t = ScoreTable {
            video_ids: vec!["t1".into(), "w1".into(), "w2".into()],
            concept_ids: vec!["c1".into(), "c2".into()],
            data: ndarray::array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
        };
        let videos = vec![
            VideoRecord {
                video_id: "t1".into(),
                split: Split::Test,
                description: String::new(),
            },
            VideoRecord {
                video_id: "w2".into(),
                split: Split::Weak,
                description: "x".into(),
            },
            VideoRecord {
                video_id: "w1".into(),
                split: Split::Weak,
                description: "y".into(),
            },
        ];
        let s = t.matrix_for(&videos, &[1]).unwrap();
        assert_eq!(s.video_ids(), &["w2", "w1", "t1"]);
        assert_eq!(s.n_weak(), 2);
        assert_eq!(s.data().column(0).to_vec(), vec![6.0, 4.0, 2.0]);
    }

    #[test]
    fn ranking_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.tsv");
        let r = RankedList::new(vec![("b".into(), 0.5), ("a".into(), 0.75)]).unwrap();
        write_ranking(&p, &r).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "rank\tvideo_id\tscore\n1\ta\t0.75\n2\tb\t0.5\n"
        );
        assert_eq!(read_ranking(&p).unwrap(), r);
    }

    #[test]
    fn ground_truth_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        fs::write(&p, "event_id,video_id,label\nE1,a,1\nE1,b,0\n").unwrap();
        let g = read_ground_truth(&p).unwrap();
        assert!(g["E1"]["a"]);
        write_ground_truth(&p, &g).unwrap();
        assert_eq!(read_ground_truth(&p).unwrap(), g);
        fs::write(&p, "event_id,video_id,label\nE1,a,2\n").unwrap();
        assert!(read_ground_truth(&p).is_err());
    }
}
