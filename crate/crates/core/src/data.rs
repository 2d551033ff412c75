//! Event records, the immutable dataset and the event-log interchange format.
//!
//! The event log is comma-separated text with a header row:
//!
//! ```text
//! comment_id,post_id,author_id,timestamp,is_root_post,score,intervention,author_prior_offense
//! ```
//!
//! Root posts carry an empty `score` field. Column order in the header is free,
//! row order in the file is irrelevant: the dataset indexes impose time order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names of the event log, in canonical order.
pub const EVENT_COLUMNS: [&str; 8] = [
    "comment_id",
    "post_id",
    "author_id",
    "timestamp",
    "is_root_post",
    "score",
    "intervention",
    "author_prior_offense",
];

/// Moderation action applied to a comment. Actions are incremental: a deleted
/// comment is never also counted as hidden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Intervention {
    #[default]
    None,
    Hide,
    Delete,
}

impl Intervention {
    pub fn is_intervened(self) -> bool {
        !matches!(self, Intervention::None)
    }
}

impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Intervention::None => "none",
            Intervention::Hide => "hide",
            Intervention::Delete => "delete",
        })
    }
}

/// One scored comment or root post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub comment_id: u64,
    pub post_id: u64,
    pub author_id: u64,
    pub timestamp: u64,
    pub is_root_post: bool,
    pub score: Option<f64>,
    pub intervention: Intervention,
    pub author_prior_offense: bool,
}

impl CommentRecord {
    /// Sort key used by every index: timestamp, then comment id.
    #[inline]
    pub fn order_key(&self) -> (u64, u64) {
        (self.timestamp, self.comment_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub source: String,
    pub record_count: usize,
}

/// Immutable collection of records plus thread and user indexes.
///
/// Index entries are positions into [`Dataset::records`], ordered by
/// `(timestamp, comment_id)`. The thread index holds only non-root comments;
/// the user index holds everything a user authored, root posts included.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<CommentRecord>,
    by_id: HashMap<u64, usize>,
    roots: BTreeMap<u64, usize>,
    threads: BTreeMap<u64, Vec<usize>>,
    users: BTreeMap<u64, Vec<usize>>,
    meta: DatasetMeta,
}

impl Dataset {
    /// Builds indexes without validating. Use [`validate`] to check invariants.
    pub fn from_records(records: Vec<CommentRecord>, source: impl Into<String>) -> Self {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut roots = BTreeMap::new();
        let mut threads: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        let mut users: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_id.entry(r.comment_id).or_insert(i);
            if r.is_root_post {
                roots.entry(r.comment_id).or_insert(i);
            } else {
                threads.entry(r.post_id).or_default().push(i);
            }
            users.entry(r.author_id).or_default().push(i);
        }
        let sort = |ids: &mut Vec<usize>| ids.sort_by_key(|&i| records[i].order_key());
        threads.values_mut().for_each(sort);
        users.values_mut().for_each(sort);
        let meta = DatasetMeta {
            source: source.into(),
            record_count: records.len(),
        };
        Dataset {
            records,
            by_id,
            roots,
            threads,
            users,
            meta,
        }
    }

    pub fn records(&self) -> &[CommentRecord] {
        &self.records
    }

    pub fn record(&self, index: usize) -> &CommentRecord {
        &self.records[index]
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, comment_id: u64) -> Option<&CommentRecord> {
        self.by_id.get(&comment_id).map(|&i| &self.records[i])
    }

    /// Root posts keyed by post id.
    pub fn roots(&self) -> impl Iterator<Item = (u64, &CommentRecord)> + '_ {
        self.roots.iter().map(|(&id, &i)| (id, &self.records[i]))
    }

    pub fn thread_count(&self) -> usize {
        self.roots.len()
    }

    /// Time-ordered comment positions of a thread (root post excluded).
    pub fn thread(&self, post_id: u64) -> &[usize] {
        self.threads.get(&post_id).map_or(&[], Vec::as_slice)
    }

    /// Time-ordered positions of everything a user authored.
    pub fn user(&self, author_id: u64) -> &[usize] {
        self.users.get(&author_id).map_or(&[], Vec::as_slice)
    }

    pub fn users(&self) -> impl Iterator<Item = (u64, &[usize])> + '_ {
        self.users.iter().map(|(&id, v)| (id, v.as_slice()))
    }

    pub fn min_timestamp(&self) -> Option<u64> {
        self.records.iter().map(|r| r.timestamp).min()
    }

    pub fn max_timestamp(&self) -> Option<u64> {
        self.records.iter().map(|r| r.timestamp).max()
    }

    /// Records sorted by comment id; the canonical form for equality checks.
    pub fn sorted_records(&self) -> Vec<CommentRecord> {
        let mut out = self.records.clone();
        out.sort_by_key(|r| r.comment_id);
        out
    }
}

/// Invariant that a record breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    ScoreOutOfRange,
    ScorePresence,
    DuplicateId,
    OrphanComment,
    RootSelfReference,
    TimestampBeforeRoot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Position of the offending record in the dataset.
    pub index: usize,
    pub comment_id: u64,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.rule, self.message)
    }
}

/// Lists every record that breaks a dataset invariant. Empty iff valid.
pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen: HashMap<u64, usize> = HashMap::with_capacity(dataset.len());
    for (i, r) in dataset.records.iter().enumerate() {
        let mut push = |rule, message: String| {
            out.push(Violation {
                index: i,
                comment_id: r.comment_id,
                rule,
                message,
            })
        };
        if let Some(&first) = seen.get(&r.comment_id) {
            push(
                Rule::DuplicateId,
                format!("comment_id {} repeats the record at position {first}", r.comment_id),
            );
        } else {
            seen.insert(r.comment_id, i);
        }
        match (r.is_root_post, r.score) {
            (true, Some(s)) => push(
                Rule::ScorePresence,
                format!("root post {} carries score {s}", r.comment_id),
            ),
            (false, None) => push(
                Rule::ScorePresence,
                format!("comment {} has no score", r.comment_id),
            ),
            (false, Some(s)) if !(0.0..=1.0).contains(&s) => push(
                Rule::ScoreOutOfRange,
                format!("comment {} has score {s} outside [0, 1]", r.comment_id),
            ),
            _ => {}
        }
        if r.is_root_post {
            if r.post_id != r.comment_id {
                push(
                    Rule::RootSelfReference,
                    format!("root post {} names post_id {}", r.comment_id, r.post_id),
                );
            }
            continue;
        }
        match dataset.roots.get(&r.post_id).map(|&j| &dataset.records[j]) {
            None => push(
                Rule::OrphanComment,
                format!("comment {} refers to missing root post {}", r.comment_id, r.post_id),
            ),
            Some(root) if r.timestamp < root.timestamp => push(
                Rule::TimestampBeforeRoot,
                format!(
                    "comment {} (t={}) precedes its root post {} (t={})",
                    r.comment_id, r.timestamp, root.comment_id, root.timestamp
                ),
            ),
            Some(_) => {}
        }
    }
    out
}

#[derive(Debug, Deserialize)]
struct RawRow {
    comment_id: u64,
    post_id: u64,
    author_id: u64,
    timestamp: u64,
    is_root_post: Flag,
    score: Option<f64>,
    intervention: Intervention,
    author_prior_offense: Flag,
}

/// Accepts `true`/`false` and `1`/`0`.
#[derive(Debug, Clone, Copy)]
struct Flag(bool);

impl<'de> Deserialize<'de> for Flag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.trim() {
            "true" | "1" => Ok(Flag(true)),
            "false" | "0" => Ok(Flag(false)),
            other => Err(serde::de::Error::custom(format!("invalid boolean `{other}`"))),
        }
    }
}

/// Reads and validates an event log from a file.
pub fn ingest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, path.display().to_string())
}

/// Reads and validates an event log from any reader.
pub fn ingest_reader<R: Read>(reader: R, source: impl Into<String>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in EVENT_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MalformedRow {
                line: 1,
                message: format!("header is missing column `{col}`"),
            });
        }
    }
    let mut records = Vec::new();
    let mut lines = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut row).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::MalformedRow {
                line,
                message: e.to_string(),
            }
        })?;
        if !more {
            break;
        }
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != headers.len() {
            return Err(Error::MalformedRow {
                line,
                message: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
        }
        let raw: RawRow = row.deserialize(Some(&headers)).map_err(|e| Error::MalformedRow {
            line,
            message: e.to_string(),
        })?;
        records.push(CommentRecord {
            comment_id: raw.comment_id,
            post_id: raw.post_id,
            author_id: raw.author_id,
            timestamp: raw.timestamp,
            is_root_post: raw.is_root_post.0,
            score: raw.score,
            intervention: raw.intervention,
            author_prior_offense: raw.author_prior_offense.0,
        });
        lines.push(line);
    }
    let dataset = Dataset::from_records(records, source);
    if let Some(v) = validate(&dataset).into_iter().next() {
        return Err(Error::InvariantViolation {
            line: lines[v.index],
            message: v.message,
        });
    }
    Ok(dataset)
}

/// Writes records in the event-log format, in the order given.
pub fn write_events<W: Write>(records: &[CommentRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EVENT_COLUMNS)?;
    let mut buf = String::with_capacity(24);
    for r in records {
        buf.clear();
        if let Some(s) = r.score {
            buf.push_str(&s.to_string());
        }
        w.write_record([
            r.comment_id.to_string().as_str(),
            &r.post_id.to_string(),
            &r.author_id.to_string(),
            &r.timestamp.to_string(),
            if r.is_root_post { "true" } else { "false" },
            &buf,
            &r.intervention.to_string(),
            if r.author_prior_offense { "true" } else { "false" },
        ])?;
    }
    w.flush().map_err(|e| Error::io("<event log>", e))?;
    Ok(())
}

pub fn write_events_file(records: &[CommentRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_events(records, BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "comment_id,post_id,author_id,timestamp,is_root_post,score,intervention,author_prior_offense\n";

    fn parse(body: &str) -> Result<Dataset> {
        ingest_reader(format!("{HEADER}{body}").as_bytes(), "test")
    }

    fn rec(id: u64, post: u64, ts: u64, score: Option<f64>) -> CommentRecord {
        CommentRecord {
            comment_id: id,
            post_id: post,
            author_id: 7,
            timestamp: ts,
            is_root_post: score.is_none(),
            score,
            intervention: Intervention::None,
            author_prior_offense: false,
        }
    }

    #[test]
    fn minimal_file_builds_one_thread() {
        let ds = parse("1,1,10,100,true,,none,false\n3,1,11,130,false,0.2,hide,false\n2,1,12,120,false,0.95,delete,true\n")
            .unwrap();
        assert_eq!(ds.thread_count(), 1);
        let ids: Vec<u64> = ds.thread(1).iter().map(|&i| ds.record(i).comment_id).collect();
        assert_eq!(ids, vec![2, 3]);
        assert!(ds.get(2).unwrap().author_prior_offense);
        assert_eq!(ds.get(1).unwrap().score, None);
    }

    #[test]
    fn column_order_is_free() {
        let text = "post_id,comment_id,author_id,timestamp,is_root_post,score,intervention,author_prior_offense\n1,1,10,100,true,,none,false\n1,2,10,101,false,0.5,none,false\n";
        let ds = ingest_reader(text.as_bytes(), "t").unwrap();
        assert_eq!(ds.thread(1).len(), 1);
    }

    #[test]
    fn score_out_of_range_names_the_row() {
        let err = parse("1,1,10,100,true,,none,false\n2,1,11,120,false,1.2,none,false\n").unwrap_err();
        match err {
            Error::InvariantViolation { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("1.2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = parse("1,1,10,100,true,,none,false\n2,1,11,abc,false,0.3,none,false\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 3, .. }), "{err:?}");
        let err = parse("1,1,10,100,true,,none\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 2, .. }), "{err:?}");
        let err = parse("1,1,10,100,true,,remove,false\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRow { .. }));
    }

    #[test]
    fn missing_header_column_is_malformed() {
        let err = ingest_reader("comment_id,post_id\n1,1\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 1, .. }));
    }

    #[test]
    fn orphan_comment_aborts_ingestion() {
        let err = parse("2,1,11,120,false,0.3,none,false\n").unwrap_err();
        assert!(matches!(err, Error::InvariantViolation { .. }));
    }

    #[test]
    fn validate_clean_dataset_is_empty() {
        let ds = Dataset::from_records(vec![rec(1, 1, 0, None), rec(2, 1, 5, Some(0.4))], "t");
        assert!(validate(&ds).is_empty());
    }

    #[test]
    fn timestamp_before_root_names_both_ids() {
        let ds = Dataset::from_records(vec![rec(10, 10, 50, None), rec(11, 10, 40, Some(0.4))], "t");
        let v = validate(&ds);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::TimestampBeforeRoot);
        assert!(v[0].message.contains("11") && v[0].message.contains("10"));
    }

    #[test]
    fn duplicate_id_reported_once() {
        let ds = Dataset::from_records(
            vec![rec(1, 1, 0, None), rec(2, 1, 5, Some(0.4)), rec(2, 1, 6, Some(0.5))],
            "t",
        );
        let v = validate(&ds);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::DuplicateId);
    }

    #[test]
    fn root_with_score_and_comment_without_score() {
        let mut root = rec(1, 1, 0, None);
        root.score = Some(0.1);
        let mut c = rec(2, 1, 1, Some(0.1));
        c.score = None;
        let v = validate(&Dataset::from_records(vec![root, c], "t"));
        assert_eq!(v.iter().filter(|v| v.rule == Rule::ScorePresence).count(), 2);
    }

    #[test]
    fn ties_broken_by_comment_id() {
        let ds = Dataset::from_records(
            vec![rec(1, 1, 0, None), rec(9, 1, 5, Some(0.4)), rec(4, 1, 5, Some(0.5))],
            "t",
        );
        let ids: Vec<u64> = ds.thread(1).iter().map(|&i| ds.record(i).comment_id).collect();
        assert_eq!(ids, vec![4, 9]);
        assert_eq!(ds.user(7).len(), 3);
    }

    #[test]
    fn write_then_ingest_small() {
        let records = vec![rec(1, 1, 0, None), rec(2, 1, 5, Some(0.1 + 0.2))];
        let mut buf = Vec::new();
        write_events(&records, &mut buf).unwrap();
        let ds = ingest_reader(buf.as_slice(), "t").unwrap();
        assert_eq!(ds.sorted_records(), records);
    }
}
