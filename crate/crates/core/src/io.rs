//! On-disk formats: line-delimited traces and responses, delimited
//! annotation files, token maps, the corpus manifest and evaluation reports.
//!
//! Readers stream one record at a time. A malformed line surfaces as
//! [`Error::Record`] carrying file, line and field, and the stream carries
//! on; I/O failures surface as [`Error::Io`] and end the stream.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::error::{Error, Result};
use crate::ground_truth::AnnotationRecord;
use crate::logits::{AggregationScope, LogitTrace, NormalizationPolicy};
use crate::metrics::MetricConfig;
use crate::parser::{SynonymTable, TextResponse};
use crate::types::{EmotionSet, EmotionTokenMap, EmotionTokens, UtteranceRef, DEFAULT_EMOTIONS};

/// A single bad record, with provenance.
#[derive(Clone, Debug, PartialEq, Eq, ThisError)]
pub struct RecordError {
    pub file: Option<PathBuf>,
    pub line: u64,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{}:", file.display())?;
        }
        write!(f, "{}: ", self.line)?;
        if let Some(field) = &self.field {
            write!(f, "{field}: ")?;
        }
        f.write_str(&self.message)
    }
}

/// Something odd about a record that still leaves it usable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordWarning {
    pub file: Option<PathBuf>,
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RecordWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{}:", file.display())?;
        }
        write!(f, "{}: {}", self.line, self.message)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Generic streaming reader for one-JSON-object-per-line files.
pub struct JsonlReader<R, T> {
    reader: R,
    file: Option<PathBuf>,
    line: u64,
    buf: String,
    done: bool,
    _record: PhantomData<T>,
}

impl<R: BufRead, T: DeserializeOwned> JsonlReader<R, T> {
    pub fn new(reader: R, file: Option<PathBuf>) -> Self {
        Self {
            reader,
            file,
            line: 0,
            buf: String::new(),
            done: false,
            _record: PhantomData,
        }
    }

    pub fn line(&self) -> u64 {
        self.line
    }

    fn record_error(&self, field: Option<String>, message: impl Into<String>) -> Error {
        Error::Record(RecordError {
            file: self.file.clone(),
            line: self.line,
            field,
            message: message.into(),
        })
    }
}

impl<R: BufRead, T: DeserializeOwned> Iterator for JsonlReader<R, T> {
    type Item = Result<(u64, T)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    let path = self.file.clone().unwrap_or_default();
                    return Some(Err(Error::io(path, e)));
                }
            }
            self.line += 1;
            let text = self.buf.trim();
            if text.is_empty() {
                continue;
            }
            let mut de = serde_json::Deserializer::from_str(text);
            let parsed: std::result::Result<T, _> = serde_path_to_error::deserialize(&mut de);
            return Some(match parsed {
                Ok(v) => match de.end() {
                    Ok(()) => Ok((self.line, v)),
                    Err(e) => Err(self.record_error(None, e.to_string())),
                },
                Err(e) => {
                    let path = e.path().to_string();
                    let field = (path != ".").then_some(path);
                    Err(self.record_error(field, e.into_inner().to_string()))
                }
            });
        }
    }
}

/// Streams [`LogitTrace`]s, validating each against the token map.
pub struct TraceReader<R> {
    inner: JsonlReader<R, LogitTrace>,
    map: EmotionTokenMap,
    warnings: Vec<RecordWarning>,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R, file: Option<PathBuf>, map: &EmotionTokenMap) -> Self {
        Self {
            inner: JsonlReader::new(reader, file),
            map: map.clone(),
            warnings: Vec::new(),
        }
    }

    pub fn warnings(&self) -> &[RecordWarning] {
        &self.warnings
    }

    pub fn take_warnings(&mut self) -> Vec<RecordWarning> {
        std::mem::take(&mut self.warnings)
    }
}

pub fn read_traces(path: &Path, map: &EmotionTokenMap) -> Result<TraceReader<BufReader<File>>> {
    Ok(TraceReader::new(open(path)?, Some(path.to_path_buf()), map))
}

fn trace_field(err: &Error) -> Option<String> {
    match err {
        Error::MissingSubword { step, token } => Some(format!("steps[{}].emotion_logits.{token}", step - 1)),
        Error::EmptyTrace => Some("steps".into()),
        _ => Some("steps".into()),
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<LogitTrace>;

    fn next(&mut self) -> Option<Self::Item> {
        let (line, trace) = match self.inner.next()? {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        if trace.utterance.utterance_id.is_empty() {
            return Some(Err(self.inner.record_error(Some("utterance_id".into()), "empty utterance_id")));
        }
        if let Err(e) = trace.validate(&self.map) {
            return Some(Err(self.inner.record_error(trace_field(&e), e.to_string())));
        }
        if !trace.text_matches() {
            let w = RecordWarning {
                file: self.inner.file.clone(),
                line,
                message: format!(
                    "tokens of '{}' do not reproduce generated_text",
                    trace.utterance.utterance_id
                ),
            };
            log::warn!("{w}");
            self.warnings.push(w);
        }
        Some(Ok(trace))
    }
}

/// Streams [`TextResponse`]s.
pub struct ResponseReader<R> {
    inner: JsonlReader<R, TextResponse>,
}

impl<R: BufRead> ResponseReader<R> {
    pub fn new(reader: R, file: Option<PathBuf>) -> Self {
        Self {
            inner: JsonlReader::new(reader, file),
        }
    }
}

impl<R: BufRead> Iterator for ResponseReader<R> {
    type Item = Result<TextResponse>;

    fn next(&mut self) -> Option<Self::Item> {
        let (_, r) = match self.inner.next()? {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        if r.utterance.utterance_id.is_empty() {
            return Some(Err(self.inner.record_error(Some("utterance_id".into()), "empty utterance_id")));
        }
        Some(Ok(r))
    }
}

pub fn read_responses(path: &Path) -> Result<ResponseReader<BufReader<File>>> {
    Ok(ResponseReader::new(open(path)?, Some(path.to_path_buf())))
}

pub const ANNOTATION_HEADER: [&str; 3] = ["utterance_id", "annotator_id", "labels"];
pub const LABEL_DELIMITER: char = ';';

struct PendingUtterance {
    id: String,
    line: u64,
    rows: Vec<(String, String, u64)>,
}

/// Groups `(utterance_id, annotator_id, labels)` rows into
/// [`AnnotationRecord`]s. Rows of one utterance must be contiguous.
pub struct AnnotationReader<R: std::io::Read> {
    rows: csv::StringRecordsIntoIter<R>,
    file: Option<PathBuf>,
    set: EmotionSet,
    synonyms: SynonymTable,
    pending: Option<PendingUtterance>,
    seen: HashSet<String>,
    warnings: Vec<RecordWarning>,
    header_checked: Option<Result<()>>,
    done: bool,
}

impl<R: std::io::Read> AnnotationReader<R> {
    pub fn new(reader: R, file: Option<PathBuf>, set: &EmotionSet, synonyms: &SynonymTable) -> Self {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let header_checked = Some(match csv.headers() {
            Ok(h) if h.iter().collect::<Vec<_>>() == ANNOTATION_HEADER => Ok(()),
            Ok(h) => Err(Error::Record(RecordError {
                file: file.clone(),
                line: 1,
                field: None,
                message: format!(
                    "header must be {}, got {}",
                    ANNOTATION_HEADER.join(","),
                    h.iter().collect::<Vec<_>>().join(",")
                ),
            })),
            Err(e) => Err(Error::io(file.clone().unwrap_or_default(), std::io::Error::other(e.to_string()))),
        });
        Self {
            rows: csv.into_records(),
            file,
            set: set.clone(),
            synonyms: synonyms.clone(),
            pending: None,
            seen: HashSet::new(),
            warnings: Vec::new(),
            header_checked,
            done: false,
        }
    }

    pub fn warnings(&self) -> &[RecordWarning] {
        &self.warnings
    }

    fn warn(&mut self, line: u64, message: String) {
        let w = RecordWarning {
            file: self.file.clone(),
            line,
            message,
        };
        log::warn!("{w}");
        self.warnings.push(w);
    }

    fn err(&self, line: u64, field: &str, message: String) -> Error {
        Error::Record(RecordError {
            file: self.file.clone(),
            line,
            field: Some(field.to_string()),
            message,
        })
    }

    fn resolve(&self, label: &str) -> Option<String> {
        let label = label.trim().to_lowercase();
        if self.set.index_of(&label).is_some() {
            return Some(label);
        }
        self.synonyms
            .lookup(&label)
            .filter(|c| self.set.index_of(c).is_some())
            .map(str::to_string)
    }

    /// Turns a completed utterance into a record, or `None` when it had no
    /// usable rows.
    fn finish(&mut self, p: PendingUtterance) -> Option<Result<AnnotationRecord>> {
        if p.rows.is_empty() {
            self.warn(p.line, format!("utterance '{}' has no annotator rows; skipped", p.id));
            return None;
        }
        let mut annotators = HashSet::new();
        let mut labels = Vec::with_capacity(p.rows.len());
        for (annotator, raw, line) in &p.rows {
            if !annotators.insert(annotator.as_str()) {
                return Some(Err(self.err(
                    *line,
                    "annotator_id",
                    format!("annotator '{annotator}' appears twice for '{}'", p.id),
                )));
            }
            let mut set_labels = Vec::new();
            for l in raw.split(LABEL_DELIMITER).map(str::trim).filter(|l| !l.is_empty()) {
                match self.resolve(l) {
                    Some(c) => set_labels.push(c),
                    None => {
                        return Some(Err(self.err(
                            *line,
                            "labels",
                            format!("utterance '{}' rejected: label '{l}' is out of set", p.id),
                        )))
                    }
                }
            }
            labels.push(set_labels);
        }
        Some(
            AnnotationRecord::new(UtteranceRef::new(p.id), labels, &self.set)
                .map_err(|e| self.err(p.line, "labels", e.to_string())),
        )
    }
}

impl<R: std::io::Read> Iterator for AnnotationReader<R> {
    type Item = Result<AnnotationRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(Err(e)) = self.header_checked.take() {
            self.done = true;
            return Some(Err(e));
        }
        loop {
            if self.done {
                let p = self.pending.take()?;
                if let Some(out) = self.finish(p) {
                    return Some(out);
                }
                continue;
            }
            let row = match self.rows.next() {
                None => {
                    self.done = true;
                    continue;
                }
                Some(Err(e)) => {
                    let line = e.position().map(|p| p.line()).unwrap_or(0);
                    if e.is_io_error() {
                        self.done = true;
                        self.pending = None;
                        let path = self.file.clone().unwrap_or_default();
                        return Some(Err(Error::io(path, std::io::Error::other(e.to_string()))));
                    }
                    return Some(Err(self.err(line, "row", e.to_string())));
                }
                Some(Ok(r)) => r,
            };
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            if row.len() != 3 {
                return Some(Err(self.err(line, "row", format!("expected 3 columns, got {}", row.len()))));
            }
            let (utt, annotator, labels) = (row[0].to_string(), row[1].to_string(), row[2].to_string());
            if utt.is_empty() {
                return Some(Err(self.err(line, "utterance_id", "empty utterance_id".into())));
            }

            let same = self.pending.as_ref().is_some_and(|p| p.id == utt);
            let mut finished = None;
            if !same {
                if !self.seen.insert(utt.clone()) {
                    return Some(Err(self.err(
                        line,
                        "utterance_id",
                        format!("rows for '{utt}' are not contiguous"),
                    )));
                }
                let next = PendingUtterance {
                    id: utt.clone(),
                    line,
                    rows: Vec::new(),
                };
                finished = self.pending.replace(next);
            }
            if labels.split(LABEL_DELIMITER).all(|l| l.trim().is_empty()) {
                self.warn(line, format!("annotator '{annotator}' of '{utt}' gave no labels; row skipped"));
            } else if let Some(p) = self.pending.as_mut() {
                p.rows.push((annotator, labels, line));
            }
            if let Some(p) = finished {
                if let Some(out) = self.finish(p) {
                    return Some(out);
                }
            }
        }
    }
}

pub fn read_annotations(
    path: &Path,
    set: &EmotionSet,
    synonyms: &SynonymTable,
) -> Result<AnnotationReader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(AnnotationReader::new(f, Some(path.to_path_buf()), set, synonyms))
}

/// Writes to a temporary file beside `path` and renames it into place, so
/// readers never observe a partial file.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let wrap = |e: std::io::Error| Error::Write {
        path: path.to_path_buf(),
        source: e,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush().map_err(wrap)?;
    }
    tmp.as_file().sync_all().map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

pub(crate) fn write_line<T: Serialize>(w: &mut dyn Write, path: &Path, item: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, item).map_err(|e| Error::Serialize(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::Write {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_jsonl<'a, T, I>(path: &Path, items: I) -> Result<usize>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut n = 0;
    atomic_write(path, |w| {
        for item in items {
            write_line(w, path, item)?;
            n += 1;
        }
        Ok(())
    })?;
    Ok(n)
}

pub fn write_traces<'a, I: IntoIterator<Item = &'a LogitTrace>>(path: &Path, traces: I) -> Result<usize> {
    write_jsonl(path, traces)
}

pub fn write_responses<'a, I: IntoIterator<Item = &'a TextResponse>>(path: &Path, responses: I) -> Result<usize> {
    write_jsonl(path, responses)
}

/// Annotators are numbered `a1..aM` in record order.
pub(crate) fn write_annotation_rows<W: Write>(
    csv: &mut csv::Writer<W>,
    rec: &AnnotationRecord,
    set: &EmotionSet,
) -> std::result::Result<(), csv::Error> {
    for (a, labels) in rec.label_names(set).enumerate() {
        let joined = labels.join(&LABEL_DELIMITER.to_string());
        csv.write_record([rec.utterance.utterance_id.as_str(), &format!("a{}", a + 1), &joined])?;
    }
    Ok(())
}

pub fn write_annotations<'a, I>(path: &Path, records: I, set: &EmotionSet) -> Result<usize>
where
    I: IntoIterator<Item = &'a AnnotationRecord>,
{
    let mut n = 0;
    atomic_write(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let wrap = |e: csv::Error| Error::Write {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        };
        csv.write_record(ANNOTATION_HEADER).map_err(wrap)?;
        for rec in records {
            write_annotation_rows(&mut csv, rec, set).map_err(wrap)?;
            n += 1;
        }
        csv.flush().map_err(|e| Error::Write {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    Ok(n)
}

/// Token map file: a JSON array of `{emotion, subwords: [{token, id}]}`.
pub fn read_token_map(path: &Path, set: &EmotionSet) -> Result<EmotionTokenMap> {
    let entries: Vec<EmotionTokens> = serde_json::from_reader(open(path)?)
        .map_err(|e| Error::input(path, format!("bad token map: {e}")))?;
    EmotionTokenMap::new(entries, set).map_err(|e| Error::input(path, e.to_string()))
}

pub fn write_token_map(path: &Path, map: &EmotionTokenMap) -> Result<()> {
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, map.entries()).map_err(|e| Error::Serialize(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::Write {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    Text,
    #[default]
    Token,
}

crate::logits::kebab_enum!(Approach {
    Approach::Text => "text",
    Approach::Token => "token",
});

/// Run settings a manifest may carry; command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDefaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approach: Option<Approach>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<AggregationScope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict: Option<bool>,
}

fn default_emotions() -> Vec<String> {
    DEFAULT_EMOTIONS.iter().map(|s| s.to_string()).collect()
}

/// Manifest as written on disk (TOML). Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub corpus_id: String,
    #[serde(default = "default_emotions")]
    pub emotions: Vec<String>,
    /// Extra surface forms, e.g. `angry = "anger"`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub synonyms: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_map: Option<PathBuf>,
    pub annotations: PathBuf,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<PathBuf>,
    #[serde(default)]
    pub run: RunDefaults,
    #[serde(default)]
    pub metrics: MetricConfig,
    /// Utterance list; when empty the annotation file defines the corpus.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub utterances: Vec<UtteranceRef>,
}

/// A loaded manifest with paths resolved and declarations validated.
#[derive(Clone, Debug)]
pub struct CorpusManifest {
    pub path: PathBuf,
    pub corpus_id: String,
    pub set: EmotionSet,
    pub synonyms: SynonymTable,
    pub token_map: Option<EmotionTokenMap>,
    pub annotations: PathBuf,
    pub responses: Vec<PathBuf>,
    pub traces: Vec<PathBuf>,
    pub run: RunDefaults,
    pub metrics: MetricConfig,
    pub utterances: Vec<UtteranceRef>,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ManifestFile = toml::from_str(&text).map_err(|e| Error::input(path, e.to_string()))?;
        Self::from_file(file, path)
    }

    pub fn from_file(file: ManifestFile, path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let set = EmotionSet::new(&file.emotions).map_err(|e| Error::input(path, e.to_string()))?;
        let mut synonyms = SynonymTable::default();
        for (s, c) in &file.synonyms {
            if set.index_of(c).is_none() {
                return Err(Error::input(path, format!("synonym '{s}' points at unknown class '{c}'")));
            }
            synonyms.insert(s, c);
        }
        file.metrics.validate().map_err(|e| Error::input(path, e.to_string()))?;
        let token_map = match &file.token_map {
            Some(p) => Some(read_token_map(&resolve(p), &set)?),
            None => None,
        };
        if file.traces.is_empty() && file.responses.is_empty() {
            return Err(Error::input(path, "manifest names neither trace nor response files"));
        }
        if !file.traces.is_empty() && token_map.is_none() {
            return Err(Error::input(path, "trace files need a token_map"));
        }
        let mut ids = HashSet::new();
        for u in &file.utterances {
            if !ids.insert(u.utterance_id.as_str()) {
                return Err(Error::input(path, format!("utterance '{}' listed twice", u.utterance_id)));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            corpus_id: file.corpus_id,
            set,
            synonyms,
            token_map,
            annotations: resolve(&file.annotations),
            responses: file.responses.iter().map(|p| resolve(p)).collect(),
            traces: file.traces.iter().map(|p| resolve(p)).collect(),
            run: file.run,
            metrics: file.metrics,
            utterances: file.utterances,
        })
    }
}

pub fn write_manifest(path: &Path, manifest: &ManifestFile) -> Result<()> {
    let text = toml::to_string(manifest).map_err(|e| Error::Serialize(e.to_string()))?;
    atomic_write(path, |w| {
        w.write_all(text.as_bytes()).map_err(|e| Error::Write {
            path: path.to_path_buf(),
            source: e,
        })
    })
}
