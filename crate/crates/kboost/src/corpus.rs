//! Evaluation data as manifest files: utterances, reference and hypothesis
//! transcripts, and optional externally computed NLL scores.
//!
//! The reference manifest is a UTF-8 TSV with header
//! `id<TAB>nll<TAB>audio<TAB>text`; `nll` and `audio` take the literal `-`
//! when absent. Hypotheses can ride along inline as extra `hyp:<snr>`
//! columns, or live in sibling hypothesis manifests with header
//! `id<TAB>snr<TAB>text` where `snr` is an integer dB value or `clean`.
//!
//! Tokenization is whitespace-only. No case folding and no punctuation
//! stripping happen inside the toolkit: text normalization conventions
//! differ per corpus, belong upstream, and must never silently change a
//! score.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected header starting `{expected}`, got `{got}`")]
    BadHeader {
        path: PathBuf,
        line: usize,
        expected: String,
        got: String,
    },
    #[error("{path}:{line}: expected {expected} tab-separated fields, found {found}")]
    BadColumnCount {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: duplicate utterance id `{id}`")]
    DuplicateId { path: PathBuf, line: usize, id: String },
    #[error("{path}:{line}: empty reference transcript for `{id}`")]
    EmptyReference { path: PathBuf, line: usize, id: String },
    #[error("{path}:{line}: bad {field} value `{value}`")]
    BadField {
        path: PathBuf,
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("{path}: hypothesis rows for unknown utterance ids: {ids:?}")]
    UnknownIds { path: PathBuf, ids: Vec<String> },
    #[error("partition is empty")]
    EmptyPartition,
}

/// A noise condition: either the unmodified recording or a dB level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Snr {
    Db(i32),
    Clean,
}

impl Snr {
    /// Stable integer used when keying RNG streams by condition.
    pub fn stream_tag(self) -> u64 {
        match self {
            Snr::Clean => 0x636c_6561_6e00_0000, // "clean"
            Snr::Db(db) => db as i64 as u64,
        }
    }
}

impl Ord for Snr {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Ascending in dB; clean sorts after every finite SNR.
        match (self, other) {
            (Snr::Db(a), Snr::Db(b)) => a.cmp(b),
            (Snr::Db(_), Snr::Clean) => std::cmp::Ordering::Less,
            (Snr::Clean, Snr::Db(_)) => std::cmp::Ordering::Greater,
            (Snr::Clean, Snr::Clean) => std::cmp::Ordering::Equal,
        }
    }
}

impl PartialOrd for Snr {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snr::Clean => write!(f, "clean"),
            Snr::Db(db) => write!(f, "{db}"),
        }
    }
}

impl FromStr for Snr {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "clean" {
            Ok(Snr::Clean)
        } else {
            s.parse::<i32>()
                .map(Snr::Db)
                .map_err(|_| format!("bad snr `{s}` (integer dB or `clean`)"))
        }
    }
}

impl From<Snr> for String {
    fn from(s: Snr) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Snr {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// One evaluation item.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub reference: Vec<String>,
    pub audio: Option<PathBuf>,
    /// Nats per token under the binning LM convention (words + end marker).
    pub nll: Option<f64>,
    pub hypotheses: BTreeMap<Snr, Vec<String>>,
}

/// An ordered, immutable collection of utterances with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub name: String,
    utterances: Vec<Utterance>,
}

impl Partition {
    pub fn new(name: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self, CorpusError> {
        if utterances.is_empty() {
            return Err(CorpusError::EmptyPartition);
        }
        let mut seen = std::collections::HashSet::new();
        for u in &utterances {
            if !seen.insert(u.id.clone()) {
                return Err(CorpusError::DuplicateId {
                    path: PathBuf::new(),
                    line: 0,
                    id: u.id.clone(),
                });
            }
        }
        Ok(Partition {
            name: name.into(),
            utterances,
        })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// SNR conditions for which at least one utterance has a hypothesis.
    pub fn snr_conditions(&self) -> Vec<Snr> {
        let mut set: Vec<Snr> = Vec::new();
        for u in &self.utterances {
            for &snr in u.hypotheses.keys() {
                if !set.contains(&snr) {
                    set.push(snr);
                }
            }
        }
        set.sort();
        set
    }

    /// Attach externally computed NLL scores (utterance id -> nats/token).
    pub fn set_nlls(&mut self, nlls: &BTreeMap<String, f64>) {
        for u in &mut self.utterances {
            if let Some(&v) = nlls.get(&u.id) {
                u.nll = Some(v);
            }
        }
    }
}

/// Whitespace tokenization; case and punctuation are preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

const MANIFEST_HEADER: [&str; 4] = ["id", "nll", "audio", "text"];
const HYP_HEADER: [&str; 3] = ["id", "snr", "text"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Load a reference manifest. The partition is named after the file stem
/// unless renamed later.
pub fn load_manifest(path: &Path) -> Result<Partition, CorpusError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| CorpusError::BadHeader {
            path: path.to_path_buf(),
            line: 1,
            expected: MANIFEST_HEADER.join("\\t"),
            got: "<empty file>".into(),
        })
        .and_then(|(i, r)| r.map(|l| (i, l)).map_err(io_err(path)))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 4 || cols[..4] != MANIFEST_HEADER {
        return Err(CorpusError::BadHeader {
            path: path.to_path_buf(),
            line: 1,
            expected: MANIFEST_HEADER.join("\\t"),
            got: header.clone(),
        });
    }
    // Optional inline hypothesis columns: hyp:<snr>.
    let mut hyp_cols: Vec<(usize, Snr)> = Vec::new();
    for (idx, col) in cols.iter().enumerate().skip(4) {
        let snr = col
            .strip_prefix("hyp:")
            .and_then(|s| Snr::from_str(s).ok())
            .ok_or_else(|| CorpusError::BadHeader {
                path: path.to_path_buf(),
                line: 1,
                expected: "hyp:<snr>".into(),
                got: (*col).to_string(),
            })?;
        hyp_cols.push((idx, snr));
    }

    let mut utterances = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines {
        let line = line.map_err(io_err(path))?;
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(CorpusError::BadColumnCount {
                path: path.to_path_buf(),
                line: lineno,
                expected: cols.len(),
                found: fields.len(),
            });
        }
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(CorpusError::BadField {
                path: path.to_path_buf(),
                line: lineno,
                field: "id",
                value: id,
            });
        }
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line: lineno,
                id,
            });
        }
        let nll = match fields[1] {
            "-" => None,
            s => {
                let v: f64 = s.parse().map_err(|_| CorpusError::BadField {
                    path: path.to_path_buf(),
                    line: lineno,
                    field: "nll",
                    value: s.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(CorpusError::BadField {
                        path: path.to_path_buf(),
                        line: lineno,
                        field: "nll",
                        value: s.to_string(),
                    });
                }
                Some(v)
            }
        };
        let audio = match fields[2] {
            "-" => None,
            s => Some(PathBuf::from(s)),
        };
        let reference = tokenize(fields[3]);
        if reference.is_empty() {
            return Err(CorpusError::EmptyReference {
                path: path.to_path_buf(),
                line: lineno,
                id,
            });
        }
        let mut hypotheses = BTreeMap::new();
        for &(idx, snr) in &hyp_cols {
            if fields[idx] != "-" {
                hypotheses.insert(snr, tokenize(fields[idx]));
            }
        }
        utterances.push(Utterance {
            id,
            reference,
            audio,
            nll,
            hypotheses,
        });
    }
    if utterances.is_empty() {
        return Err(CorpusError::EmptyPartition);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "partition".into());
    Ok(Partition { name, utterances })
}

/// Write a partition back to manifest format. Hypotheses, when present, are
/// written as inline `hyp:<snr>` columns so that save -> load round-trips.
pub fn save_manifest(partition: &Partition, path: &Path) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    let snrs = partition.snr_conditions();
    let mut header = MANIFEST_HEADER.join("\t");
    for snr in &snrs {
        header.push_str(&format!("\thyp:{snr}"));
    }
    writeln!(out, "{header}").map_err(io_err(path))?;
    for u in partition.utterances() {
        let nll = u.nll.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        let audio = u
            .audio
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_else(|| "-".into());
        let mut line = format!("{}\t{}\t{}\t{}", u.id, nll, audio, u.reference.join(" "));
        for snr in &snrs {
            match u.hypotheses.get(snr) {
                Some(toks) => line.push_str(&format!("\t{}", toks.join(" "))),
                None => line.push_str("\t-"),
            }
        }
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Load a hypothesis manifest (`id<TAB>snr<TAB>text`) and merge it into the
/// partition. Rows naming unknown utterance ids are an error: a silent
/// mis-join between reference and hypothesis sets would corrupt every score
/// downstream.
pub fn load_hypotheses(partition: &mut Partition, path: &Path) -> Result<usize, CorpusError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CorpusError::BadHeader {
            path: path.to_path_buf(),
            line: 1,
            expected: HYP_HEADER.join("\\t"),
            got: "<empty file>".into(),
        })
        .and_then(|(i, r)| r.map(|l| (i, l)).map_err(io_err(path)))?;
    if header.split('\t').collect::<Vec<_>>() != HYP_HEADER {
        return Err(CorpusError::BadHeader {
            path: path.to_path_buf(),
            line: 1,
            expected: HYP_HEADER.join("\\t"),
            got: header,
        });
    }

    let mut rows: Vec<(String, Snr, Vec<String>)> = Vec::new();
    let mut unknown: Vec<String> = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(io_err(path))?;
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CorpusError::BadColumnCount {
                path: path.to_path_buf(),
                line: lineno,
                expected: 3,
                found: fields.len(),
            });
        }
        let snr = Snr::from_str(fields[1]).map_err(|_| CorpusError::BadField {
            path: path.to_path_buf(),
            line: lineno,
            field: "snr",
            value: fields[1].to_string(),
        })?;
        let id = fields[0].to_string();
        if partition.get(&id).is_none() && !unknown.contains(&id) {
            unknown.push(id.clone());
        }
        rows.push((id, snr, tokenize(fields[2])));
    }
    if !unknown.is_empty() {
        return Err(CorpusError::UnknownIds {
            path: path.to_path_buf(),
            ids: unknown,
        });
    }
    let n = rows.len();
    for (id, snr, toks) in rows {
        let u = partition
            .utterances
            .iter_mut()
            .find(|u| u.id == id)
            .expect("id checked above");
        u.hypotheses.insert(snr, toks);
    }
    Ok(n)
}

/// Write the hypotheses of a partition for one SNR condition as a
/// hypothesis manifest.
pub fn save_hypotheses(partition: &Partition, snr: Snr, path: &Path) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    writeln!(out, "{}", HYP_HEADER.join("\t")).map_err(io_err(path))?;
    for u in partition.utterances() {
        if let Some(toks) = u.hypotheses.get(&snr) {
            writeln!(out, "{}\t{}\t{}", u.id, snr, toks.join(" ")).map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}
