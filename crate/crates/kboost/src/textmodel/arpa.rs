//! ARPA n-gram file format, read and write.
//!
//! ARPA stores log10 probabilities; the in-memory model is in nats.
//! Conversion happens on the boundary with enough printed digits that
//! `load(save(model))` agrees with `model` to well under 1e-9 nats.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{GramEntry, LmError, NgramModel};

const LN10: f64 = std::f64::consts::LN_10;

fn arpa_err(path: &Path, line: usize, msg: impl Into<String>) -> LmError {
    LmError::Arpa {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LmError + '_ {
    move |source| LmError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_arpa(model: &NgramModel, path: &Path) -> Result<(), LmError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    let io = io_err(path);
    writeln!(out, "\\data\\").map_err(io_err(path))?;
    for k in 1..=model.order() {
        writeln!(out, "ngram {}={}", k, model.gram_count(k)).map_err(io_err(path))?;
    }
    for k in 1..=model.order() {
        writeln!(out, "\n\\{k}-grams:").map_err(io_err(path))?;
        // Sort by token strings for a stable, diffable file.
        let mut entries: Vec<(Vec<&str>, &GramEntry)> = model.grams[k - 1]
            .iter()
            .map(|(gram, e)| {
                let words: Vec<&str> = gram
                    .iter()
                    .map(|&id| model.vocab[id as usize].as_str())
                    .collect();
                (words, e)
            })
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for (words, e) in entries {
            let p10 = e.logp / LN10;
            if k < model.order() {
                writeln!(out, "{:.10}\t{}\t{:.10}", p10, words.join(" "), e.logbo / LN10)
                    .map_err(io_err(path))?;
            } else {
                writeln!(out, "{:.10}\t{}", p10, words.join(" ")).map_err(io_err(path))?;
            }
        }
    }
    writeln!(out, "\n\\end\\").map_err(io_err(path))?;
    out.flush().map_err(io)
}

pub fn load_arpa(path: &Path) -> Result<NgramModel, LmError> {
    fn next_nonempty<'a>(lines: &'a [String], pos: &mut usize) -> Option<(usize, &'a str)> {
        while *pos < lines.len() {
            let i = *pos;
            *pos += 1;
            let t = lines[i].trim();
            if !t.is_empty() {
                return Some((i, t));
            }
        }
        None
    }

    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut lines = Vec::new();
    for l in BufReader::new(file).lines() {
        lines.push(l.map_err(io_err(path))?);
    }
    let mut pos = 0usize;

    let (i, first) = next_nonempty(&lines, &mut pos)
        .ok_or_else(|| arpa_err(path, 1, "empty file, expected \\data\\"))?;
    if first != "\\data\\" {
        return Err(arpa_err(path, i + 1, format!("expected \\data\\, got `{first}`")));
    }

    // ngram k=N lines, consecutive orders from 1.
    let mut declared: Vec<usize> = Vec::new();
    loop {
        let save = pos;
        let Some((i, line)) = next_nonempty(&lines, &mut pos) else {
            return Err(arpa_err(path, lines.len(), "unexpected end of file in \\data\\"));
        };
        if let Some(rest) = line.strip_prefix("ngram ") {
            let (k, n) = rest
                .split_once('=')
                .ok_or_else(|| arpa_err(path, i + 1, "expected `ngram k=N`"))?;
            let k: usize = k
                .trim()
                .parse()
                .map_err(|_| arpa_err(path, i + 1, "bad ngram order"))?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| arpa_err(path, i + 1, "bad ngram count"))?;
            if k != declared.len() + 1 {
                return Err(arpa_err(path, i + 1, format!("orders must be consecutive from 1, got {k}")));
            }
            declared.push(n);
        } else {
            pos = save;
            break;
        }
    }
    if declared.is_empty() {
        return Err(arpa_err(path, pos, "no `ngram k=N` declarations"));
    }
    let order = declared.len();

    let mut vocab: Vec<String> = Vec::new();
    let mut lookup: HashMap<String, u32> = HashMap::new();
    let mut grams: Vec<HashMap<Box<[u32]>, GramEntry>> = vec![HashMap::new(); order];

    for k in 1..=order {
        let (i, line) = next_nonempty(&lines, &mut pos)
            .ok_or_else(|| arpa_err(path, lines.len(), format!("missing \\{k}-grams: section")))?;
        if line != format!("\\{k}-grams:") {
            return Err(arpa_err(path, i + 1, format!("expected \\{k}-grams:, got `{line}`")));
        }
        let mut read = 0usize;
        while read < declared[k - 1] {
            let Some((i, entry)) = next_nonempty(&lines, &mut pos) else {
                return Err(arpa_err(
                    path,
                    lines.len(),
                    format!("{k}-grams: declared {}, found {read}", declared[k - 1]),
                ));
            };
            if entry.starts_with('\\') {
                return Err(arpa_err(
                    path,
                    i + 1,
                    format!("{k}-grams: declared {}, found {read}", declared[k - 1]),
                ));
            }
            let fields: Vec<&str> = entry.split_whitespace().collect();
            if fields.len() != k + 1 && fields.len() != k + 2 {
                return Err(arpa_err(
                    path,
                    i + 1,
                    format!("expected {} or {} fields for a {k}-gram, found {}", k + 1, k + 2, fields.len()),
                ));
            }
            if fields.len() == k + 2 && k == order {
                return Err(arpa_err(path, i + 1, "backoff weight on highest order"));
            }
            let p10: f64 = fields[0]
                .parse()
                .map_err(|_| arpa_err(path, i + 1, format!("bad log10 probability `{}`", fields[0])))?;
            if !(p10 <= 0.0) {
                return Err(arpa_err(path, i + 1, format!("log probability must be <= 0, got {p10}")));
            }
            let bo10: f64 = if fields.len() == k + 2 {
                let v: f64 = fields[k + 1]
                    .parse()
                    .map_err(|_| arpa_err(path, i + 1, format!("bad backoff `{}`", fields[k + 1])))?;
                if !v.is_finite() {
                    return Err(arpa_err(path, i + 1, "backoff must be finite"));
                }
                v
            } else {
                0.0
            };
            let mut ids: Vec<u32> = Vec::with_capacity(k);
            for w in &fields[1..=k] {
                let id = if k == 1 {
                    if lookup.contains_key(*w) {
                        return Err(arpa_err(path, i + 1, format!("duplicate unigram `{w}`")));
                    }
                    let id = vocab.len() as u32;
                    vocab.push((*w).to_string());
                    lookup.insert((*w).to_string(), id);
                    id
                } else {
                    *lookup
                        .get(*w)
                        .ok_or_else(|| arpa_err(path, i + 1, format!("word `{w}` missing from unigrams")))?
                };
                ids.push(id);
            }
            let key: Box<[u32]> = ids.into();
            if grams[k - 1]
                .insert(
                    key,
                    GramEntry {
                        logp: p10 * LN10,
                        logbo: bo10 * LN10,
                    },
                )
                .is_some()
            {
                return Err(arpa_err(path, i + 1, format!("duplicate {k}-gram")));
            }
            read += 1;
        }
    }

    let (i, end) = next_nonempty(&lines, &mut pos)
        .ok_or_else(|| arpa_err(path, lines.len(), "missing \\end\\"))?;
    if end != "\\end\\" {
        return Err(arpa_err(path, i + 1, format!("expected \\end\\, got `{end}`")));
    }

    Ok(NgramModel::from_parts(order, vocab, grams))
}
