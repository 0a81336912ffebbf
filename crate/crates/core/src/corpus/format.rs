//! On-disk layout of a prepared corpus and the labeled-conversation
//! line format.
//!
//! A prepared corpus directory holds:
//!
//! - `manifest.json` — seed, rule parameters, per-split statistics
//! - `vocab.tsv` — `token<TAB>id<TAB>count` lines, id order
//! - `train.jsonl`, `validation.jsonl`, `test.jsonl` — one conversation
//!   per line; validation/test records carry their pre-selected noise
//!   references
//!
//! Labeled data for classification is line-delimited JSON too: each record
//! is a conversation whose utterances carry `speaker`, `text`, and either a
//! single `label` or parallel `labels`/`intensities` lists.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    Conversation, Manifest, NoiseRef, PreparedCorpus, PreparedSplit, Vocabulary,
};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct ConvRecord {
    id: u64,
    utterances: Vec<super::Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<Vec<NoiseRef>>,
}

/// Write a file atomically: temp sibling first, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let display = path.display().to_string();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&display, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(&display, e))
}

fn write_split(path: &Path, split: &PreparedSplit) -> Result<()> {
    let mut out = Vec::new();
    for (i, conv) in split.conversations.iter().enumerate() {
        let record = ConvRecord {
            id: conv.id,
            utterances: conv.utterances.clone(),
            noise: split.noise.get(i).filter(|n| !n.is_empty()).cloned(),
        };
        let line = serde_json::to_string(&record).expect("conversation serializes");
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

fn read_split(path: &Path) -> Result<PreparedSplit> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut conversations = Vec::new();
    let mut noise = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ConvRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedInput {
                path: display.clone(),
                line: lineno + 1,
                reason: e.to_string(),
            })?;
        conversations.push(Conversation {
            id: record.id,
            utterances: record.utterances,
        });
        noise.push(record.noise.unwrap_or_default());
    }
    if noise.iter().all(|n| n.is_empty()) {
        noise.clear();
    }
    Ok(PreparedSplit {
        conversations,
        noise,
    })
}

fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut out = String::new();
    for (i, (token, count)) in vocab.iter().enumerate() {
        out.push_str(&format!(
            "{token}\t{}\t{count}\n",
            i + Vocabulary::RESERVED
        ));
    }
    write_atomic(path, out.as_bytes())
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut vocab = Vocabulary::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let bad = |reason: &str| Error::MalformedInput {
            path: display.clone(),
            line: lineno + 1,
            reason: reason.into(),
        };
        let token = parts.next().ok_or_else(|| bad("missing token"))?;
        let id: u32 = parts
            .next()
            .ok_or_else(|| bad("missing id"))?
            .parse()
            .map_err(|_| bad("non-numeric id"))?;
        let count: u64 = parts
            .next()
            .ok_or_else(|| bad("missing count"))?
            .parse()
            .map_err(|_| bad("non-numeric count"))?;
        let assigned = vocab.push(token, count);
        if assigned != id {
            return Err(bad(&format!("id {id} out of order, expected {assigned}")));
        }
    }
    Ok(vocab)
}

pub fn save_corpus(corpus: &PreparedCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let manifest = corpus.manifest();
    let manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join("manifest.json"), manifest_json.as_bytes())?;
    write_vocab(&dir.join("vocab.tsv"), &corpus.vocab)?;
    write_split(&dir.join("train.jsonl"), &corpus.train)?;
    write_split(&dir.join("validation.jsonl"), &corpus.validation)?;
    write_split(&dir.join("test.jsonl"), &corpus.test)?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<PreparedCorpus> {
    let manifest_path = dir.join("manifest.json");
    let display = manifest_path.display().to_string();
    let manifest_bytes = std::fs::read(&manifest_path).map_err(|e| Error::io(&display, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&manifest_bytes).map_err(|e| Error::MalformedInput {
            path: display,
            line: 0,
            reason: e.to_string(),
        })?;
    Ok(PreparedCorpus {
        train: read_split(&dir.join("train.jsonl"))?,
        validation: read_split(&dir.join("validation.jsonl"))?,
        test: read_split(&dir.join("test.jsonl"))?,
        vocab: read_vocab(&dir.join("vocab.tsv"))?,
        seed: manifest.seed,
        rules: manifest.rules,
    })
}

// ---------------------------------------------------------------------------
// Labeled-conversation records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErcUtteranceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensities: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErcRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub utterances: Vec<ErcUtteranceRecord>,
}

/// Read labeled-conversation records; schema violations are reported with
/// the (1-based) record index.
pub fn read_erc_records(path: &Path) -> Result<Vec<ErcRecord>> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut records = Vec::new();
    let mut record_index = 0usize;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        record_index += 1;
        let record: ErcRecord =
            serde_json::from_str(&line).map_err(|e| Error::SchemaViolation {
                record: record_index,
                reason: e.to_string(),
            })?;
        for utt in &record.utterances {
            if utt.text.trim().is_empty() {
                return Err(Error::SchemaViolation {
                    record: record_index,
                    reason: "empty utterance text".into(),
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_erc_records(path: &Path, records: &[ErcRecord]) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(&display, e))?;
    }
    w.flush().map_err(|e| Error::io(&display, e))
}
