//! JSON Lines corpus files: one header line with the vocabulary, then one
//! record per line. Tokens are stored as strings.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tblind_core::dataset::{Corpus, EditRecord, ImageSpec, QuestionSlots, Vocabulary, WorldConfig};
use tblind_core::TokenId;

use crate::error::CliError;

pub const FORMAT: &str = "tb-corpus-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub world: Option<WorldConfig>,
    pub vocabulary: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ImageLine {
    id: u64,
    #[serde(default)]
    attrs: BTreeMap<String, String>,
    features: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SlotsLine {
    template: usize,
    object: String,
    attribute: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RecordLine {
    id: u64,
    image: ImageLine,
    question: Vec<String>,
    answer: String,
    target: String,
    rephrase_q: Vec<String>,
    rephrase_img: ImageLine,
    embedding: Vec<f64>,
    #[serde(default)]
    slots: Option<SlotsLine>,
}

fn image_line(img: &ImageSpec) -> ImageLine {
    ImageLine { id: img.id, attrs: img.attrs.clone(), features: img.features.clone() }
}

fn image_spec(line: ImageLine) -> ImageSpec {
    ImageSpec { id: line.id, attrs: line.attrs, features: line.features }
}

fn word(vocab: &Vocabulary, id: TokenId) -> String {
    vocab.token(id).expect("corpus tokens are in its vocabulary").to_string()
}

fn record_line(vocab: &Vocabulary, r: &EditRecord) -> RecordLine {
    RecordLine {
        id: r.id,
        image: image_line(&r.image),
        question: vocab.decode(&r.question),
        answer: word(vocab, r.answer),
        target: word(vocab, r.target),
        rephrase_q: vocab.decode(&r.rephrase_q),
        rephrase_img: image_line(&r.rephrase_img),
        embedding: r.embedding.clone(),
        slots: r.slots.as_ref().map(|s| SlotsLine {
            template: s.template,
            object: s.object.clone(),
            attribute: s.attribute.clone(),
        }),
    }
}

fn record(vocab: &Vocabulary, line: RecordLine) -> Result<EditRecord, CliError> {
    let one = |w: &str| vocab.id(w).ok_or_else(|| CliError::Data(format!("record {}: unknown token {w:?}", line.id)));
    Ok(EditRecord {
        id: line.id,
        answer: one(&line.answer)?,
        target: one(&line.target)?,
        question: vocab.encode(&line.question)?,
        rephrase_q: vocab.encode(&line.rephrase_q)?,
        image: image_spec(line.image),
        rephrase_img: image_spec(line.rephrase_img),
        embedding: line.embedding,
        slots: line.slots.map(|s| QuestionSlots { template: s.template, object: s.object, attribute: s.attribute }),
    })
}

/// Serialize a corpus; `header` supplies everything but the vocabulary.
pub fn to_jsonl(corpus: &Corpus, mut header: CorpusHeader) -> String {
    header.format = FORMAT.into();
    header.vocabulary = corpus.vocab().tokens().to_vec();
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in corpus.records() {
        out.push_str(&serde_json::to_string(&record_line(corpus.vocab(), r)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn from_reader<R: BufRead>(reader: R) -> Result<(Corpus, CorpusHeader), CliError> {
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| CliError::Data("corpus file is empty".into()))?;
    let first = first.map_err(|e| CliError::Data(e.to_string()))?;
    let header: CorpusHeader =
        serde_json::from_str(&first).map_err(|e| CliError::Data(format!("corpus header: {e}")))?;
    if header.format != FORMAT {
        return Err(CliError::Data(format!("unsupported corpus format {:?}", header.format)));
    }
    let vocab = Vocabulary::new(header.vocabulary.iter().cloned());
    let mut records = Vec::new();
    for (n, line) in lines {
        let line = line.map_err(|e| CliError::Data(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine =
            serde_json::from_str(&line).map_err(|e| CliError::Data(format!("corpus line {}: {e}", n + 1)))?;
        records.push(record(&vocab, parsed)?);
    }
    Ok((Corpus::new(vocab, records)?, header))
}

pub fn save(path: &Path, corpus: &Corpus, header: CorpusHeader) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(to_jsonl(corpus, header).as_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<(Corpus, CorpusHeader), CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    from_reader(BufReader::new(f))
}
