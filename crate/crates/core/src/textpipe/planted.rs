//! Synthetic corpora whose labels are set by known keywords.
//!
//! Every document draws its label from a fair coin, its length uniformly
//! from `min_length..=max_length`, and each position independently: with
//! probability `keyword_rate` a uniformly chosen keyword of its own class,
//! otherwise a neutral word from a Zipf law over the neutral vocabulary.
//! A document that received no keyword gets one at a random position. The
//! neutral words are shared by both classes, so the most frequent of them are
//! label-independent distractors.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use serde::{Deserialize, Serialize};

use super::{encode, CsvSchema, EncodedDoc, Tokenizer, Vocab, PAD_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const DEFAULT_POSITIVE_KEYWORDS: [&str; 10] = [
    "great", "excellent", "superb", "wonderful", "brilliant", "delightful", "masterful", "moving", "stunning",
    "flawless",
];

pub const DEFAULT_NEGATIVE_KEYWORDS: [&str; 10] = [
    "poor", "worse", "awful", "boring", "dreadful", "tedious", "clumsy", "bland", "lifeless", "terrible",
];

const SIDECAR_FORMAT: &str = "onmanifold.planted_corpus";
const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCorpusSpec {
    /// Total vocabulary: `<pad>`, `<unk>`, every keyword and the neutral words.
    pub vocab_size: usize,
    pub doc_count: usize,
    pub min_length: usize,
    pub max_length: usize,
    /// Keywords of label 1.
    pub positive_keywords: Vec<String>,
    /// Keywords of label 0.
    pub negative_keywords: Vec<String>,
    pub keyword_rate: f64,
    /// Neutral word of rank `r` (from 1) has weight `r^-zipf_exponent`.
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for PlantedCorpusSpec {
    fn default() -> Self {
        PlantedCorpusSpec {
            vocab_size: 2000,
            doc_count: 2100,
            min_length: 40,
            max_length: 64,
            positive_keywords: DEFAULT_POSITIVE_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            negative_keywords: DEFAULT_NEGATIVE_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            keyword_rate: 0.15,
            zipf_exponent: 1.0,
            seed: 0,
        }
    }
}

impl PlantedCorpusSpec {
    fn keyword_count(&self) -> usize {
        self.positive_keywords.len() + self.negative_keywords.len()
    }

    pub fn neutral_count(&self) -> usize {
        self.vocab_size.saturating_sub(2 + self.keyword_count())
    }

    /// Neutral words in Zipf rank order: `w0000` is the most frequent.
    pub fn neutral_tokens(&self) -> Vec<String> {
        let n = self.neutral_count();
        let width = n.saturating_sub(1).to_string().len().max(4);
        (0..n).map(|i| format!("w{i:0width$}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positive_keywords.is_empty() || self.negative_keywords.is_empty() {
            return Err(Error::param("keywords", "each class needs at least one keyword"));
        }
        let neutral: BTreeSet<String> = self.neutral_tokens().into_iter().collect();
        let mut seen = BTreeSet::new();
        for k in self.positive_keywords.iter().chain(&self.negative_keywords) {
            let plain = !k.is_empty() && k.chars().all(|c| c.is_alphanumeric() || c == '_');
            if !plain || k.to_lowercase() != *k {
                return Err(Error::param(
                    "keywords",
                    format!("{k:?} must be a single lowercase word"),
                ));
            }
            if k == PAD_TOKEN || k == UNK_TOKEN || neutral.contains(k) {
                return Err(Error::param("keywords", format!("{k:?} collides with a reserved or neutral word")));
            }
            if !seen.insert(k) {
                return Err(Error::param(
                    "keywords",
                    format!("{k:?} is listed twice or in both classes"),
                ));
            }
        }
        if self.neutral_count() == 0 {
            return Err(Error::param(
                "vocab_size",
                format!("{} leaves no neutral words after reserved entries and keywords", self.vocab_size),
            ));
        }
        if self.doc_count == 0 {
            return Err(Error::param("doc_count", "must be at least 1"));
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return Err(Error::param(
                "length",
                format!("need 1 <= min_length <= max_length, got {}..={}", self.min_length, self.max_length),
            ));
        }
        if !(self.keyword_rate > 0.0 && self.keyword_rate <= 1.0) {
            return Err(Error::param("keyword_rate", format!("must lie in (0, 1], got {}", self.keyword_rate)));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::param("zipf_exponent", format!("must be non-negative, got {}", self.zipf_exponent)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedDoc {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub label: u8,
    /// Every position holding a keyword, ascending.
    pub keyword_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCorpus {
    pub spec: PlantedCorpusSpec,
    pub docs: Vec<PlantedDoc>,
}

#[derive(Serialize, Deserialize)]
struct GroundTruth {
    doc_id: String,
    keyword_positions: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    spec: PlantedCorpusSpec,
    ground_truth: Vec<GroundTruth>,
}

pub fn generate_planted_corpus(spec: &PlantedCorpusSpec) -> Result<PlantedCorpus> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let neutral = spec.neutral_tokens();
    let zipf = WeightedIndex::new((1..=neutral.len()).map(|r| (r as f64).powf(-spec.zipf_exponent)))
        .map_err(|e| Error::param("zipf_exponent", e.to_string()))?;
    let width = spec.doc_count.saturating_sub(1).to_string().len().max(5);

    let mut docs = Vec::with_capacity(spec.doc_count);
    for i in 0..spec.doc_count {
        let label = rng.bernoulli(0.5) as u8;
        let keywords = if label == 1 {
            &spec.positive_keywords
        } else {
            &spec.negative_keywords
        };
        let len = spec.min_length + rng.below(spec.max_length - spec.min_length + 1);
        let mut planted: Vec<bool> = (0..len).map(|_| rng.bernoulli(spec.keyword_rate)).collect();
        if !planted.iter().any(|&p| p) {
            planted[rng.below(len)] = true;
        }
        let tokens = planted
            .iter()
            .map(|&p| {
                if p {
                    keywords[rng.below(keywords.len())].clone()
                } else {
                    neutral[rng.sample(&zipf)].clone()
                }
            })
            .collect();
        docs.push(PlantedDoc {
            doc_id: format!("doc{i:0width$}"),
            tokens,
            label,
            keyword_positions: (0..len).filter(|&j| planted[j]).collect(),
        });
    }
    Ok(PlantedCorpus { spec: spec.clone(), docs })
}

impl PlantedCorpus {
    pub fn is_keyword(&self, token: &str) -> bool {
        self.spec.positive_keywords.iter().chain(&self.spec.negative_keywords).any(|k| k == token)
    }

    /// The label implied by a token sequence: the class whose keywords it
    /// contains, or `None` when it holds none or both.
    pub fn label_from_keywords<S: AsRef<str>>(&self, tokens: &[S]) -> Option<u8> {
        let has = |set: &[String]| tokens.iter().any(|t| set.iter().any(|k| k == t.as_ref()));
        match (has(&self.spec.positive_keywords), has(&self.spec.negative_keywords)) {
            (true, false) => Some(1),
            (false, true) => Some(0),
            _ => None,
        }
    }

    /// The first `count` documents and the rest.
    pub fn split(&self, count: usize) -> (&[PlantedDoc], &[PlantedDoc]) {
        self.docs.split_at(count.min(self.docs.len()))
    }

    pub fn encode_docs(docs: &[PlantedDoc], vocab: &Vocab, n: usize) -> Result<Vec<EncodedDoc>> {
        docs.iter()
            .map(|d| encode(&d.tokens, vocab, n, d.label, d.doc_id.clone()))
            .collect()
    }

    /// `doc_id,text,label` with tokens joined by single spaces.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["doc_id", "text", "label"])?;
        for d in &self.docs {
            w.write_record([d.doc_id.as_str(), &d.tokens.join(" "), &d.label.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    /// The generating spec and every document's keyword positions.
    pub fn sidecar_json(&self) -> Result<String> {
        let sidecar = Sidecar {
            format: SIDECAR_FORMAT.into(),
            version: SIDECAR_VERSION,
            spec: self.spec.clone(),
            ground_truth: self
                .docs
                .iter()
                .map(|d| GroundTruth {
                    doc_id: d.doc_id.clone(),
                    keyword_positions: d.keyword_positions.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&sidecar)?)
    }

    pub fn save(&self, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
        let f = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        std::fs::write(sidecar_path, self.sidecar_json()?).map_err(|e| Error::io(sidecar_path, e))
    }

    /// Reads a corpus written by [`PlantedCorpus::save`] and checks the
    /// ground truth against the text.
    pub fn load(csv_path: &Path, sidecar_path: &Path) -> Result<PlantedCorpus> {
        let json = std::fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&json)?;
        if sidecar.format != SIDECAR_FORMAT || sidecar.version != SIDECAR_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: expected {SIDECAR_FORMAT} v{SIDECAR_VERSION}, found {} v{}",
                sidecar_path.display(),
                sidecar.format,
                sidecar.version
            )));
        }
        let raw = super::load_csv_corpus(csv_path, &CsvSchema::default())?;
        if let Some(e) = raw.errors.first() {
            return Err(Error::Checkpoint(format!(
                "{}: row {}: {}",
                csv_path.display(),
                e.row,
                e.reason
            )));
        }
        let mut truth: HashMap<String, Vec<usize>> = sidecar
            .ground_truth
            .into_iter()
            .map(|g| (g.doc_id, g.keyword_positions))
            .collect();
        let tokenizer = Tokenizer {
            lowercase: false,
            ..Tokenizer::natural()
        };
        let mut corpus = PlantedCorpus {
            spec: sidecar.spec,
            docs: Vec::with_capacity(raw.docs.len()),
        };
        for d in raw.docs {
            let positions = truth
                .remove(&d.doc_id)
                .ok_or_else(|| Error::Checkpoint(format!("no ground truth for document {:?}", d.doc_id)))?;
            let tokens = tokenizer.tokenize(&d.text);
            let expected: Vec<usize> = (0..tokens.len()).filter(|&j| corpus.is_keyword(&tokens[j])).collect();
            if expected != positions {
                return Err(Error::Checkpoint(format!(
                    "ground truth of document {:?} does not match its text",
                    d.doc_id
                )));
            }
            corpus.docs.push(PlantedDoc {
                doc_id: d.doc_id,
                tokens,
                label: d.label,
                keyword_positions: positions,
            });
        }
        Ok(corpus)
    }
}
