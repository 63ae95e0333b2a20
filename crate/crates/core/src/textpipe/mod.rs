//! Tokenization, vocabularies, fixed-length encoding, CSV corpus ingestion,
//! and the planted-keyword corpus generator.

mod planted;

pub use planted::{
    generate_planted_corpus, PlantedCorpus, PlantedCorpusSpec, PlantedDoc, DEFAULT_NEGATIVE_KEYWORDS,
    DEFAULT_POSITIVE_KEYWORDS,
};

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{BagOfWords, PAD_ID};

pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    /// Runs of letters, digits and `_` are words; every other non-space
    /// character is a token of its own.
    Natural,
    /// Script text. Keeps `$variables` (with an optional `scope:` part),
    /// `::`, `-Parameters` and hyphenated command names such as
    /// `Invoke-Expression` as single tokens, and replaces URLs, IPv4
    /// addresses, e-mail addresses and user home paths by the placeholders
    /// `<url>`, `<ip>`, `<email>` and `<userpath>`.
    Code,
}

impl std::str::FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(TokenizerMode::Natural),
            "code" => Ok(TokenizerMode::Code),
            other => Err(Error::param(
                "tokenizer",
                format!("expected natural or code, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub mode: TokenizerMode,
    pub lowercase: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            mode: TokenizerMode::Natural,
            lowercase: true,
        }
    }
}

fn natural_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\w+|[^\w\s]").expect("valid regex"))
}

fn code_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(concat!(
            r"<(?:url|ip|email|userpath)>",
            r"|\$(?:\{[^}]*\}|[A-Za-z_]\w*(?::[A-Za-z_]\w*)?)",
            r"|::",
            r"|-[A-Za-z]\w*",
            r"|[A-Za-z_]\w*(?:-[A-Za-z_]\w*)*",
            r"|\d+(?:\.\d+)*",
            r"|\S",
        ))
        .expect("valid regex")
    })
}

/// Placeholder rules applied in order before code-mode tokenization.
fn placeholder_rules() -> &'static [(Regex, &'static str)] {
    static RULES: OnceLock<Vec<(Regex, &'static str)>> = OnceLock::new();
    RULES.get_or_init(|| {
        [
            (r"(?i)\b(?:https?|ftp)://[^\s'\x22]+", " <url> "),
            (r"\b[\w.+-]+@[\w-]+(?:\.[\w-]+)+\b", " <email> "),
            (r"\b(?:\d{1,3}\.){3}\d{1,3}\b", " <ip> "),
            (r"(?i)\b[a-z]:\\users\\[^\\\s'\x22]+", " <userpath> "),
            (r"(?i)/home/[^/\s'\x22]+", " <userpath> "),
        ]
        .into_iter()
        .map(|(p, r)| (Regex::new(p).expect("valid regex"), r))
        .collect()
    })
}

impl Tokenizer {
    pub fn natural() -> Self {
        Tokenizer::default()
    }

    pub fn code() -> Self {
        Tokenizer {
            mode: TokenizerMode::Code,
            lowercase: true,
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let (re, source) = match self.mode {
            TokenizerMode::Natural => (natural_re(), std::borrow::Cow::Borrowed(text)),
            TokenizerMode::Code => {
                let mut s = std::borrow::Cow::Borrowed(text);
                for (pat, rep) in placeholder_rules() {
                    if pat.is_match(&s) {
                        s = std::borrow::Cow::Owned(pat.replace_all(&s, *rep).into_owned());
                    }
                }
                (code_re(), s)
            }
        };
        re.find_iter(&source)
            .map(|m| {
                if self.lowercase {
                    m.as_str().to_lowercase()
                } else {
                    m.as_str().to_string()
                }
            })
            .collect()
    }
}

/// Token to id map with `<pad> = 0` and `<unk> = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Vocab> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.tokens
    }
}

impl Vocab {
    /// Counts tokens over `docs` and keeps the `max_size` most frequent
    /// (ties in lexicographic order). `max_size` excludes the two reserved
    /// entries; `None` keeps every token.
    pub fn build<S: AsRef<str>>(docs: &[Vec<S>], max_size: Option<usize>) -> Vocab {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for t in doc {
                let t = t.as_ref();
                if t != PAD_TOKEN && t != UNK_TOKEN {
                    *counts.entry(t).or_insert(0) += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        if let Some(max) = max_size {
            ranked.truncate(max);
        }
        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .map(str::to_string)
            .collect();
        Vocab::from_tokens(tokens).expect("reserved entries are in place")
    }

    /// `tokens[0]` must be `<pad>`, `tokens[1]` `<unk>`, the rest distinct.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::param("vocab", "must start with <pad>, <unk>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::param("vocab", format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of `token`, or [`UNK_ID`].
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Vocab> {
        Ok(serde_json::from_str(json)?)
    }
}

/// A document encoded to exactly `n` positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDoc {
    pub doc_id: String,
    pub token_ids: Vec<u32>,
    pub pad_mask: Vec<bool>,
    /// `0` or `1`.
    pub label: u8,
    /// The kept (clipped) tokens, verbatim.
    pub raw_tokens: Vec<String>,
}

impl EncodedDoc {
    /// Label as `-1` / `+1`.
    pub fn signed_label(&self) -> i8 {
        if self.label == 1 {
            1
        } else {
            -1
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn non_pad(&self) -> usize {
        self.pad_mask.iter().filter(|p| !**p).count()
    }

    /// The clipped token sequence this document was encoded from.
    pub fn render(&self) -> &[String] {
        &self.raw_tokens
    }

    /// Tokens recovered from ids (unknown words come back as `<unk>`).
    pub fn decode(&self, vocab: &Vocab) -> Vec<String> {
        self.token_ids
            .iter()
            .zip(&self.pad_mask)
            .filter(|(_, &pad)| !pad)
            .map(|(&id, _)| vocab.token(id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    pub fn bag(&self) -> BagOfWords {
        BagOfWords::from_tokens(&self.token_ids)
    }
}

/// Keeps the first `n` tokens and pads the rest with `<pad>`.
pub fn encode<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocab,
    n: usize,
    label: u8,
    doc_id: impl Into<String>,
) -> Result<EncodedDoc> {
    if n == 0 {
        return Err(Error::param("n", "sequence length must be at least 1"));
    }
    if label > 1 {
        return Err(Error::param("label", format!("must be 0 or 1, got {label}")));
    }
    let doc_id = doc_id.into();
    if tokens.is_empty() {
        log::warn!("document {doc_id:?} is empty; encoding it as all padding");
    }
    let kept = &tokens[..tokens.len().min(n)];
    let mut token_ids: Vec<u32> = kept.iter().map(|t| vocab.id(t.as_ref())).collect();
    let mut pad_mask = vec![false; token_ids.len()];
    token_ids.resize(n, PAD_ID);
    pad_mask.resize(n, true);
    Ok(EncodedDoc {
        doc_id,
        token_ids,
        pad_mask,
        label,
        raw_tokens: kept.iter().map(|t| t.as_ref().to_string()).collect(),
    })
}

/// Column names of a text corpus CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub text_column: String,
    pub label_column: String,
    /// When absent, row numbers (from 1) serve as ids.
    pub id_column: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            text_column: "text".into(),
            label_column: "label".into(),
            id_column: Some("doc_id".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDoc {
    pub doc_id: String,
    pub text: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub reason: String,
}

/// Parsed rows plus every row that was rejected and why.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvCorpus {
    pub docs: Vec<RawDoc>,
    pub errors: Vec<RowError>,
}

/// Accepts `0`/`1`, `-1`/`+1` and `neg`/`pos`.
fn parse_label(s: &str) -> Option<u8> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "+1" | "pos" | "positive" => Some(1),
        "0" | "-1" | "neg" | "negative" => Some(0),
        _ => None,
    }
}

/// Streams a corpus CSV. LF and CRLF line endings are equivalent.
pub fn read_csv_corpus<R: Read>(input: R, schema: &CsvSchema) -> Result<CsvCorpus> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::param("csv", format!("missing column {name:?}")))
    };
    let text_col = find(&schema.text_column)?;
    let label_col = find(&schema.label_column)?;
    let id_col = schema.id_column.as_deref().map(find).transpose()?;

    let mut corpus = CsvCorpus::default();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                corpus.errors.push(RowError {
                    row,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let Some(text) = rec.get(text_col) else {
            corpus.errors.push(RowError {
                row,
                reason: format!("missing {:?} field", schema.text_column),
            });
            continue;
        };
        let label = match rec.get(label_col).map(str::trim) {
            None | Some("") => {
                corpus.errors.push(RowError {
                    row,
                    reason: format!("missing {:?} field", schema.label_column),
                });
                continue;
            }
            Some(l) => match parse_label(l) {
                Some(v) => v,
                None => {
                    corpus.errors.push(RowError {
                        row,
                        reason: format!("unrecognized label {l:?}"),
                    });
                    continue;
                }
            },
        };
        let doc_id = match id_col {
            Some(c) => rec.get(c).unwrap_or("").to_string(),
            None => row.to_string(),
        };
        corpus.docs.push(RawDoc {
            doc_id,
            text: text.to_string(),
            label,
        });
    }
    Ok(corpus)
}

pub fn load_csv_corpus(path: &Path, schema: &CsvSchema) -> Result<CsvCorpus> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_corpus(std::io::BufReader::new(f), schema)
}
