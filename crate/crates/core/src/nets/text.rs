use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{axpy, dot, Mat, Rng};

/// Token id reserved for padding. Its embedding row is always zero.
pub const PAD_ID: u32 = 0;

/// Embedding table shared by a classifier and its surrogates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    id: String,
    table: Mat,
}

impl Embedding {
    /// Row `PAD_ID` is overwritten with zeros.
    pub fn new(id: impl Into<String>, mut table: Mat) -> Result<Self> {
        if table.rows() < 2 || table.cols() == 0 {
            return Err(Error::param(
                "embedding",
                format!(
                    "table must have at least 2 rows and 1 column, got {}x{}",
                    table.rows(),
                    table.cols()
                ),
            ));
        }
        if !table.is_finite() {
            return Err(Error::param("embedding", "table has non-finite entries"));
        }
        table.row_mut(PAD_ID as usize).fill(0.0);
        Ok(Embedding {
            id: id.into(),
            table,
        })
    }

    /// Rows `N(0, scale^2 I)` except the zero pad row.
    pub fn random(
        id: impl Into<String>,
        vocab_size: usize,
        dim: usize,
        scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(scale > 0.0) || vocab_size < 2 || dim == 0 {
            return Err(Error::param(
                "embedding",
                format!("need vocab >= 2, dim >= 1, scale > 0; got {vocab_size}, {dim}, {scale}"),
            ));
        }
        let values = rng.gaussian_vector(vocab_size * dim, scale * scale);
        Embedding::new(id, Mat::from_vec(vocab_size, dim, values)?)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn table(&self) -> &Mat {
        &self.table
    }

    pub fn vector(&self, token: u32) -> Result<&[f64]> {
        self.check_token(token)?;
        Ok(self.table.row(token as usize))
    }

    pub fn check_token(&self, token: u32) -> Result<()> {
        if (token as usize) < self.vocab_size() {
            Ok(())
        } else {
            Err(Error::OutOfVocabulary {
                id: token,
                vocab_size: self.vocab_size(),
            })
        }
    }

    /// `n x p` matrix of the embedded sequence plus its pad mask.
    pub fn embed(&self, tokens: &[u32]) -> Result<(Mat, Vec<bool>)> {
        let mut x = Mat::zeros(tokens.len(), self.dim());
        let mut pad = Vec::with_capacity(tokens.len());
        for (j, &t) in tokens.iter().enumerate() {
            x.row_mut(j).copy_from_slice(self.vector(t)?);
            pad.push(t == PAD_ID);
        }
        Ok((x, pad))
    }
}

/// Per-word gradient blocks of one model's score for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordGradients {
    /// Row `j` is the gradient with respect to word `j`'s embedding vector;
    /// pad rows are exactly zero.
    pub per_word: Mat,
    pub pad_mask: Vec<bool>,
    pub source_model: String,
    pub embedding_id: String,
    pub input_id: Option<String>,
}

impl WordGradients {
    pub fn len(&self) -> usize {
        self.per_word.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.per_word.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.per_word.cols()
    }

    pub fn word(&self, j: usize) -> &[f64] {
        self.per_word.row(j)
    }

    pub fn with_input_id(mut self, id: impl Into<String>) -> Self {
        self.input_id = Some(id.into());
        self
    }
}

/// Binary text classifier over a shared embedding table.
///
/// Each non-pad word `e_j` passes through the same hidden layer; the hidden
/// contributions are averaged over non-pad words:
///
/// `score = c + (1/L) sum_{j non-pad} v . relu(A e_j + b)`.
///
/// The score is the pre-sigmoid logit. An all-pad input scores `c`. Word
/// order does not matter and repeated tokens get identical gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TextClassifier {
    name: String,
    lineage: Vec<u64>,
    embedding: Arc<Embedding>,
    /// `h x p`
    hidden: Mat,
    hidden_bias: Vec<f64>,
    output: Vec<f64>,
    output_bias: f64,
}

/// Hidden pre-activations of the non-pad positions of the last input.
#[derive(Debug, Clone)]
pub struct TextCache {
    pub pad_mask: Vec<bool>,
    /// Row `j` holds `A e_j + b`; pad rows are unused zeros.
    pub preactivations: Mat,
    pub non_pad: usize,
}

impl TextClassifier {
    /// `A ~ N(0, 1/p)`, `v ~ N(0, 1/h)`, zero biases.
    pub fn init(
        name: impl Into<String>,
        embedding: Arc<Embedding>,
        hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::param("hidden", "hidden width must be at least 1"));
        }
        let p = embedding.dim();
        let a = rng.gaussian_vector(hidden * p, 1.0 / p as f64);
        let v = rng.gaussian_vector(hidden, 1.0 / hidden as f64);
        Ok(TextClassifier {
            name: name.into(),
            lineage: vec![rng.seed()],
            embedding,
            hidden: Mat::from_vec(hidden, p, a)?,
            hidden_bias: vec![0.0; hidden],
            output: v,
            output_bias: 0.0,
        })
    }

    pub fn from_parts(parts: TextClassifierParts, embedding: Arc<Embedding>) -> Result<Self> {
        let h = parts.output.len();
        let p = embedding.dim();
        if h == 0 {
            return Err(Error::param("hidden", "hidden width must be at least 1"));
        }
        check_len("TextClassifier hidden weights", h * p, parts.hidden.len())?;
        check_len("TextClassifier hidden bias", h, parts.hidden_bias.len())?;
        if parts.embedding_id != embedding.id() {
            return Err(Error::Checkpoint(format!(
                "classifier {} expects embedding {:?}, got {:?}",
                parts.name,
                parts.embedding_id,
                embedding.id()
            )));
        }
        let finite = parts
            .hidden
            .iter()
            .chain(&parts.hidden_bias)
            .chain(&parts.output)
            .chain(std::iter::once(&parts.output_bias))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("weights", "classifier weights must be finite"));
        }
        Ok(TextClassifier {
            name: parts.name,
            lineage: parts.lineage,
            hidden: Mat::from_vec(h, p, parts.hidden)?,
            embedding,
            hidden_bias: parts.hidden_bias,
            output: parts.output,
            output_bias: parts.output_bias,
        })
    }

    pub fn to_parts(&self) -> TextClassifierParts {
        TextClassifierParts {
            name: self.name.clone(),
            lineage: self.lineage.clone(),
            embedding_id: self.embedding.id().to_string(),
            hidden: self.hidden.as_slice().to_vec(),
            hidden_bias: self.hidden_bias.clone(),
            output: self.output.clone(),
            output_bias: self.output_bias,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Seeds that produced this model, outermost first.
    pub fn lineage(&self) -> &[u64] {
        &self.lineage
    }

    pub(crate) fn set_lineage(&mut self, lineage: Vec<u64>) {
        self.lineage = lineage;
    }

    pub fn embedding(&self) -> &Arc<Embedding> {
        &self.embedding
    }

    pub fn hidden_width(&self) -> usize {
        self.output.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.dim()
    }

    /// Flattened head parameters `[A, b, v, c]`.
    pub fn head_parameters(&self) -> Vec<f64> {
        let mut out = self.hidden.as_slice().to_vec();
        out.extend_from_slice(&self.hidden_bias);
        out.extend_from_slice(&self.output);
        out.push(self.output_bias);
        out
    }

    pub(crate) fn set_head_parameters(&mut self, params: &[f64]) {
        let hp = self.hidden.rows() * self.hidden.cols();
        let h = self.output.len();
        debug_assert_eq!(params.len(), hp + 2 * h + 1);
        self.hidden.as_mut_slice().copy_from_slice(&params[..hp]);
        self.hidden_bias.copy_from_slice(&params[hp..hp + h]);
        self.output.copy_from_slice(&params[hp + h..hp + 2 * h]);
        self.output_bias = params[hp + 2 * h];
    }

    pub(crate) fn replace_embedding(&mut self, embedding: Arc<Embedding>) {
        self.embedding = embedding;
    }

    pub(crate) fn hidden(&self) -> &Mat {
        &self.hidden
    }

    pub(crate) fn output(&self) -> &[f64] {
        &self.output
    }

    pub(crate) fn output_bias(&self) -> f64 {
        self.output_bias
    }

    /// `A e + b` for one embedded word.
    pub(crate) fn word_preactivation(&self, e: &[f64]) -> Vec<f64> {
        self.hidden
            .iter_rows()
            .zip(&self.hidden_bias)
            .map(|(a, b)| dot(a, e) + b)
            .collect()
    }

    /// `v . relu(A e + b)`: one word's contribution before averaging.
    pub fn word_contribution(&self, e: &[f64]) -> f64 {
        self.word_preactivation(e)
            .iter()
            .zip(&self.output)
            .map(|(z, v)| v * z.max(0.0))
            .sum()
    }

    /// Gradient of [`TextClassifier::word_contribution`] with respect to `e`.
    pub fn word_contribution_gradient(&self, e: &[f64]) -> Vec<f64> {
        let z = self.word_preactivation(e);
        self.gradient_from_preactivation(&z, 1.0)
    }

    fn gradient_from_preactivation(&self, z: &[f64], scale: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.embedding_dim()];
        for ((zi, vi), a) in z.iter().zip(&self.output).zip(self.hidden.iter_rows()) {
            if *zi >= 0.0 {
                axpy(scale * vi, a, &mut g);
            }
        }
        g
    }

    /// Score of an already embedded `n x p` input.
    pub fn forward_embedded(&self, x: &Mat, pad_mask: &[bool]) -> Result<(f64, TextCache)> {
        check_len(
            "TextClassifier embedded width",
            self.embedding_dim(),
            x.cols(),
        )?;
        check_len("TextClassifier pad mask", x.rows(), pad_mask.len())?;
        let h = self.hidden_width();
        let mut pre = Mat::zeros(x.rows(), h);
        let mut total = 0.0;
        let mut non_pad = 0;
        for (j, &pad) in pad_mask.iter().enumerate() {
            if pad {
                continue;
            }
            non_pad += 1;
            let z = self.word_preactivation(x.row(j));
            total += z
                .iter()
                .zip(&self.output)
                .map(|(z, v)| v * z.max(0.0))
                .sum::<f64>();
            pre.row_mut(j).copy_from_slice(&z);
        }
        let score = if non_pad == 0 {
            self.output_bias
        } else {
            self.output_bias + total / non_pad as f64
        };
        Ok((
            score,
            TextCache {
                pad_mask: pad_mask.to_vec(),
                preactivations: pre,
                non_pad,
            },
        ))
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<(f64, TextCache)> {
        let (x, pad) = self.embedding.embed(tokens)?;
        self.forward_embedded(&x, &pad)
    }

    pub fn score(&self, tokens: &[u32]) -> Result<f64> {
        Ok(self.forward(tokens)?.0)
    }

    pub fn score_bag(&self, bag: &BagOfWords) -> Result<f64> {
        let mut total = self.output_bias;
        for &(t, w) in &bag.entries {
            total += w * self.word_contribution(self.embedding.vector(t)?);
        }
        Ok(total)
    }

    /// Per-word gradients from a forward cache.
    pub fn backward(&self, cache: &TextCache) -> WordGradients {
        let n = cache.pad_mask.len();
        let mut per_word = Mat::zeros(n, self.embedding_dim());
        if cache.non_pad > 0 {
            let scale = 1.0 / cache.non_pad as f64;
            for (j, &pad) in cache.pad_mask.iter().enumerate() {
                if !pad {
                    let g = self.gradient_from_preactivation(cache.preactivations.row(j), scale);
                    per_word.row_mut(j).copy_from_slice(&g);
                }
            }
        }
        WordGradients {
            per_word,
            pad_mask: cache.pad_mask.clone(),
            source_model: self.name.clone(),
            embedding_id: self.embedding.id().to_string(),
            input_id: None,
        }
    }

    /// Gradient of the score with respect to each word's embedding vector.
    pub fn word_gradients(&self, tokens: &[u32]) -> Result<WordGradients> {
        let (_, cache) = self.forward(tokens)?;
        Ok(self.backward(&cache))
    }
}

/// Order-free view of a token sequence: each distinct non-pad token with
/// its share `count / L` of the `L` non-pad positions. Scoring a bag gives
/// the same value as scoring the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagOfWords {
    /// Sorted by token id.
    pub entries: Vec<(u32, f64)>,
}

impl BagOfWords {
    pub fn from_tokens(tokens: &[u32]) -> Self {
        let mut ids: Vec<u32> = tokens.iter().copied().filter(|&t| t != PAD_ID).collect();
        ids.sort_unstable();
        let share = 1.0 / ids.len().max(1) as f64;
        let mut entries: Vec<(u32, f64)> = Vec::new();
        for t in ids {
            match entries.last_mut() {
                Some((last, w)) if *last == t => *w += share,
                _ => entries.push((t, share)),
            }
        }
        BagOfWords { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Serializable weights of a [`TextClassifier`], without the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextClassifierParts {
    pub name: String,
    pub lineage: Vec<u64>,
    pub embedding_id: String,
    /// `h x p`, row-major.
    pub hidden: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub output: Vec<f64>,
    pub output_bias: f64,
}
