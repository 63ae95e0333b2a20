//! End-to-end text pipeline: vocabulary and encoding, embedding pre-training,
//! classifier and surrogate training, model bundles on disk, per-document
//! explanations, and the planted-keyword precision experiment.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{
    alpha_scores, norm_profile, select_by_norm, select_topk, suggest_threshold, Explanation, ExplanationDocument,
    NormProfile, SelectionStatus, ThresholdConfig, ThresholdSuggestion, DEFAULT_TOP_K,
};
use crate::nets::{
    embedding_from_json, embedding_to_json, text_classifier_from_json, text_classifier_to_json, BagOfWords,
    Embedding, TextClassifier, WordGradients, CHECKPOINT_VERSION,
};
use crate::numerics::{derive_seed, mean, Rng};
use crate::textpipe::{generate_planted_corpus, EncodedDoc, PlantedCorpus, PlantedCorpusSpec, Vocab};
use crate::training::{
    accuracy, pretrain_embedding, train, train_ensemble, PretrainConfig, Split, TrainConfig, DEFAULT_ACCURACY_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    /// One pre-trained table, frozen, used by the classifier and every
    /// surrogate.
    Shared,
    /// Each surrogate pre-trains its own table from its own seed. Word
    /// gradients then live in unrelated coordinates; kept for comparison.
    Independent,
}

impl std::str::FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(EmbeddingMode::Shared),
            "independent" => Ok(EmbeddingMode::Independent),
            other => Err(Error::param(
                "embedding_mode",
                format!("expected shared or independent, got {other:?}"),
            )),
        }
    }
}

/// Model and explanation settings. The `seed` fields of `pretrain` and
/// `train` are not read: every seed is derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seq_len: usize,
    pub embedding_dim: usize,
    /// Vocabulary entries kept besides `<pad>` and `<unk>`.
    pub max_vocab: Option<usize>,
    pub pretrain: PretrainConfig,
    pub hidden: usize,
    /// Surrogate hidden width when it differs from the classifier's.
    pub surrogate_hidden: Option<usize>,
    pub train: TrainConfig,
    pub surrogates: usize,
    pub accuracy_floor: f64,
    pub embedding_mode: EmbeddingMode,
    pub top_k: usize,
    /// Fixed norm threshold; `None` derives it from the norm histogram.
    pub threshold: Option<f64>,
    pub threshold_config: ThresholdConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seq_len: 64,
            embedding_dim: 32,
            max_vocab: None,
            pretrain: PretrainConfig {
                init_scale: 0.05,
                ..PretrainConfig::default()
            },
            hidden: 64,
            surrogate_hidden: None,
            train: TrainConfig::default(),
            surrogates: 5,
            accuracy_floor: DEFAULT_ACCURACY_FLOOR,
            embedding_mode: EmbeddingMode::Shared,
            top_k: DEFAULT_TOP_K,
            threshold: None,
            threshold_config: ThresholdConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::param("seq_len", "must be at least 1"));
        }
        if self.embedding_dim == 0 || self.hidden == 0 || self.surrogate_hidden == Some(0) {
            return Err(Error::param("dims", "embedding and hidden widths must be at least 1"));
        }
        if self.surrogates == 0 {
            return Err(Error::param("surrogates", "need at least one surrogate"));
        }
        if self.top_k == 0 {
            return Err(Error::param("top_k", "must be at least 1"));
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::param("threshold", format!("must be positive, got {t}")));
            }
        }
        self.pretrain.validate(self.embedding_dim)?;
        self.train.validate()
    }

    fn classifier_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    fn ensemble_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }

    fn pretrain_seed(&self, member: Option<usize>) -> u64 {
        match member {
            None => derive_seed(self.seed, 3),
            Some(i) => derive_seed(derive_seed(self.seed, 4), i as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    /// Training accuracy of each pre-training run (the shared table first).
    pub pretrain_accuracy: Vec<f64>,
    pub classifier_train_accuracy: f64,
    pub classifier_heldout_accuracy: f64,
    pub surrogate_heldout_accuracy: Vec<f64>,
    pub surrogate_seeds: Vec<u64>,
    pub pretrain_loss: Vec<Vec<f64>>,
    pub classifier_loss: Vec<f64>,
    pub surrogate_loss: Vec<Vec<f64>>,
}

/// The explained classifier, its surrogates and what is needed to encode
/// new text for them.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub vocab: Vocab,
    pub seq_len: usize,
    pub classifier: TextClassifier,
    pub surrogates: Vec<TextClassifier>,
    pub summary: TrainingSummary,
}

fn bags_and_labels(docs: &[EncodedDoc]) -> (Vec<BagOfWords>, Vec<i8>) {
    (docs.iter().map(EncodedDoc::bag).collect(), docs.iter().map(EncodedDoc::signed_label).collect())
}

/// Pre-trains the embedding(s) and trains the classifier and surrogates on
/// `train_docs`; `heldout_docs` gates surrogate quality.
pub fn train_models(
    vocab: Vocab,
    train_docs: &[EncodedDoc],
    heldout_docs: &[EncodedDoc],
    config: &PipelineConfig,
) -> Result<TrainedModels> {
    config.validate()?;
    if train_docs.is_empty() || heldout_docs.is_empty() {
        return Err(Error::param("dataset", "need training and held-out documents"));
    }
    let (train_bags, train_labels) = bags_and_labels(train_docs);
    let (heldout_bags, heldout_labels) = bags_and_labels(heldout_docs);
    let pretrain = |member: Option<usize>| -> Result<(Arc<Embedding>, f64, Vec<f64>)> {
        let seed = config.pretrain_seed(member);
        let id = match member {
            None => format!("shared-{seed:016x}"),
            Some(i) => format!("independent{i}-{seed:016x}"),
        };
        let cfg = PretrainConfig {
            seed,
            ..config.pretrain.clone()
        };
        let out = pretrain_embedding(id, vocab.len(), config.embedding_dim, &train_bags, &train_labels, &cfg)?;
        log::info!("pre-trained embedding {} to accuracy {:.4}", out.embedding.id(), out.train_accuracy);
        Ok((Arc::new(out.embedding), out.train_accuracy, out.loss_trace))
    };
    let (shared, shared_acc, shared_loss) = pretrain(None)?;
    let mut pretrain_accuracy = vec![shared_acc];
    let mut pretrain_loss = vec![shared_loss];
    let member_embeddings: Vec<Arc<Embedding>> = match config.embedding_mode {
        EmbeddingMode::Shared => vec![shared.clone(); config.surrogates],
        EmbeddingMode::Independent => {
            let mut out = Vec::with_capacity(config.surrogates);
            for i in 0..config.surrogates {
                let (e, acc, loss) = pretrain(Some(i))?;
                pretrain_accuracy.push(acc);
                pretrain_loss.push(loss);
                out.push(e);
            }
            out
        }
    };

    let clf_seed = config.classifier_seed();
    let mut clf = TextClassifier::init("classifier", shared.clone(), config.hidden, &mut Rng::new(clf_seed))?;
    clf.set_lineage(vec![config.seed, clf_seed]);
    let cfg = TrainConfig {
        seed: clf_seed,
        ..config.train.clone()
    };
    let out = train(clf, &train_bags, &train_labels, &cfg)?;
    let classifier = out.model;
    let classifier_heldout_accuracy = accuracy(&classifier, &heldout_bags, &heldout_labels);
    log::info!("classifier held-out accuracy {classifier_heldout_accuracy:.4}");

    let width = config.surrogate_hidden.unwrap_or(config.hidden);
    let split = Split {
        train_inputs: &train_bags,
        train_labels: &train_labels,
        heldout_inputs: &heldout_bags,
        heldout_labels: &heldout_labels,
    };
    let ensemble = train_ensemble(
        |i, seed| {
            let mut m = TextClassifier::init(
                format!("surrogate{i}"),
                member_embeddings[i].clone(),
                width,
                &mut Rng::new(seed),
            )?;
            m.set_lineage(vec![config.seed, seed]);
            Ok(m)
        },
        &split,
        &config.train,
        config.surrogates,
        config.ensemble_seed(),
        config.accuracy_floor,
    )?;
    Ok(TrainedModels {
        vocab,
        seq_len: config.seq_len,
        summary: TrainingSummary {
            pretrain_accuracy,
            classifier_train_accuracy: out.train_accuracy,
            classifier_heldout_accuracy,
            surrogate_heldout_accuracy: ensemble.heldout_accuracy.clone(),
            surrogate_seeds: ensemble.seeds.clone(),
            pretrain_loss,
            classifier_loss: out.loss_trace,
            surrogate_loss: ensemble.loss_traces.clone(),
        },
        classifier,
        surrogates: ensemble.members,
    })
}

const BUNDLE_FORMAT: &str = "onmanifold.model_bundle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    file: String,
    embedding_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbeddingFile {
    file: String,
    id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    seq_len: usize,
    vocab: String,
    embeddings: Vec<EmbeddingFile>,
    classifier: ModelFile,
    surrogates: Vec<ModelFile>,
    summary: TrainingSummary,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl TrainedModels {
    /// Writes `manifest.json`, `vocab.json`, one file per embedding table and
    /// one per model into `dir` (created if needed).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut embeddings: Vec<EmbeddingFile> = Vec::new();
        for m in std::iter::once(&self.classifier).chain(&self.surrogates) {
            let e = m.embedding();
            if embeddings.iter().all(|f| f.id != e.id()) {
                let file = format!("embedding{}.json", embeddings.len());
                write(&dir.join(&file), &embedding_to_json(e)?)?;
                embeddings.push(EmbeddingFile {
                    file,
                    id: e.id().to_string(),
                });
            }
        }
        let model_file = |m: &TextClassifier, file: String| -> Result<ModelFile> {
            write(&dir.join(&file), &text_classifier_to_json(m)?)?;
            Ok(ModelFile {
                file,
                embedding_id: m.embedding().id().to_string(),
            })
        };
        let manifest = Manifest {
            format: BUNDLE_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seq_len: self.seq_len,
            vocab: "vocab.json".into(),
            classifier: model_file(&self.classifier, "classifier.json".into())?,
            surrogates: self
                .surrogates
                .iter()
                .enumerate()
                .map(|(i, m)| model_file(m, format!("surrogate{i}.json")))
                .collect::<Result<_>>()?,
            embeddings,
            summary: self.summary.clone(),
        };
        write(&dir.join("vocab.json"), &self.vocab.to_json()?)?;
        write(&dir.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest)?)
    }

    pub fn load(dir: &Path) -> Result<TrainedModels> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: Manifest = serde_json::from_str(&read(&manifest_path)?)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
        if manifest.format != BUNDLE_FORMAT || manifest.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: expected {BUNDLE_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                manifest_path.display(),
                manifest.format,
                manifest.version
            )));
        }
        let vocab = Vocab::from_json(&read(&dir.join(&manifest.vocab))?)?;
        let mut tables: Vec<Arc<Embedding>> = Vec::new();
        for f in &manifest.embeddings {
            let e = embedding_from_json(&read(&dir.join(&f.file))?)?;
            if e.id() != f.id {
                return Err(Error::Checkpoint(format!("{}: embedding id {:?} != manifest {:?}", f.file, e.id(), f.id)));
            }
            if e.vocab_size() != vocab.len() {
                return Err(Error::Checkpoint(format!(
                    "{}: {} rows for a vocabulary of {}",
                    f.file,
                    e.vocab_size(),
                    vocab.len()
                )));
            }
            tables.push(Arc::new(e));
        }
        let load_model = |m: &ModelFile| -> Result<TextClassifier> {
            let table = tables
                .iter()
                .find(|t| t.id() == m.embedding_id)
                .ok_or_else(|| Error::Checkpoint(format!("{}: unknown embedding {:?}", m.file, m.embedding_id)))?;
            text_classifier_from_json(&read(&dir.join(&m.file))?, table.clone())
        };
        Ok(TrainedModels {
            classifier: load_model(&manifest.classifier)?,
            surrogates: manifest.surrogates.iter().map(load_model).collect::<Result<_>>()?,
            vocab,
            seq_len: manifest.seq_len,
            summary: manifest.summary,
        })
    }

    pub fn gradients(&self, doc: &EncodedDoc) -> Result<(WordGradients, Vec<WordGradients>)> {
        let gc = self.classifier.word_gradients(&doc.token_ids)?.with_input_id(doc.doc_id.clone());
        let members = self
            .surrogates
            .iter()
            .map(|m| Ok(m.word_gradients(&doc.token_ids)?.with_input_id(doc.doc_id.clone())))
            .collect::<Result<_>>()?;
        Ok((gc, members))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub value: f64,
    /// Present when the value was derived from the norm histogram.
    pub suggestion: Option<ThresholdSuggestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusExplanation {
    pub threshold: ThresholdRecord,
    pub documents: Vec<ExplanationDocument>,
    /// Documents with no non-pad word.
    pub skipped: Vec<String>,
}

/// Explains every document with both methods. With `threshold = None` the
/// threshold is suggested from the pooled norm profiles of `docs`.
pub fn explain_corpus(
    models: &TrainedModels,
    docs: &[EncodedDoc],
    threshold: Option<f64>,
    threshold_config: &ThresholdConfig,
    k: usize,
) -> Result<CorpusExplanation> {
    struct Prepared<'a> {
        doc: &'a EncodedDoc,
        profile: NormProfile,
        alpha: crate::explain::AlphaScores,
        score: f64,
    }
    let prepared: Vec<Option<Prepared>> = docs
        .par_iter()
        .map(|doc| {
            if doc.pad_mask.iter().all(|&p| p) {
                return Ok(None);
            }
            let (gc, members) = models.gradients(doc)?;
            Ok(Some(Prepared {
                doc,
                profile: norm_profile(&gc)?,
                alpha: alpha_scores(&gc, &members)?,
                score: models.classifier.score(&doc.token_ids)?,
            }))
        })
        .collect::<Result<_>>()?;
    let skipped: Vec<String> = docs
        .iter()
        .zip(&prepared)
        .filter(|(_, p)| p.is_none())
        .map(|(d, _)| d.doc_id.clone())
        .collect();
    for id in &skipped {
        log::warn!("document {id:?} has no words; skipped");
    }
    let prepared: Vec<Prepared> = prepared.into_iter().flatten().collect();
    let record = match threshold {
        Some(value) => ThresholdRecord {
            value,
            suggestion: None,
        },
        None => {
            let profiles: Vec<NormProfile> = prepared.iter().map(|p| p.profile.clone()).collect();
            let s = suggest_threshold(&profiles, threshold_config);
            ThresholdRecord {
                value: s.threshold,
                suggestion: Some(s),
            }
        }
    };
    let dim = models.classifier.embedding_dim();
    let documents: Vec<ExplanationDocument> = prepared
        .iter()
        .map(|p| {
            let mut ours = select_topk(&p.profile, &p.alpha, record.value, k)?;
            ours.input_id = Some(p.doc.doc_id.clone());
            let mut base = select_by_norm(&p.profile, k)?;
            base.input_id = Some(p.doc.doc_id.clone());
            let mut d = ExplanationDocument::new(&p.doc.raw_tokens, &p.profile, &p.alpha, ours, base, dim)?;
            d.label = Some(p.doc.label);
            d.score = Some(p.score);
            Ok(d)
        })
        .collect::<Result<_>>()?;
    let short = documents
        .iter()
        .filter(|d: &&ExplanationDocument| d.ours.status != SelectionStatus::Complete)
        .count();
    if short > 0 {
        log::warn!(
            "{short} of {} documents have fewer than {k} words below threshold {}",
            documents.len(),
            record.value
        );
    }
    Ok(CorpusExplanation {
        threshold: record,
        documents,
        skipped,
    })
}

/// Fraction of the `k` slots filled with a ground-truth position; a short
/// selection counts its empty slots as misses.
pub fn precision_at_k(explanation: &Explanation, truth: &[usize], k: usize) -> f64 {
    let hits = explanation.selected.iter().filter(|w| truth.contains(&w.position)).count();
    hits as f64 / k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedExperimentConfig {
    pub corpus: PlantedCorpusSpec,
    /// The first `train_docs` documents train; the rest are explained and
    /// serve as the held-out split.
    pub train_docs: usize,
    pub pipeline: PipelineConfig,
}

impl Default for PlantedExperimentConfig {
    fn default() -> Self {
        PlantedExperimentConfig {
            corpus: PlantedCorpusSpec::default(),
            train_docs: 2000,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl PlantedExperimentConfig {
    /// Sequence length 500, embedding size 64 and a 32000-token vocabulary
    /// with documents of 200 to 500 tokens. Far slower than the default;
    /// no test runs it.
    pub fn full_scale() -> Self {
        PlantedExperimentConfig {
            corpus: PlantedCorpusSpec {
                vocab_size: 32_000,
                doc_count: 2100,
                min_length: 200,
                max_length: 500,
                ..PlantedCorpusSpec::default()
            },
            train_docs: 2000,
            pipeline: PipelineConfig {
                seq_len: 500,
                embedding_dim: 64,
                ..PipelineConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.pipeline.validate()?;
        if self.train_docs == 0 || self.train_docs >= self.corpus.doc_count {
            return Err(Error::param(
                "train_docs",
                format!("must lie in 1..{}, got {}", self.corpus.doc_count, self.train_docs),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentPrecision {
    pub doc_id: String,
    pub keywords: usize,
    pub ours_hits: usize,
    pub baseline_hits: usize,
    pub ours_selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedReport {
    pub config: PlantedExperimentConfig,
    pub vocab_size: usize,
    pub training: TrainingSummary,
    pub threshold: ThresholdRecord,
    pub ours_precision: f64,
    pub baseline_precision: f64,
    /// `ours_precision - baseline_precision`.
    pub precision_gain: f64,
    pub documents: Vec<DocumentPrecision>,
}

impl PlantedReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Generates the corpus, trains, explains the held-out documents and scores
/// both methods against the planted keyword positions.
pub fn run_planted_experiment(config: &PlantedExperimentConfig) -> Result<(PlantedReport, TrainedModels, CorpusExplanation)> {
    config.validate()?;
    let corpus = generate_planted_corpus(&config.corpus)?;
    let (train_part, test_part) = corpus.split(config.train_docs);
    let tokens: Vec<Vec<String>> = train_part.iter().map(|d| d.tokens.clone()).collect();
    let vocab = Vocab::build(&tokens, config.pipeline.max_vocab);
    let n = config.pipeline.seq_len;
    let train_docs = PlantedCorpus::encode_docs(train_part, &vocab, n)?;
    let test_docs = PlantedCorpus::encode_docs(test_part, &vocab, n)?;
    let models = train_models(vocab, &train_docs, &test_docs, &config.pipeline)?;
    let k = config.pipeline.top_k;
    let explained = explain_corpus(
        &models,
        &test_docs,
        config.pipeline.threshold,
        &config.pipeline.threshold_config,
        k,
    )?;
    let mut documents = Vec::with_capacity(explained.documents.len());
    for (doc, planted) in explained.documents.iter().zip(test_part) {
        debug_assert_eq!(doc.input_id.as_deref(), Some(planted.doc_id.as_str()));
        let truth: Vec<usize> = planted.keyword_positions.iter().copied().filter(|&j| j < n).collect();
        let hits = |e: &Explanation| e.selected.iter().filter(|w| truth.contains(&w.position)).count();
        documents.push(DocumentPrecision {
            doc_id: planted.doc_id.clone(),
            keywords: truth.len(),
            ours_hits: hits(&doc.ours),
            baseline_hits: hits(&doc.max_norm),
            ours_selected: doc.ours.selected.len(),
        });
    }
    let ours: Vec<f64> = documents.iter().map(|d| d.ours_hits as f64 / k as f64).collect();
    let base: Vec<f64> = documents.iter().map(|d| d.baseline_hits as f64 / k as f64).collect();
    let ours_precision = mean(&ours).unwrap_or(0.0);
    let baseline_precision = mean(&base).unwrap_or(0.0);
    let report = PlantedReport {
        config: config.clone(),
        vocab_size: models.vocab.len(),
        training: models.summary.clone(),
        threshold: explained.threshold.clone(),
        ours_precision,
        baseline_precision,
        precision_gain: ours_precision - baseline_precision,
        documents,
    };
    Ok((report, models, explained))
}
