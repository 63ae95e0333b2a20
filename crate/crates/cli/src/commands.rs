//! Configuration records and bodies of the subcommands.
//!
//! Every command computes all of its outputs before writing any of them, so
//! a failed run leaves at most the files of a previous run behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use onmanifold::explain::{
    histogram_csv, histogram_html, histogram_svg, manifold_report, norm_profile, suggest_threshold,
    NormProfile, ThresholdConfig, DEFAULT_TOP_K,
};
use onmanifold::nets::TextClassifier;
use onmanifold::numerics::{Mat, Rng, DEFAULT_VARIANCE_CUTOFF};
use onmanifold::pipeline::{explain_corpus, precision_at_k, train_models, PipelineConfig, TrainedModels};
use onmanifold::textpipe::{
    encode, generate_planted_corpus, load_csv_corpus, CsvSchema, EncodedDoc, PlantedCorpus, PlantedCorpusSpec,
    Tokenizer, Vocab,
};
use onmanifold::training::write_loss_trace;
use onmanifold::verify::{
    check_text_gradient, check_two_layer_gradient, corollary_scaling, norm_tail_experiment,
    offmanifold_norm_experiment, theorem_monte_carlo, GradCheckConfig, OffManifoldParams, TheoremTrialParams,
    Verdict,
};

/// Files produced by a command, keyed by name relative to the run directory.
#[derive(Debug, Default)]
pub struct Outputs {
    files: BTreeMap<PathBuf, Vec<u8>>,
    /// Model bundle to save under the run directory.
    bundle: Option<(PathBuf, TrainedModels)>,
    /// False when a verification assertion failed.
    pub passed: bool,
    pub summary: Vec<String>,
}

impl Outputs {
    fn new() -> Self {
        Outputs {
            passed: true,
            ..Outputs::default()
        }
    }

    fn text(&mut self, name: impl Into<PathBuf>, text: impl Into<String>) {
        self.files.insert(name.into(), text.into().into_bytes());
    }

    fn json<T: Serialize>(&mut self, name: impl Into<PathBuf>, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(name, text);
        Ok(())
    }

    fn say(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    pub fn write(self, dir: &Path) -> Result<()> {
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        if let Some((name, models)) = &self.bundle {
            models.save(&dir.join(name))?;
        }
        Ok(())
    }
}

fn required(path: &str, key: &str) -> Result<PathBuf> {
    if path.is_empty() {
        bail!("`{key}` is required (flag --{} or key `{key}`)", key.replace('_', "-"));
    }
    Ok(PathBuf::from(path))
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> onmanifold::error::Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(String::from_utf8(buf)?)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenDataConfig {
    pub corpus: PlantedCorpusSpec,
}

pub fn gen_data(cfg: &GenDataConfig) -> Result<Outputs> {
    let corpus = generate_planted_corpus(&cfg.corpus)?;
    let mut out = Outputs::new();
    out.text("corpus.csv", csv_bytes(|b| corpus.write_csv(b))?);
    out.text("corpus.truth.json", corpus.sidecar_json()?);
    out.say(format!(
        "generated {} documents over {} tokens",
        corpus.docs.len(),
        cfg.corpus.vocab_size
    ));
    Ok(out)
}

fn load_docs(path: &Path, schema: &CsvSchema, tokenizer: &Tokenizer) -> Result<Vec<(String, Vec<String>, u8)>> {
    let corpus = load_csv_corpus(path, schema)?;
    for e in &corpus.errors {
        log::warn!("{}: row {}: {}; skipped", path.display(), e.row, e.reason);
    }
    if corpus.docs.is_empty() {
        bail!("{}: no usable rows", path.display());
    }
    Ok(corpus
        .docs
        .into_iter()
        .map(|d| (d.doc_id, tokenizer.tokenize(&d.text), d.label))
        .collect())
}

fn encode_all(docs: &[(String, Vec<String>, u8)], vocab: &Vocab, n: usize) -> Result<Vec<EncodedDoc>> {
    Ok(docs
        .iter()
        .map(|(id, toks, label)| encode(toks, vocab, n, *label, id.clone()))
        .collect::<onmanifold::error::Result<_>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    /// CSV corpus; the last `heldout_docs` rows are held out.
    pub corpus: String,
    pub schema: CsvSchema,
    pub tokenizer: Tokenizer,
    pub heldout_docs: usize,
    pub pipeline: PipelineConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            corpus: String::new(),
            schema: CsvSchema::default(),
            tokenizer: Tokenizer::default(),
            heldout_docs: 100,
            pipeline: PipelineConfig::default(),
        }
    }
}

pub const MODEL_DIR: &str = "model";
const TOKENIZER_FILE: &str = "tokenizer.json";

pub fn train(cfg: &TrainRunConfig) -> Result<Outputs> {
    let path = required(&cfg.corpus, "corpus")?;
    let docs = load_docs(&path, &cfg.schema, &cfg.tokenizer)?;
    if cfg.heldout_docs == 0 || cfg.heldout_docs >= docs.len() {
        bail!(
            "`heldout_docs` must lie in 1..{} for {} rows, got {}",
            docs.len(),
            docs.len(),
            cfg.heldout_docs
        );
    }
    let (train_part, heldout_part) = docs.split_at(docs.len() - cfg.heldout_docs);
    let tokens: Vec<Vec<String>> = train_part.iter().map(|d| d.1.clone()).collect();
    let vocab = Vocab::build(&tokens, cfg.pipeline.max_vocab);
    let n = cfg.pipeline.seq_len;
    let train_docs = encode_all(train_part, &vocab, n)?;
    let heldout_docs = encode_all(heldout_part, &vocab, n)?;
    let models = train_models(vocab, &train_docs, &heldout_docs, &cfg.pipeline)?;

    let mut out = Outputs::new();
    let s = &models.summary;
    out.json("training.json", s)?;
    out.text("loss/classifier.csv", csv_bytes(|b| write_loss_trace(b, &s.classifier_loss))?);
    for (i, trace) in s.surrogate_loss.iter().enumerate() {
        out.text(format!("loss/surrogate{i}.csv"), csv_bytes(|b| write_loss_trace(b, trace))?);
    }
    for (i, trace) in s.pretrain_loss.iter().enumerate() {
        out.text(format!("loss/pretrain{i}.csv"), csv_bytes(|b| write_loss_trace(b, trace))?);
    }
    let lineage: BTreeMap<String, Vec<u64>> = std::iter::once(&models.classifier)
        .chain(&models.surrogates)
        .map(|m| (m.name().to_string(), m.lineage().to_vec()))
        .collect();
    out.json("lineage.json", &lineage)?;
    out.json(Path::new(MODEL_DIR).join(TOKENIZER_FILE), &cfg.tokenizer)?;
    out.say(format!(
        "vocabulary {} tokens; classifier accuracy {:.4} train, {:.4} held-out; surrogates held-out {:?}",
        models.vocab.len(),
        s.classifier_train_accuracy,
        s.classifier_heldout_accuracy,
        s.surrogate_heldout_accuracy
    ));
    out.bundle = Some((PathBuf::from(MODEL_DIR), models));
    Ok(out)
}

fn load_bundle(model: &str) -> Result<(TrainedModels, Option<Tokenizer>)> {
    let dir = required(model, "model")?;
    let models = TrainedModels::load(&dir)?;
    let tok_path = dir.join(TOKENIZER_FILE);
    let tokenizer = if tok_path.exists() {
        let text = std::fs::read_to_string(&tok_path).with_context(|| format!("reading {}", tok_path.display()))?;
        Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", tok_path.display()))?)
    } else {
        None
    };
    Ok((models, tokenizer))
}

/// Which selection the per-document CSV lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Both,
    Ours,
    MaxNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainRunConfig {
    /// Model bundle directory written by `train`.
    pub model: String,
    /// CSV corpus of documents to explain.
    pub input: String,
    pub schema: CsvSchema,
    /// Defaults to the tokenizer recorded in the bundle.
    pub tokenizer: Option<Tokenizer>,
    /// Fixed norm threshold; `none` suggests one from the input documents.
    pub threshold: Option<f64>,
    pub threshold_config: ThresholdConfig,
    pub k: usize,
    pub method: MethodChoice,
    /// Ground-truth sidecar from `gen-data`; adds precision@k.
    pub truth: Option<String>,
}

impl Default for ExplainRunConfig {
    fn default() -> Self {
        ExplainRunConfig {
            model: String::new(),
            input: String::new(),
            schema: CsvSchema::default(),
            tokenizer: None,
            threshold: None,
            threshold_config: ThresholdConfig::default(),
            k: DEFAULT_TOP_K,
            method: MethodChoice::Both,
            truth: None,
        }
    }
}

/// A file name for `doc_id` that sorts in input order.
fn doc_file_stem(index: usize, doc_id: &str) -> String {
    let safe: String = doc_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .take(48)
        .collect();
    format!("{index:05}_{safe}")
}

#[derive(Debug, Serialize)]
struct PrecisionSummary {
    k: usize,
    documents: usize,
    ours: f64,
    max_norm: f64,
    gain: f64,
}

pub fn explain(cfg: &ExplainRunConfig) -> Result<Outputs> {
    if cfg.k == 0 {
        bail!("`k` must be at least 1");
    }
    let (models, bundle_tokenizer) = load_bundle(&cfg.model)?;
    let input = required(&cfg.input, "input")?;
    let tokenizer = cfg.tokenizer.or(bundle_tokenizer).unwrap_or_default();
    let docs = encode_all(&load_docs(&input, &cfg.schema, &tokenizer)?, &models.vocab, models.seq_len)?;
    let explained = explain_corpus(&models, &docs, cfg.threshold, &cfg.threshold_config, cfg.k)?;

    let mut out = Outputs::new();
    out.json("explanations.json", &explained)?;
    if let Some(s) = &explained.threshold.suggestion {
        out.text("histogram.csv", histogram_csv(&s.histogram));
        out.text("histogram.svg", histogram_svg(&s.histogram, Some(s.threshold)));
        out.text("histogram.html", histogram_html(&s.histogram, Some(s.threshold), "Normalized gradient norms"));
    }
    let mut rows = String::from("doc_id,method,rank,position,token,alpha,normalized_norm\n");
    let mut index = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Explanations</title></head>\n<body style=\"font-family:sans-serif\">\n<h1>Explanations</h1>\n<ul>\n",
    );
    for (i, d) in explained.documents.iter().enumerate() {
        let id = d.input_id.clone().unwrap_or_default();
        let stem = doc_file_stem(i, &id);
        out.text(format!("docs/{stem}.json"), d.to_json()?);
        out.text(format!("docs/{stem}.html"), d.to_html());
        index.push_str(&format!(
            "<li><a href=\"docs/{stem}.html\">{}</a></li>\n",
            onmanifold::explain::escape_html(&id)
        ));
        let chosen: Vec<&onmanifold::explain::Explanation> = match cfg.method {
            MethodChoice::Both => vec![&d.ours, &d.max_norm],
            MethodChoice::Ours => vec![&d.ours],
            MethodChoice::MaxNorm => vec![&d.max_norm],
        };
        for e in chosen {
            for (rank, w) in e.selected.iter().enumerate() {
                let alpha = w.alpha.map(|a| a.to_string()).unwrap_or_default();
                rows.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    csv_field(&id),
                    e.method.as_str(),
                    rank + 1,
                    w.position,
                    csv_field(w.token.as_deref().unwrap_or("")),
                    alpha,
                    w.normalized_norm
                ));
            }
        }
    }
    index.push_str("</ul>\n</body></html>\n");
    out.text("index.html", index);
    out.text("selections.csv", rows);

    if let Some(truth) = &cfg.truth {
        let truth_path = PathBuf::from(truth);
        let planted = PlantedCorpus::load(&input, &truth_path)?;
        let by_id: BTreeMap<&str, &[usize]> = planted
            .docs
            .iter()
            .map(|d| (d.doc_id.as_str(), d.keyword_positions.as_slice()))
            .collect();
        let (mut ours, mut base) = (Vec::new(), Vec::new());
        for d in &explained.documents {
            let id = d.input_id.as_deref().unwrap_or_default();
            let positions = by_id
                .get(id)
                .with_context(|| format!("{}: no ground truth for document {id:?}", truth_path.display()))?;
            ours.push(precision_at_k(&d.ours, positions, cfg.k));
            base.push(precision_at_k(&d.max_norm, positions, cfg.k));
        }
        let mean = |v: &[f64]| onmanifold::numerics::mean(v).unwrap_or(0.0);
        let p = PrecisionSummary {
            k: cfg.k,
            documents: ours.len(),
            ours: mean(&ours),
            max_norm: mean(&base),
            gain: mean(&ours) - mean(&base),
        };
        out.say(format!("precision@{}: ours {:.4}, max-norm {:.4}", p.k, p.ours, p.max_norm));
        out.json("precision.json", &p)?;
    }
    out.say(format!(
        "explained {} documents at threshold {:.4}{}",
        explained.documents.len(),
        explained.threshold.value,
        if explained.skipped.is_empty() {
            String::new()
        } else {
            format!("; skipped {} empty", explained.skipped.len())
        }
    ));
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Theorem,
    Corollary,
    NormTail,
    Offmanifold,
    Gradcheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryConfig {
    pub codims: Vec<usize>,
    pub width: usize,
    pub trials: usize,
    pub seed: u64,
    /// Largest allowed relative deviation from the fitted curve.
    pub tolerance: f64,
}

impl Default for CorollaryConfig {
    fn default() -> Self {
        CorollaryConfig {
            codims: vec![64, 256, 1024],
            width: 1024,
            trials: 200,
            seed: 0,
            tolerance: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormTailConfig {
    pub dims: Vec<usize>,
    /// Per-coordinate variance; `none` uses `1/n`.
    pub variance: Option<f64>,
    pub draws: usize,
    pub seed: u64,
}

impl Default for NormTailConfig {
    fn default() -> Self {
        NormTailConfig {
            dims: vec![64, 256],
            variance: None,
            draws: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffManifoldRunConfig {
    pub params: OffManifoldParams,
    pub min_init_cosine: f64,
}

impl Default for OffManifoldRunConfig {
    fn default() -> Self {
        OffManifoldRunConfig {
            params: OffManifoldParams::default(),
            min_init_cosine: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRunConfig {
    pub config: GradCheckConfig,
    pub two_layer_dim: usize,
    pub two_layer_width: usize,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden: usize,
    pub length: usize,
    pub pad: usize,
    pub seed: u64,
}

impl Default for GradCheckRunConfig {
    fn default() -> Self {
        GradCheckRunConfig {
            config: GradCheckConfig::default(),
            two_layer_dim: 64,
            two_layer_width: 128,
            vocab_size: 200,
            embedding_dim: 32,
            hidden: 64,
            length: 64,
            pad: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRunConfig {
    pub experiments: Vec<Experiment>,
    pub theorem: TheoremTrialParams,
    pub corollary: CorollaryConfig,
    pub norm_tail: NormTailConfig,
    pub offmanifold: OffManifoldRunConfig,
    pub gradcheck: GradCheckRunConfig,
}

impl Default for VerifyRunConfig {
    fn default() -> Self {
        VerifyRunConfig {
            experiments: vec![Experiment::Theorem],
            theorem: TheoremTrialParams::default(),
            corollary: CorollaryConfig::default(),
            norm_tail: NormTailConfig::default(),
            offmanifold: OffManifoldRunConfig::default(),
            gradcheck: GradCheckRunConfig::default(),
        }
    }
}

pub fn verify(cfg: &VerifyRunConfig) -> Result<Outputs> {
    if cfg.experiments.is_empty() {
        bail!("`experiments` lists nothing to run");
    }
    let mut out = Outputs::new();
    let mut verdicts: BTreeMap<&'static str, bool> = BTreeMap::new();
    for exp in &cfg.experiments {
        match exp {
            Experiment::Theorem => {
                let r = theorem_monte_carlo(&cfg.theorem)?;
                let decomposition_ok = r.max_decomposition_error.is_none_or(|e| e <= 1e-10);
                out.say(format!("theorem: {}", r.summary()));
                if let Some(e) = r.max_decomposition_error {
                    out.say(format!("theorem: largest decomposition error {e:.3e}"));
                }
                out.text("theorem_trials.csv", csv_bytes(|b| r.write_csv(b))?);
                out.text("theorem.json", r.to_json()?);
                verdicts.insert("theorem", r.passed && decomposition_ok);
            }
            Experiment::Corollary => {
                let c = &cfg.corollary;
                let (fit, _) = corollary_scaling(&c.codims, c.width, c.trials, c.seed)?;
                let ok = fit.max_relative_deviation <= c.tolerance;
                out.say(format!(
                    "corollary: mean |cos| ~ {:.4}/sqrt(codim), largest deviation {:.3} (limit {})",
                    fit.coefficient, fit.max_relative_deviation, c.tolerance
                ));
                out.json("corollary.json", &fit)?;
                verdicts.insert("corollary", ok);
            }
            Experiment::NormTail => {
                let c = &cfg.norm_tail;
                let mut reports = Vec::new();
                for &n in &c.dims {
                    let var = c.variance.unwrap_or(1.0 / n as f64);
                    let r = norm_tail_experiment(n, var, c.draws, c.seed)?;
                    out.say(format!(
                        "norm tail n={n}: empirical {:.3e} vs bound {:.3e} + slack {:.3e}",
                        r.empirical, r.bound, r.slack
                    ));
                    reports.push(r);
                }
                verdicts.insert("norm_tail", reports.iter().all(|r| r.passed));
                out.json("norm_tail.json", &reports)?;
            }
            Experiment::Offmanifold => {
                let c = &cfg.offmanifold;
                let r = offmanifold_norm_experiment(&c.params)?;
                out.say(format!(
                    "off-manifold: held-out accuracy {:.4}, norm ratio {:.3} (init {:.3}), median init cosine {:.4}, verdict {:?}",
                    r.heldout_accuracy, r.ratio, r.init_ratio, r.median_init_cosine, r.verdict
                ));
                verdicts.insert(
                    "offmanifold",
                    r.verdict == Verdict::Pass && r.median_init_cosine >= c.min_init_cosine,
                );
                out.json("offmanifold.json", &r)?;
            }
            Experiment::Gradcheck => {
                let g = &cfg.gradcheck;
                let mut rng = Rng::new(g.seed);
                let net = onmanifold::nets::TwoLayerNet::init(g.two_layer_dim, g.two_layer_width, &mut rng)?;
                let two = check_two_layer_gradient(&net, &g.config, &mut rng)?;
                let emb = std::sync::Arc::new(onmanifold::nets::Embedding::random(
                    "gradcheck",
                    g.vocab_size,
                    g.embedding_dim,
                    1.0,
                    &mut rng,
                )?);
                let clf = TextClassifier::init("gradcheck", emb, g.hidden, &mut rng)?;
                let text = check_text_gradient(&clf, g.length, g.pad, &g.config, &mut rng)?;
                out.say(format!(
                    "gradcheck: two-layer max rel. error {:.2e} ({} failures), text {:.2e} ({} failures)",
                    two.max_relative_error, two.failures, text.max_relative_error, text.failures
                ));
                verdicts.insert("gradcheck", two.passed && text.passed);
                out.json("gradcheck.json", &serde_json::json!({ "two_layer": two, "text": text }))?;
            }
        }
    }
    out.passed = verdicts.values().all(|&v| v);
    for (name, ok) in &verdicts {
        out.say(format!("{name}: {}", if *ok { "PASS" } else { "FAIL" }));
    }
    out.json("verify_summary.json", &verdicts)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRunConfig {
    pub model: String,
    /// Optional CSV corpus whose norm histogram is reported.
    pub input: Option<String>,
    pub schema: CsvSchema,
    pub tokenizer: Option<Tokenizer>,
    pub cutoff: f64,
    pub threshold_config: ThresholdConfig,
}

impl Default for AnalyzeRunConfig {
    fn default() -> Self {
        AnalyzeRunConfig {
            model: String::new(),
            input: None,
            schema: CsvSchema::default(),
            tokenizer: None,
            cutoff: DEFAULT_VARIANCE_CUTOFF,
            threshold_config: ThresholdConfig::default(),
        }
    }
}

pub fn analyze(cfg: &AnalyzeRunConfig) -> Result<Outputs> {
    let (models, bundle_tokenizer) = load_bundle(&cfg.model)?;
    let mut out = Outputs::new();
    // Rows 0 and 1 are <pad> and <unk>.
    let table = models.classifier.embedding().table();
    if table.rows() < 3 {
        bail!("embedding has no ordinary token rows");
    }
    let rows: Vec<&[f64]> = (2..table.rows()).map(|i| table.row(i)).collect();
    let words = Mat::from_rows(&rows)?;
    let report = manifold_report(&words, cfg.cutoff)?;
    out.say(match report.components_for_cutoff {
        Some(c) => format!(
            "embedding: {c} components explain {:.0}% of the variance of {} word vectors in dimension {}",
            100.0 * cfg.cutoff,
            words.rows(),
            words.cols()
        ),
        None => format!("embedding: the {} word vectors have no variance", words.rows()),
    });
    out.text("manifold.json", report.to_json()?);
    out.text("manifold.csv", report.curve_csv());
    out.text("manifold.svg", report.curve_svg());
    out.text("manifold.html", report.to_html("Embedding variance"));

    if let Some(input) = &cfg.input {
        let tokenizer = cfg.tokenizer.or(bundle_tokenizer).unwrap_or_default();
        let docs = encode_all(
            &load_docs(Path::new(input), &cfg.schema, &tokenizer)?,
            &models.vocab,
            models.seq_len,
        )?;
        let profiles: Vec<NormProfile> = docs
            .iter()
            .filter(|d| d.non_pad() > 0)
            .map(|d| norm_profile(&models.classifier.word_gradients(&d.token_ids)?))
            .collect::<onmanifold::error::Result<_>>()?;
        let s = suggest_threshold(&profiles, &cfg.threshold_config);
        out.say(format!(
            "norms: suggested threshold {:.4}{}",
            s.threshold,
            if s.used_fallback { " (fallback)" } else { "" }
        ));
        out.text("histogram.csv", histogram_csv(&s.histogram));
        out.text("histogram.svg", histogram_svg(&s.histogram, Some(s.threshold)));
        out.text("histogram.html", histogram_html(&s.histogram, Some(s.threshold), "Normalized gradient norms"));
        out.json("threshold.json", &s)?;
    }
    Ok(out)
}
