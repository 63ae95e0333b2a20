//! Task pre-training of the shared embedding table.
//!
//! A throwaway classifier head and the embedding are trained jointly; the
//! resulting table is then frozen and shared by the explained classifier and
//! every surrogate. With `rank = Some(r)` the table starts in, and is only
//! ever updated within, a random `r`-dimensional subspace of `R^p`, so the
//! embedded data lies on a linear manifold of known dimension.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::models::{head_gradient, token_input_gradient, TokenPass};
use super::Loss;
use crate::error::{check_len, Error, Result};
use crate::nets::{BagOfWords, Embedding, TextClassifier};
use crate::numerics::{axpy, dot, Mat, Rng};
use crate::subspace::SubspaceBasis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Embedding rows move `embedding_lr_scale` times faster than the head.
    /// Each row's gradient is diluted by the number of documents, so the
    /// scale is typically of the order of the training-set size.
    pub embedding_lr_scale: f64,
    /// Standard deviation of the initial table entries (per subspace
    /// coordinate when `rank` is set).
    pub init_scale: f64,
    pub rank: Option<usize>,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            hidden: 64,
            epochs: 100,
            learning_rate: 0.5,
            embedding_lr_scale: 200.0,
            init_scale: 0.3,
            rank: Some(4),
            loss: Loss::Logistic,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::param("pretrain.hidden", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::param("pretrain.epochs", "must be at least 1"));
        }
        for (name, v) in [
            ("pretrain.learning_rate", self.learning_rate),
            ("pretrain.embedding_lr_scale", self.embedding_lr_scale),
            ("pretrain.init_scale", self.init_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if let Some(r) = self.rank {
            if r == 0 || r > dim {
                return Err(Error::param(
                    "pretrain.rank",
                    format!("must lie in 1..={dim}, got {r}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub embedding: Embedding,
    pub loss_trace: Vec<f64>,
    pub train_accuracy: f64,
}

/// Pre-trains a `vocab_size x dim` table on labeled bags of words.
pub fn pretrain_embedding(
    id: impl Into<String>,
    vocab_size: usize,
    dim: usize,
    bags: &[BagOfWords],
    labels: &[i8],
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    config.validate(dim)?;
    if bags.is_empty() {
        return Err(Error::param("dataset", "pre-training set is empty"));
    }
    check_len("pre-training labels", bags.len(), labels.len())?;
    let mut rng = Rng::new(config.seed);

    // Row basis of the update subspace; `None` means all of R^p.
    let basis: Option<Mat> = match config.rank {
        Some(r) if r < dim => Some(SubspaceBasis::random(dim, dim - r, &mut rng)?.basis_on().clone()),
        _ => None,
    };
    let mut table = Mat::zeros(vocab_size, dim);
    for t in 1..vocab_size {
        let row = match &basis {
            Some(b) => b.tr_matvec(&rng.gaussian_vector(b.rows(), config.init_scale.powi(2)))?,
            None => rng.gaussian_vector(dim, config.init_scale.powi(2)),
        };
        table.row_mut(t).copy_from_slice(&row);
    }

    let start = Arc::new(Embedding::new("pretraining", table.clone())?);
    let mut head = TextClassifier::init("pretraining-head", start.clone(), config.hidden, &mut rng)?;
    for bag in bags {
        for &(t, _) in &bag.entries {
            start.check_token(t)?;
        }
    }

    let refs: Vec<&BagOfWords> = bags.iter().collect();
    let n = bags.len() as f64;
    let emb_lr = config.learning_rate * config.embedding_lr_scale;
    let mut params = head.head_parameters();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let pass = TokenPass::compute(&head, &table, &refs);
        let c = params[params.len() - 1];
        let mut loss = 0.0;
        let mut dscores = Vec::with_capacity(bags.len());
        for (bag, &y) in bags.iter().zip(labels) {
            let s = c + bag
                .entries
                .iter()
                .map(|&(t, w)| w * pass.contribution[t as usize])
                .sum::<f64>();
            let (l, dl) = config.loss.eval(s, y);
            loss += l;
            dscores.push(dl / n);
        }
        trace.push(loss / n);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, trace });
        }
        let dtoken = pass.token_sensitivities(&refs, &dscores);
        let mut grad = vec![0.0; params.len()];
        head_gradient(&head, &table, &pass, &dtoken, &dscores, &mut grad);

        for &t in &pass.tokens {
            let dt = dtoken[t as usize];
            if dt == 0.0 {
                continue;
            }
            let mut g = token_input_gradient(&head, &pass.preactivations[t as usize]);
            if let Some(b) = &basis {
                let coords: Vec<f64> = b.iter_rows().map(|q| dot(q, &g)).collect();
                g = b.tr_matvec(&coords)?;
            }
            axpy(-emb_lr * dt, &g, table.row_mut(t as usize));
        }
        axpy(-config.learning_rate, &grad, &mut params);
        head.set_head_parameters(&params);
        if !table.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, trace });
        }
    }

    let embedding = Embedding::new(id, table)?;
    head.replace_embedding(Arc::new(embedding.clone()));
    let hits = bags
        .iter()
        .zip(labels)
        .filter(|(b, &y)| {
            head.score_bag(b)
                .map(|s| (s >= 0.0) == (y > 0))
                .unwrap_or(false)
        })
        .count();
    Ok(PretrainOutcome {
        embedding,
        loss_trace: trace,
        train_accuracy: hits as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::pca;

    /// Tokens 2..6 mark class +1, 6..10 class -1, 10.. are neutral.
    fn keyword_bags(n: usize, seed: u64) -> (Vec<BagOfWords>, Vec<i8>) {
        let mut rng = Rng::new(seed);
        let mut bags = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y: i8 = if i % 2 == 0 { 1 } else { -1 };
            let kw = if y > 0 { 2 } else { 6 };
            let mut toks: Vec<u32> = (0..12).map(|_| 10 + rng.below(30) as u32).collect();
            toks.push(kw + rng.below(4) as u32);
            bags.push(BagOfWords::from_tokens(&toks));
            labels.push(y);
        }
        (bags, labels)
    }

    #[test]
    fn pretraining_learns_task_and_stays_in_subspace() {
        let (bags, labels) = keyword_bags(300, 1);
        let cfg = PretrainConfig {
            hidden: 16,
            epochs: 200,
            embedding_lr_scale: 30.0,
            rank: Some(3),
            seed: 5,
            ..PretrainConfig::default()
        };
        let out = pretrain_embedding("e", 40, 8, &bags, &labels, &cfg).unwrap();
        assert!(out.train_accuracy >= 0.95, "{}", out.train_accuracy);
        assert!(out.loss_trace.last().unwrap() < &out.loss_trace[0]);
        assert_eq!(out.embedding.vector(0).unwrap(), &[0.0; 8]);
        let rows = Mat::from_rows(&out.embedding.table().iter_rows().skip(1).collect::<Vec<_>>()).unwrap();
        let res = pca(&rows).unwrap();
        assert!(res.component_variances[3] < 1e-12 * res.component_variances[0], "{:?}", res.component_variances);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let (bags, labels) = keyword_bags(50, 2);
        let cfg = PretrainConfig {
            hidden: 8,
            epochs: 5,
            ..PretrainConfig::default()
        };
        let a = pretrain_embedding("e", 40, 6, &bags, &labels, &cfg).unwrap();
        let b = pretrain_embedding("e", 40, 6, &bags, &labels, &cfg).unwrap();
        assert_eq!(a.embedding, b.embedding);
    }

    #[test]
    fn rejects_bad_rank_and_unknown_tokens() {
        let (bags, labels) = keyword_bags(10, 3);
        let cfg = PretrainConfig {
            rank: Some(9),
            ..PretrainConfig::default()
        };
        assert!(pretrain_embedding("e", 40, 8, &bags, &labels, &cfg).is_err());
        let cfg = PretrainConfig::default();
        assert!(matches!(
            pretrain_embedding("e", 20, 8, &bags, &labels, &cfg),
            Err(Error::OutOfVocabulary { .. })
        ));
    }
}
