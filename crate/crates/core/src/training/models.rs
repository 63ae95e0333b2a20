//! [`Trainable`] implementations for the two network types.

use rayon::prelude::*;

use super::Trainable;
use crate::nets::{BagOfWords, TextClassifier, TwoLayerNet};
use crate::numerics::{axpy, Mat};

/// Examples per parallel work unit. Partial gradients are summed in chunk
/// order, so results do not depend on the thread count.
const CHUNK: usize = 64;

/// Only the hidden weights `W` are trained; the output signs stay fixed.
impl Trainable for TwoLayerNet {
    type Example = Vec<f64>;
    type Cache = Vec<Vec<f64>>;

    fn parameters(&self) -> Vec<f64> {
        self.weights().as_slice().to_vec()
    }

    fn set_parameters(&mut self, params: &[f64]) {
        self.weights_mut().as_mut_slice().copy_from_slice(params);
    }

    fn forward_batch(&self, batch: &[&Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let pre: Vec<Vec<f64>> = batch
            .par_iter()
            .with_min_len(CHUNK)
            .map(|x| self.weights().matvec(x).expect("input dimension checked by caller"))
            .collect();
        let u = self.output_weights();
        let scores = pre
            .iter()
            .map(|z| z.iter().zip(u).map(|(z, u)| u * z.max(0.0)).sum())
            .collect();
        (scores, pre)
    }

    fn backward_batch(&self, batch: &[&Vec<f64>], cache: &Vec<Vec<f64>>, dscores: &[f64], grad: &mut [f64]) {
        let (m, d) = (self.width(), self.input_dim());
        let u = self.output_weights();
        let partials: Vec<Vec<f64>> = batch
            .par_chunks(CHUNK)
            .zip(cache.par_chunks(CHUNK))
            .zip(dscores.par_chunks(CHUNK))
            .map(|((xs, zs), ds)| {
                let mut g = vec![0.0; m * d];
                for ((x, z), &dsc) in xs.iter().zip(zs).zip(ds) {
                    if dsc == 0.0 {
                        continue;
                    }
                    for i in 0..m {
                        if z[i] >= 0.0 {
                            axpy(dsc * u[i], x, &mut g[i * d..(i + 1) * d]);
                        }
                    }
                }
                g
            })
            .collect();
        for p in partials {
            axpy(1.0, &p, grad);
        }
    }

    fn validate_example(&self, x: &Vec<f64>) -> crate::Result<()> {
        crate::error::check_len("TwoLayerNet training input", self.input_dim(), x.len())
    }
}

/// Head parameters `[A, b, v, c]` are trained; the embedding is frozen.
///
/// A batch is scored through per-token contributions: each distinct token
/// in the batch goes through the hidden layer once.
impl Trainable for TextClassifier {
    type Example = BagOfWords;
    type Cache = TokenPass;

    fn parameters(&self) -> Vec<f64> {
        self.head_parameters()
    }

    fn set_parameters(&mut self, params: &[f64]) {
        self.set_head_parameters(params);
    }

    fn forward_batch(&self, batch: &[&BagOfWords]) -> (Vec<f64>, TokenPass) {
        let pass = TokenPass::compute(self, self.embedding().table(), batch);
        let c = self.output_bias();
        let scores = batch
            .iter()
            .map(|bag| {
                c + bag
                    .entries
                    .iter()
                    .map(|&(t, w)| w * pass.contribution[t as usize])
                    .sum::<f64>()
            })
            .collect();
        (scores, pass)
    }

    fn backward_batch(&self, batch: &[&BagOfWords], pass: &TokenPass, dscores: &[f64], grad: &mut [f64]) {
        let dtoken = pass.token_sensitivities(batch, dscores);
        head_gradient(self, self.embedding().table(), pass, &dtoken, dscores, grad);
    }

    fn validate_example(&self, bag: &BagOfWords) -> crate::Result<()> {
        for &(t, _) in &bag.entries {
            self.embedding().check_token(t)?;
        }
        Ok(())
    }
}

/// Hidden pre-activations and contributions of the distinct tokens of a
/// batch. Entries for tokens absent from the batch are left empty.
pub struct TokenPass {
    pub(crate) tokens: Vec<u32>,
    /// `preactivations[t]` is `A e_t + b` (empty if `t` is absent).
    pub(crate) preactivations: Vec<Vec<f64>>,
    pub(crate) contribution: Vec<f64>,
}

impl TokenPass {
    pub(crate) fn compute(clf: &TextClassifier, table: &Mat, batch: &[&BagOfWords]) -> TokenPass {
        let vocab = table.rows();
        let mut seen = vec![false; vocab];
        for bag in batch {
            for &(t, _) in &bag.entries {
                seen[t as usize] = true;
            }
        }
        let tokens: Vec<u32> = (0..vocab as u32).filter(|&t| seen[t as usize]).collect();
        let rows: Vec<(Vec<f64>, f64)> = tokens
            .par_iter()
            .with_min_len(CHUNK)
            .map(|&t| {
                let z = clf.word_preactivation(table.row(t as usize));
                let s = z.iter().zip(clf.output()).map(|(z, v)| v * z.max(0.0)).sum();
                (z, s)
            })
            .collect();
        let mut preactivations = vec![Vec::new(); vocab];
        let mut contribution = vec![0.0; vocab];
        for (&t, (z, s)) in tokens.iter().zip(rows) {
            preactivations[t as usize] = z;
            contribution[t as usize] = s;
        }
        TokenPass {
            tokens,
            preactivations,
            contribution,
        }
    }

    /// `d loss / d contribution[t] = sum_docs dscore_doc * share_{doc,t}`.
    pub(crate) fn token_sensitivities(&self, batch: &[&BagOfWords], dscores: &[f64]) -> Vec<f64> {
        let mut dtoken = vec![0.0; self.contribution.len()];
        for (bag, &ds) in batch.iter().zip(dscores) {
            for &(t, w) in &bag.entries {
                dtoken[t as usize] += ds * w;
            }
        }
        dtoken
    }
}

/// Accumulates the head gradient `[dA, db, dv, dc]` into `grad`.
pub(crate) fn head_gradient(
    clf: &TextClassifier,
    table: &Mat,
    pass: &TokenPass,
    dtoken: &[f64],
    dscores: &[f64],
    grad: &mut [f64],
) {
    let (h, p) = (clf.hidden_width(), clf.embedding_dim());
    let v = clf.output();
    let partials: Vec<Vec<f64>> = pass
        .tokens
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; h * p + 2 * h];
            for &t in chunk {
                let dt = dtoken[t as usize];
                if dt == 0.0 {
                    continue;
                }
                let z = &pass.preactivations[t as usize];
                let e = table.row(t as usize);
                for k in 0..h {
                    if z[k] >= 0.0 {
                        let dz = dt * v[k];
                        axpy(dz, e, &mut g[k * p..(k + 1) * p]);
                        g[h * p + k] += dz;
                        g[h * p + h + k] += dt * z[k];
                    }
                }
            }
            g
        })
        .collect();
    for part in partials {
        axpy(1.0, &part, &mut grad[..h * p + 2 * h]);
    }
    grad[h * p + 2 * h] += dscores.iter().sum::<f64>();
}

/// `d contribution[t] / d e_t = A^T (v . 1[z_t >= 0])`.
pub(crate) fn token_input_gradient(clf: &TextClassifier, z: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; clf.embedding_dim()];
    for ((zk, vk), a) in z.iter().zip(clf.output()).zip(clf.hidden().iter_rows()) {
        if *zk >= 0.0 {
            axpy(*vk, a, &mut g);
        }
    }
    g
}
