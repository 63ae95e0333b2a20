//! Per-word explanations from gradient norms and surrogate agreement.
//!
//! A word is a candidate when its gradient norm, divided by the largest norm
//! in the document, is below a threshold `T`. Candidates are ranked by alpha,
//! the mean absolute cosine between the explained classifier's word gradient
//! and the matching gradients of the surrogate ensemble, and the top `k` are
//! returned. The max-norm baseline ranks all words by raw gradient norm.
//!
//! Pad positions never enter any statistic or selection.

mod report;
mod threshold;

pub use report::{
    escape_html, histogram_csv, histogram_html, histogram_svg, manifold_report, ExplanationDocument, ManifoldReport,
    WordRecord, EXPLANATION_SCHEMA, EXPLANATION_SCHEMA_VERSION,
};
pub use threshold::{suggest_threshold, Histogram, ThresholdConfig, ThresholdSuggestion, FALLBACK_THRESHOLD};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nets::WordGradients;
use crate::numerics::{cosine_similarity, norm};

pub const DEFAULT_TOP_K: usize = 10;

/// Gradient norms of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormProfile {
    /// `|g_j|`; zero at pad positions.
    pub raw_norms: Vec<f64>,
    /// `raw_norms` divided by the largest non-pad raw norm; zero at pad
    /// positions and when every non-pad gradient is zero.
    pub normalized_norms: Vec<f64>,
    pub pad_mask: Vec<bool>,
    /// Every non-pad gradient is zero.
    pub degenerate: bool,
}

impl NormProfile {
    pub fn len(&self) -> usize {
        self.raw_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_norms.is_empty()
    }

    pub fn non_pad(&self) -> impl Iterator<Item = usize> + '_ {
        self.pad_mask.iter().enumerate().filter(|(_, &p)| !p).map(|(j, _)| j)
    }

    pub fn non_pad_normalized(&self) -> impl Iterator<Item = f64> + '_ {
        self.non_pad().map(|j| self.normalized_norms[j])
    }

    /// A profile with the given normalized norms and no padding (raw norms
    /// equal to the normalized ones). Used to feed externally computed
    /// values into [`suggest_threshold`].
    pub fn from_normalized(values: Vec<f64>) -> NormProfile {
        NormProfile {
            raw_norms: values.clone(),
            pad_mask: vec![false; values.len()],
            degenerate: values.iter().all(|&v| v == 0.0),
            normalized_norms: values,
        }
    }
}

pub fn norm_profile(grads: &WordGradients) -> Result<NormProfile> {
    check_len("pad mask", grads.len(), grads.pad_mask.len())?;
    if grads.pad_mask.iter().all(|&p| p) {
        return Err(Error::Degenerate("every position is padding; nothing to explain".into()));
    }
    let raw_norms: Vec<f64> = (0..grads.len())
        .map(|j| if grads.pad_mask[j] { 0.0 } else { norm(grads.word(j)) })
        .collect();
    let max = raw_norms.iter().cloned().fold(0.0, f64::max);
    let degenerate = max == 0.0;
    let normalized_norms = if degenerate {
        vec![0.0; raw_norms.len()]
    } else {
        raw_norms.iter().map(|r| r / max).collect()
    };
    Ok(NormProfile {
        raw_norms,
        normalized_norms,
        pad_mask: grads.pad_mask.clone(),
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroMemberGradient {
    pub member: usize,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaScores {
    /// `None` at pad positions; otherwise in `[0, 1]`.
    pub alpha: Vec<Option<f64>>,
    pub t_used: usize,
    /// Non-pad positions where the explained gradient is zero (alpha is 0).
    pub zero_classifier: Vec<usize>,
    /// Member gradients that were zero; each contributed 0 to its alpha.
    pub zero_member: Vec<ZeroMemberGradient>,
}

impl AlphaScores {
    pub fn get(&self, j: usize) -> Option<f64> {
        self.alpha.get(j).copied().flatten()
    }
}

fn check_compatible(reference: &WordGradients, other: &WordGradients, what: &str) -> Result<()> {
    check_len("surrogate gradient length", reference.len(), other.len())?;
    check_len("surrogate gradient dimension", reference.dim(), other.dim())?;
    if reference.pad_mask != other.pad_mask {
        return Err(Error::param("ensemble", format!("{what}: pad masks differ")));
    }
    if reference.embedding_id != other.embedding_id {
        log::warn!(
            "{what}: embedding {:?} differs from the explained model's {:?}",
            other.embedding_id,
            reference.embedding_id
        );
    }
    Ok(())
}

/// `alpha_j = (1/t) sum_i |cos(g_j, g_{i,j})|` over the `t` members.
pub fn alpha_scores(classifier: &WordGradients, ensemble: &[WordGradients]) -> Result<AlphaScores> {
    if ensemble.is_empty() {
        return Err(Error::param("ensemble", "needs at least one surrogate"));
    }
    check_len("pad mask", classifier.len(), classifier.pad_mask.len())?;
    for (i, g) in ensemble.iter().enumerate() {
        check_compatible(classifier, g, &format!("surrogate {i}"))?;
    }
    let t = ensemble.len() as f64;
    let mut scores = AlphaScores {
        alpha: vec![None; classifier.len()],
        t_used: ensemble.len(),
        zero_classifier: Vec::new(),
        zero_member: Vec::new(),
    };
    for j in 0..classifier.len() {
        if classifier.pad_mask[j] {
            continue;
        }
        let gc = classifier.word(j);
        if norm(gc) == 0.0 {
            scores.zero_classifier.push(j);
            scores.alpha[j] = Some(0.0);
            continue;
        }
        let mut sum = 0.0;
        for (i, g) in ensemble.iter().enumerate() {
            match cosine_similarity(gc, g.word(j)) {
                Ok(c) => sum += c.abs(),
                Err(Error::Degenerate(_)) => scores.zero_member.push(ZeroMemberGradient { member: i, position: j }),
                Err(e) => return Err(e),
            }
        }
        scores.alpha[j] = Some((sum / t).clamp(0.0, 1.0));
    }
    if !scores.zero_classifier.is_empty() {
        log::warn!(
            "{} word(s) have a zero classifier gradient; their alpha is 0",
            scores.zero_classifier.len()
        );
    }
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    MaxNorm,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::MaxNorm => "max_norm",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" => Ok(Method::Ours),
            "max_norm" => Ok(Method::MaxNorm),
            other => Err(Error::param("method", format!("expected ours or max_norm, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStatus {
    /// `k` words were selected.
    Complete,
    /// Fewer than `k` words were eligible; all of them were selected.
    Short,
    /// No word was eligible.
    EmptyCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedWord {
    pub position: usize,
    pub token: Option<String>,
    pub alpha: Option<f64>,
    pub normalized_norm: f64,
    pub raw_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub method: Method,
    pub k: usize,
    /// The norm threshold; `None` for the max-norm baseline.
    pub threshold: Option<f64>,
    /// Best first under the method's ranking.
    pub selected: Vec<SelectedWord>,
    pub candidate_count: usize,
    pub status: SelectionStatus,
    pub input_id: Option<String>,
}

impl Explanation {
    pub fn positions(&self) -> Vec<usize> {
        self.selected.iter().map(|w| w.position).collect()
    }

    /// Fills in `token` from the document's tokens by position.
    pub fn attach_tokens<S: AsRef<str>>(&mut self, tokens: &[S]) {
        for w in &mut self.selected {
            w.token = tokens.get(w.position).map(|t| t.as_ref().to_string());
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    Ok(())
}

fn status_for(selected: usize, k: usize) -> SelectionStatus {
    match selected {
        0 => SelectionStatus::EmptyCandidates,
        s if s < k => SelectionStatus::Short,
        _ => SelectionStatus::Complete,
    }
}

/// Top-`k` selection over precomputed norms and alpha scores. Candidates
/// have normalized norm `< threshold`; order is alpha descending, then
/// normalized norm ascending, then position ascending.
pub fn select_topk(profile: &NormProfile, alpha: &AlphaScores, threshold: f64, k: usize) -> Result<Explanation> {
    check_k(k)?;
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::param("threshold", format!("must be positive, got {threshold}")));
    }
    check_len("alpha scores", profile.len(), alpha.alpha.len())?;
    let mut candidates: Vec<(usize, f64)> = profile
        .non_pad()
        .filter(|&j| profile.normalized_norms[j] < threshold)
        .map(|j| {
            let a = alpha.alpha[j].ok_or_else(|| Error::Degenerate(format!("no alpha at non-pad position {j}")))?;
            Ok((j, a))
        })
        .collect::<Result<_>>()?;
    let candidate_count = candidates.len();
    candidates.sort_by(|&(i, ai), &(j, aj)| {
        aj.total_cmp(&ai)
            .then_with(|| profile.normalized_norms[i].total_cmp(&profile.normalized_norms[j]))
            .then(i.cmp(&j))
    });
    candidates.truncate(k);
    let status = status_for(candidates.len(), k);
    match status {
        SelectionStatus::EmptyCandidates => {
            log::debug!("no word has normalized norm below {threshold}; the explanation is empty")
        }
        SelectionStatus::Short => {
            log::debug!("only {candidate_count} candidate word(s) below threshold {threshold}; asked for {k}")
        }
        SelectionStatus::Complete => {}
    }
    Ok(Explanation {
        method: Method::Ours,
        k,
        threshold: Some(threshold),
        selected: candidates
            .into_iter()
            .map(|(j, a)| SelectedWord {
                position: j,
                token: None,
                alpha: Some(a),
                normalized_norm: profile.normalized_norms[j],
                raw_norm: profile.raw_norms[j],
            })
            .collect(),
        candidate_count,
        status,
        input_id: None,
    })
}

pub fn explain_topk(
    classifier: &WordGradients,
    ensemble: &[WordGradients],
    threshold: f64,
    k: usize,
) -> Result<Explanation> {
    let profile = norm_profile(classifier)?;
    let alpha = alpha_scores(classifier, ensemble)?;
    let mut e = select_topk(&profile, &alpha, threshold, k)?;
    e.input_id = classifier.input_id.clone();
    Ok(e)
}

/// Top-`k` non-pad words by raw norm descending, then position ascending.
pub fn select_by_norm(profile: &NormProfile, k: usize) -> Result<Explanation> {
    check_k(k)?;
    let mut order: Vec<usize> = profile.non_pad().collect();
    let candidate_count = order.len();
    order.sort_by(|&i, &j| {
        profile.raw_norms[j]
            .partial_cmp(&profile.raw_norms[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order.truncate(k);
    Ok(Explanation {
        method: Method::MaxNorm,
        k,
        threshold: None,
        status: status_for(order.len(), k),
        selected: order
            .into_iter()
            .map(|j| SelectedWord {
                position: j,
                token: None,
                alpha: None,
                normalized_norm: profile.normalized_norms[j],
                raw_norm: profile.raw_norms[j],
            })
            .collect(),
        candidate_count,
        input_id: None,
    })
}

pub fn baseline_topk_by_norm(classifier: &WordGradients, k: usize) -> Result<Explanation> {
    let mut e = select_by_norm(&norm_profile(classifier)?, k)?;
    e.input_id = classifier.input_id.clone();
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Mat, Rng};
    use proptest::prelude::*;

    fn grads(rows: &[Vec<f64>], pad: &[bool]) -> WordGradients {
        WordGradients {
            per_word: Mat::from_rows(rows).unwrap(),
            pad_mask: pad.to_vec(),
            source_model: "m".into(),
            embedding_id: "e".into(),
            input_id: Some("doc".into()),
        }
    }

    fn along_x(norms: &[f64]) -> WordGradients {
        let rows: Vec<Vec<f64>> = norms.iter().map(|&v| vec![v, 0.0]).collect();
        grads(&rows, &vec![false; norms.len()])
    }

    fn random_grads(rng: &mut Rng, n: usize, p: usize, pad_from: usize) -> WordGradients {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|j| if j >= pad_from { vec![0.0; p] } else { rng.gaussian_vector(p, 1.0) })
            .collect();
        let pad: Vec<bool> = (0..n).map(|j| j >= pad_from).collect();
        grads(&rows, &pad)
    }

    fn scaled_grads(g: &WordGradients, lambda: f64) -> WordGradients {
        let mut out = g.clone();
        for v in out.per_word.as_mut_slice() {
            *v *= lambda;
        }
        out
    }

    #[test]
    fn profile_normalizes_by_max() {
        let p = norm_profile(&along_x(&[0.2, 0.5, 0.1])).unwrap();
        for (a, b) in p.normalized_norms.iter().zip([0.4, 1.0, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        let single = grads(&[vec![0.0, 3.0], vec![0.0, 0.0]], &[false, true]);
        assert_eq!(norm_profile(&single).unwrap().normalized_norms, vec![1.0, 0.0]);
    }

    #[test]
    fn profile_flags_zero_gradients_and_rejects_all_pad() {
        let p = norm_profile(&along_x(&[0.0, 0.0])).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.normalized_norms, vec![0.0, 0.0]);
        let all_pad = grads(&[vec![0.0, 0.0]], &[true]);
        assert!(norm_profile(&all_pad).is_err());
    }

    #[test]
    fn pad_is_excluded_from_normalization() {
        let mut g = grads(&[vec![1.0, 0.0], vec![4.0, 0.0]], &[false, true]);
        // A nonzero pad row (never produced by the models) is still ignored.
        g.per_word[(1, 0)] = 4.0;
        assert_eq!(norm_profile(&g).unwrap().normalized_norms, vec![1.0, 0.0]);
    }

    #[test]
    fn alpha_self_and_orthogonal() {
        let mut rng = Rng::new(3);
        let g = random_grads(&mut rng, 5, 4, 4);
        let a = alpha_scores(&g, &[g.clone(), g.clone()]).unwrap();
        for j in 0..4 {
            assert!((a.get(j).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(a.alpha[4], None);

        let gx = grads(&[vec![1.0, 0.0], vec![0.0, 2.0]], &[false, false]);
        let gy = grads(&[vec![0.0, 5.0], vec![-3.0, 0.0]], &[false, false]);
        let a = alpha_scores(&gx, std::slice::from_ref(&gy)).unwrap();
        assert_eq!(a.alpha, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn alpha_is_mean_of_absolute_cosines() {
        let gc = grads(&[vec![1.0, 0.0]], &[false]);
        let m1 = grads(&[vec![0.6, 0.8]], &[false]);
        let m2 = grads(&[vec![-0.2, (1.0f64 - 0.04).sqrt()]], &[false]);
        let a = alpha_scores(&gc, &[m1, m2]).unwrap();
        assert!((a.get(0).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn zero_gradients_are_flagged() {
        let gc = grads(&[vec![1.0, 0.0], vec![0.0, 0.0]], &[false, false]);
        let m = grads(&[vec![0.0, 0.0], vec![1.0, 0.0]], &[false, false]);
        let same = grads(&[vec![2.0, 0.0], vec![1.0, 0.0]], &[false, false]);
        let a = alpha_scores(&gc, &[m, same]).unwrap();
        assert_eq!(a.zero_classifier, vec![1]);
        assert_eq!(a.zero_member, vec![ZeroMemberGradient { member: 0, position: 0 }]);
        assert_eq!(a.alpha, vec![Some(0.5), Some(0.0)]);
    }

    #[test]
    fn alpha_rejects_mismatched_shapes() {
        let a = along_x(&[1.0, 2.0]);
        let b = along_x(&[1.0]);
        assert!(alpha_scores(&a, &[b]).is_err());
        assert!(alpha_scores(&a, &[]).is_err());
        let mut c = a.clone();
        c.pad_mask[1] = true;
        assert!(alpha_scores(&a, &[c]).is_err());
    }

    #[test]
    fn norm_filter_excludes_high_alpha_word() {
        let profile = NormProfile::from_normalized(vec![0.05, 0.5, 0.08]);
        let alpha = AlphaScores {
            alpha: vec![Some(0.9), Some(0.99), Some(0.2)],
            t_used: 1,
            zero_classifier: vec![],
            zero_member: vec![],
        };
        let e = select_topk(&profile, &alpha, 0.1, 1).unwrap();
        assert_eq!(e.positions(), vec![0]);
        assert_eq!(e.status, SelectionStatus::Complete);
        let all = select_topk(&profile, &alpha, 0.1, 5).unwrap();
        assert_eq!(all.positions(), vec![0, 2]);
        assert_eq!(all.status, SelectionStatus::Short);
        let none = select_topk(&profile, &alpha, 0.01, 5).unwrap();
        assert!(none.selected.is_empty());
        assert_eq!(none.status, SelectionStatus::EmptyCandidates);
        assert!(select_topk(&profile, &alpha, 0.0, 1).is_err());
        assert!(select_topk(&profile, &alpha, 0.1, 0).is_err());
    }

    #[test]
    fn ties_break_on_norm_then_position() {
        let profile = NormProfile::from_normalized(vec![0.05, 0.02, 0.05]);
        let alpha = AlphaScores {
            alpha: vec![Some(0.5); 3],
            t_used: 1,
            zero_classifier: vec![],
            zero_member: vec![],
        };
        assert_eq!(select_topk(&profile, &alpha, 0.1, 3).unwrap().positions(), vec![1, 0, 2]);
    }

    #[test]
    fn baseline_ranks_by_raw_norm() {
        let e = baseline_topk_by_norm(&along_x(&[0.2, 0.5, 0.1]), 2).unwrap();
        assert_eq!(e.positions(), vec![1, 0]);
        assert_eq!(e.method, Method::MaxNorm);
        let flat = baseline_topk_by_norm(&along_x(&[1.0; 6]), 4).unwrap();
        assert_eq!(flat.positions(), vec![0, 1, 2, 3]);
        let mut top = baseline_topk_by_norm(&along_x(&[0.3; 12]), 10).unwrap();
        assert_eq!(top.selected.len(), 10);
        top.attach_tokens(&(0..12).map(|i| format!("t{i}")).collect::<Vec<_>>());
        assert_eq!(top.selected[3].token.as_deref(), Some("t3"));
    }

    #[test]
    fn methods_disagree_when_a_top_norm_word_is_filtered() {
        let mut rng = Rng::new(8);
        let g = random_grads(&mut rng, 12, 6, 12);
        let members = [random_grads(&mut rng, 12, 6, 12), random_grads(&mut rng, 12, 6, 12)];
        let base = baseline_topk_by_norm(&g, 3).unwrap();
        let ours = explain_topk(&g, &members, 0.6, 3).unwrap();
        // The top raw-norm word has normalized norm 1 >= T.
        assert!(!ours.positions().contains(&base.positions()[0]));
        assert_ne!(ours.positions(), base.positions());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn selection_is_scale_invariant(seed in any::<u64>(), lambda in 1e-3f64..1e3, t in 0.05f64..1.0) {
            let mut rng = Rng::new(seed);
            let g = random_grads(&mut rng, 16, 8, 13);
            let members: Vec<WordGradients> = (0..3).map(|_| random_grads(&mut rng, 16, 8, 13)).collect();
            let a = explain_topk(&g, &members, t, 5).unwrap();
            let b = explain_topk(&scaled_grads(&g, lambda), &members, t, 5).unwrap();
            prop_assert_eq!(a.positions(), b.positions());
            let ba = baseline_topk_by_norm(&g, 5).unwrap();
            let bb = baseline_topk_by_norm(&scaled_grads(&g, lambda), 5).unwrap();
            prop_assert_eq!(ba.positions(), bb.positions());
        }

        #[test]
        fn raising_threshold_only_adds_candidates(seed in any::<u64>(), t1 in 0.01f64..1.0, dt in 0.0f64..1.0) {
            let mut rng = Rng::new(seed);
            let g = random_grads(&mut rng, 20, 4, 17);
            let members: Vec<WordGradients> = (0..2).map(|_| random_grads(&mut rng, 20, 4, 17)).collect();
            let profile = norm_profile(&g).unwrap();
            let alpha = alpha_scores(&g, &members).unwrap();
            let low = select_topk(&profile, &alpha, t1, 20).unwrap();
            let high = select_topk(&profile, &alpha, t1 + dt, 20).unwrap();
            prop_assert!(high.candidate_count >= low.candidate_count);
            for j in low.positions() {
                prop_assert!(high.positions().contains(&j));
            }
        }

        #[test]
        fn alpha_is_bounded_mean(seed in any::<u64>(), t in 1usize..6) {
            let mut rng = Rng::new(seed);
            let g = random_grads(&mut rng, 10, 5, 8);
            let members: Vec<WordGradients> = (0..t).map(|_| random_grads(&mut rng, 10, 5, 8)).collect();
            let a = alpha_scores(&g, &members).unwrap();
            prop_assert_eq!(a.t_used, t);
            for j in 0..8 {
                let v = a.get(j).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
                let mean = members
                    .iter()
                    .map(|m| {
                        let (x, y) = (g.word(j), m.word(j));
                        let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                        let xx: f64 = x.iter().map(|a| a * a).sum();
                        let yy: f64 = y.iter().map(|a| a * a).sum();
                        (xy / (xx.sqrt() * yy.sqrt())).abs()
                    })
                    .sum::<f64>() / t as f64;
                prop_assert!((v - mean).abs() <= 1e-12);
            }
            prop_assert_eq!(a.alpha[8], None);
        }
    }
}
