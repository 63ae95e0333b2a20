//! Serialized and rendered outputs: explanation JSON and HTML, the norm
//! histogram, and the cumulative-variance curve of the embedded data.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AlphaScores, Explanation, Histogram, Method, NormProfile};
use crate::error::{check_len, Error, Result};
use crate::numerics::{pca, Mat, PcaResult};

pub const EXPLANATION_SCHEMA: &str = "onmanifold.explanation";
pub const EXPLANATION_SCHEMA_VERSION: u32 = 1;

/// One non-pad word of an explained document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordRecord {
    pub position: usize,
    pub token: String,
    pub raw_norm: f64,
    pub normalized_norm: f64,
    pub alpha: Option<f64>,
    pub selected_by: Vec<Method>,
}

/// Both explanations of one document with every word's statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationDocument {
    pub schema: String,
    pub version: u32,
    pub input_id: Option<String>,
    pub label: Option<u8>,
    pub score: Option<f64>,
    pub threshold: f64,
    pub k: usize,
    pub t_used: usize,
    /// `1/sqrt(p)`, the scale raw per-word norms are expected to sit at.
    pub raw_norm_reference: f64,
    pub words: Vec<WordRecord>,
    pub ours: Explanation,
    pub max_norm: Explanation,
}

impl ExplanationDocument {
    pub fn new<S: AsRef<str>>(
        tokens: &[S],
        profile: &NormProfile,
        alpha: &AlphaScores,
        ours: Explanation,
        max_norm: Explanation,
        embedding_dim: usize,
    ) -> Result<ExplanationDocument> {
        if profile.non_pad().count() > tokens.len() {
            return Err(Error::DimensionMismatch {
                context: "explanation tokens",
                expected: profile.non_pad().count(),
                actual: tokens.len(),
            });
        }
        check_len("alpha scores", profile.len(), alpha.alpha.len())?;
        let (mut ours, mut max_norm) = (ours, max_norm);
        ours.attach_tokens(tokens);
        max_norm.attach_tokens(tokens);
        let words = profile
            .non_pad()
            .map(|j| {
                let mut selected_by = Vec::new();
                if ours.selected.iter().any(|w| w.position == j) {
                    selected_by.push(Method::Ours);
                }
                if max_norm.selected.iter().any(|w| w.position == j) {
                    selected_by.push(Method::MaxNorm);
                }
                WordRecord {
                    position: j,
                    token: tokens[j].as_ref().to_string(),
                    raw_norm: profile.raw_norms[j],
                    normalized_norm: profile.normalized_norms[j],
                    alpha: alpha.get(j),
                    selected_by,
                }
            })
            .collect();
        Ok(ExplanationDocument {
            schema: EXPLANATION_SCHEMA.into(),
            version: EXPLANATION_SCHEMA_VERSION,
            input_id: ours.input_id.clone(),
            label: None,
            score: None,
            threshold: ours.threshold.unwrap_or(f64::NAN),
            k: ours.k,
            t_used: alpha.t_used,
            raw_norm_reference: 1.0 / (embedding_dim as f64).sqrt(),
            words,
            ours,
            max_norm,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<ExplanationDocument> {
        let doc: ExplanationDocument = serde_json::from_str(json)?;
        if doc.schema != EXPLANATION_SCHEMA || doc.version != EXPLANATION_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {EXPLANATION_SCHEMA} v{EXPLANATION_SCHEMA_VERSION}, found {} v{}",
                doc.schema, doc.version
            )));
        }
        Ok(doc)
    }

    /// Self-contained page; a pair of radio buttons switches the highlight
    /// between the two methods without scripts.
    pub fn to_html(&self) -> String {
        let title = self.input_id.as_deref().unwrap_or("document");
        let mut s = String::new();
        let _ = write!(
            s,
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{}</title>\n<style>\n\
             body{{font-family:sans-serif;max-width:60em;margin:2em auto}}\n\
             .doc span{{padding:0 2px;border-radius:3px}}\n\
             #m-ours:checked~.doc .ours{{background:#ffd54f}}\n\
             #m-norm:checked~.doc .max_norm{{background:#90caf9}}\n\
             table{{border-collapse:collapse}}td,th{{padding:2px 8px;border-bottom:1px solid #ddd}}\n\
             </style></head><body>\n<h1>{}</h1>\n",
            escape_html(title),
            escape_html(title)
        );
        let _ = writeln!(
            s,
            "<p>threshold {:.4}, k = {}, surrogates = {}{}</p>",
            self.threshold,
            self.k,
            self.t_used,
            self.label.map(|l| format!(", label {l}")).unwrap_or_default()
        );
        s.push_str(
            "<input type=\"radio\" name=\"method\" id=\"m-ours\" checked><label for=\"m-ours\">ours</label>\n\
             <input type=\"radio\" name=\"method\" id=\"m-norm\"><label for=\"m-norm\">max norm</label>\n\
             <p class=\"doc\">",
        );
        for w in &self.words {
            let classes: Vec<&str> = w.selected_by.iter().map(|m| m.as_str()).collect();
            let tip = format!(
                "norm {:.4}{}",
                w.normalized_norm,
                w.alpha.map(|a| format!(", alpha {a:.4}")).unwrap_or_default()
            );
            let _ = write!(
                s,
                "<span class=\"{}\" title=\"{}\">{}</span> ",
                classes.join(" "),
                tip,
                escape_html(&w.token)
            );
        }
        s.push_str("</p>\n");
        for e in [&self.ours, &self.max_norm] {
            let _ = writeln!(
                s,
                "<h2>{}</h2>\n<table><tr><th>rank</th><th>position</th><th>token</th><th>alpha</th><th>normalized norm</th></tr>",
                e.method.as_str()
            );
            for (r, w) in e.selected.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{:.4}</td></tr>",
                    r + 1,
                    w.position,
                    escape_html(w.token.as_deref().unwrap_or("")),
                    w.alpha.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
                    w.normalized_norm
                );
            }
            s.push_str("</table>\n");
        }
        s.push_str("</body></html>\n");
        s
    }
}

pub fn escape_html(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin_start,bin_end,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", h.edges[i], h.edges[i + 1], c);
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 40.0;

/// Bar chart of `h` with an optional vertical threshold line.
pub fn histogram_svg(h: &Histogram, threshold: Option<f64>) -> String {
    let (lo, hi) = (h.edges[0], *h.edges.last().expect("edges"));
    let peak = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let x = |v: f64| PAD + (v - lo) / (hi - lo) * (W - 2.0 * PAD);
    let y = |c: f64| H - PAD - c / peak * (H - 2.0 * PAD);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n");
    for (i, &c) in h.counts.iter().enumerate() {
        let (x0, x1) = (x(h.edges[i]), x(h.edges[i + 1]));
        let _ = writeln!(
            s,
            "<rect x=\"{x0:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#5c6bc0\"><title>{c}</title></rect>",
            y(c as f64),
            (x1 - x0 - 1.0).max(0.5),
            H - PAD - y(c as f64)
        );
    }
    axes(&mut s, lo, hi, peak);
    if let Some(t) = threshold {
        let _ = writeln!(
            s,
            "<line x1=\"{0:.1}\" x2=\"{0:.1}\" y1=\"{PAD}\" y2=\"{1}\" stroke=\"#d32f2f\" stroke-dasharray=\"4\"/>\n\
             <text x=\"{0:.1}\" y=\"{2}\" fill=\"#d32f2f\" font-size=\"12\">T = {t:.3}</text>",
            x(t),
            H - PAD,
            PAD - 6.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn axes(s: &mut String, lo: f64, hi: f64, top: f64) {
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{0}\" stroke=\"black\"/>\n\
         <text x=\"{PAD}\" y=\"{2}\" font-size=\"12\">{lo}</text>\n\
         <text x=\"{1}\" y=\"{2}\" font-size=\"12\" text-anchor=\"end\">{hi}</text>\n\
         <text x=\"{3}\" y=\"{PAD}\" font-size=\"12\" text-anchor=\"end\">{top}</text>",
        H - PAD,
        W - PAD,
        H - PAD + 16.0,
        PAD - 4.0
    );
}

fn page(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{0}</title></head>\n\
         <body style=\"font-family:sans-serif\">\n<h1>{0}</h1>\n{body}</body></html>\n",
        escape_html(title)
    )
}

pub fn histogram_html(h: &Histogram, threshold: Option<f64>, title: &str) -> String {
    page(title, &histogram_svg(h, threshold))
}

/// Principal component analysis of embedded words.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub pca: PcaResult,
    pub samples: usize,
    pub cutoff: f64,
    /// Leading components needed to reach `cutoff`; `None` when degenerate.
    pub components_for_cutoff: Option<usize>,
}

/// PCA of the rows of `embeddings` (one embedded word per row).
pub fn manifold_report(embeddings: &Mat, cutoff: f64) -> Result<ManifoldReport> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::param("cutoff", format!("must lie in (0, 1], got {cutoff}")));
    }
    let result = pca(embeddings)?;
    if result.degenerate {
        log::warn!("embedded data has zero variance");
    }
    Ok(ManifoldReport {
        components_for_cutoff: result.components_for_ratio(cutoff),
        pca: result,
        samples: embeddings.rows(),
        cutoff,
    })
}

impl ManifoldReport {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("component,variance,cumulative_ratio\n");
        for (i, (v, r)) in self
            .pca
            .component_variances
            .iter()
            .zip(&self.pca.cumulative_ratio)
            .enumerate()
        {
            let _ = writeln!(s, "{},{},{}", i + 1, v, r);
        }
        s
    }

    /// Cumulative variance ratio against component count, with the cutoff
    /// as a horizontal line.
    pub fn curve_svg(&self) -> String {
        let n = self.pca.cumulative_ratio.len().max(1) as f64;
        let x = |i: f64| PAD + i / n * (W - 2.0 * PAD);
        let y = |r: f64| H - PAD - r * (H - 2.0 * PAD);
        let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n");
        axes(&mut s, 0.0, n, 1.0);
        let points: Vec<String> = std::iter::once((0.0, 0.0))
            .chain(self.pca.cumulative_ratio.iter().enumerate().map(|(i, &r)| ((i + 1) as f64, r)))
            .map(|(i, r)| format!("{:.1},{:.1}", x(i), y(r)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"#5c6bc0\" stroke-width=\"2\" points=\"{pts}\"/>\n\
             <line x1=\"{PAD}\" x2=\"{right}\" y1=\"{cut:.1}\" y2=\"{cut:.1}\" stroke=\"#d32f2f\" stroke-dasharray=\"4\"/>",
            pts = points.join(" "),
            cut = y(self.cutoff),
            right = W - PAD
        );
        s.push_str("</svg>\n");
        s
    }

    pub fn to_html(&self, title: &str) -> String {
        let summary = match self.components_for_cutoff {
            Some(c) => format!(
                "<p>{} samples in {} dimensions; {:.0}% of the variance in the first {} component(s).</p>\n",
                self.samples,
                self.pca.dim(),
                self.cutoff * 100.0,
                c
            ),
            None => format!("<p>{} samples with zero variance.</p>\n", self.samples),
        };
        page(title, &(summary + &self.curve_svg()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{select_by_norm, select_topk};
    use crate::numerics::Rng;
    use crate::subspace::SubspaceBasis;

    fn sample_doc() -> ExplanationDocument {
        let profile = NormProfile {
            raw_norms: vec![0.05, 0.5, 0.08, 0.0],
            normalized_norms: vec![0.1, 1.0, 0.16, 0.0],
            pad_mask: vec![false, false, false, true],
            degenerate: false,
        };
        let alpha = AlphaScores {
            alpha: vec![Some(0.9), Some(0.99), Some(0.2), None],
            t_used: 2,
            zero_classifier: vec![],
            zero_member: vec![],
        };
        let mut ours = select_topk(&profile, &alpha, 0.2, 2).unwrap();
        ours.input_id = Some("d<1>".into());
        let base = select_by_norm(&profile, 2).unwrap();
        ExplanationDocument::new(&["good", "<b>", "film"], &profile, &alpha, ours, base, 16).unwrap()
    }

    #[test]
    fn document_records_both_methods() {
        let d = sample_doc();
        assert_eq!(d.words.len(), 3);
        assert_eq!(d.words[0].selected_by, vec![Method::Ours]);
        assert_eq!(d.words[1].selected_by, vec![Method::MaxNorm]);
        assert_eq!(d.words[2].selected_by, vec![Method::Ours, Method::MaxNorm]);
        assert_eq!(d.ours.selected[0].token.as_deref(), Some("good"));
        assert_eq!(d.raw_norm_reference, 0.25);
        let back = ExplanationDocument::from_json(&d.to_json().unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let json = sample_doc().to_json().unwrap().replace(EXPLANATION_SCHEMA, "other");
        assert!(ExplanationDocument::from_json(&json).is_err());
    }

    #[test]
    fn html_escapes_tokens_and_has_toggle() {
        let html = sample_doc().to_html();
        assert!(html.contains("&lt;b&gt;"));
        assert!(!html.contains("<b>"));
        assert!(html.contains("d&lt;1&gt;"));
        assert!(html.contains("#m-ours:checked~.doc .ours"));
        assert!(!html.contains("<script"));
    }

    #[test]
    fn histogram_outputs() {
        let h = Histogram::uniform(&[0.1, 0.12, 0.9], 4, 0.0, 1.0);
        assert_eq!(h.counts, vec![2, 0, 0, 1]);
        let csv = histogram_csv(&h);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("bin_start,bin_end,count\n0,0.25,2\n"));
        let svg = histogram_svg(&h, Some(0.3));
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("T = 0.300"));
        assert!(histogram_html(&h, None, "norms").contains("<svg"));
    }

    #[test]
    fn low_rank_embeddings_reach_cutoff_at_rank() {
        let mut rng = Rng::new(4);
        let basis = SubspaceBasis::random(32, 20, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| basis.embed(&rng.gaussian_vector(12, 1.0)).unwrap())
            .collect();
        let r = manifold_report(&Mat::from_rows(&rows).unwrap(), 0.95).unwrap();
        assert!(r.components_for_cutoff.unwrap() <= 12);
        assert_eq!(r.curve_csv().lines().count(), 33);
        assert!(r.to_html("pca").contains("<polyline"));
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let rows = vec![vec![1.0, 2.0, 3.0]; 10];
        let r = manifold_report(&Mat::from_rows(&rows).unwrap(), 0.95).unwrap();
        assert!(r.pca.degenerate);
        assert_eq!(r.components_for_cutoff, None);
        assert!(manifold_report(&Mat::from_rows(&rows).unwrap(), 0.0).is_err());
    }

    #[test]
    fn isotropic_data_gives_diagonal_curve() {
        let mut rng = Rng::new(5);
        let dim = 8;
        let rows: Vec<Vec<f64>> = (0..5000).map(|_| rng.gaussian_vector(dim, 1.0)).collect();
        let r = manifold_report(&Mat::from_rows(&rows).unwrap(), 0.95).unwrap();
        let total: f64 = r.pca.component_variances.iter().sum();
        for v in &r.pca.component_variances {
            assert!((v / total - 1.0 / dim as f64).abs() < 0.05, "{}", v / total);
        }
        for (i, c) in r.pca.cumulative_ratio.iter().enumerate() {
            assert!((c - (i + 1) as f64 / dim as f64).abs() < 0.05);
        }
    }
}
