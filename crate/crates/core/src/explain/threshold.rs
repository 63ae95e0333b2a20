//! Choosing the norm threshold from the histogram of normalized norms.
//!
//! Normalized norms below `filter` are dropped; the rest are binned on
//! `[0, 1]`. A bin is sparse when it holds fewer than `sparse_fraction` times
//! the count of the fullest bin. Among maximal runs of sparse bins that have
//! at least `min_side_mass` of the kept values on each side, the widest one
//! (ties: the wider value gap, then the leftmost) is the gap. The threshold is
//! the midpoint between the largest kept value below the gap and the smallest
//! kept value above it. Without such a run the threshold is `fallback`.

use serde::{Deserialize, Serialize};

use super::NormProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub filter: f64,
    pub bins: usize,
    pub sparse_fraction: f64,
    pub min_side_mass: f64,
    pub fallback: f64,
}

pub const FALLBACK_THRESHOLD: f64 = 0.1;

impl Default for ThresholdConfig {
    /// Filter at `exp(-3)`.
    fn default() -> Self {
        ThresholdConfig {
            filter: (-3.0f64).exp(),
            bins: 20,
            sparse_fraction: 0.1,
            min_side_mass: 0.1,
            fallback: FALLBACK_THRESHOLD,
        }
    }
}

impl ThresholdConfig {
    /// Filter at `1e-3` instead of `exp(-3)`.
    pub fn milli_filter() -> Self {
        ThresholdConfig {
            filter: 1e-3,
            ..ThresholdConfig::default()
        }
    }

    pub fn with_filter(filter: f64) -> Self {
        ThresholdConfig {
            filter,
            ..ThresholdConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn uniform(values: &[f64], bins: usize, lo: f64, hi: f64) -> Histogram {
        let bins = bins.max(1);
        let width = (hi - lo) / bins as f64;
        let mut h = Histogram {
            edges: (0..=bins).map(|i| lo + width * i as f64).collect(),
            counts: vec![0; bins],
        };
        for &v in values {
            if v >= lo && v <= hi {
                let b = h.bin_of(v);
                h.counts[b] += 1;
            }
        }
        h
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let bins = self.counts.len();
        let (lo, hi) = (self.edges[0], self.edges[bins]);
        ((((v - lo) / (hi - lo)) * bins as f64) as usize).min(bins - 1)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSuggestion {
    pub threshold: f64,
    pub histogram: Histogram,
    /// Value interval `(below, above)` whose midpoint is the threshold.
    pub gap: Option<(f64, f64)>,
    pub used_fallback: bool,
    /// Non-pad values dropped by the filter.
    pub filtered_out: usize,
    pub config: ThresholdConfig,
}

pub fn suggest_threshold(profiles: &[NormProfile], config: &ThresholdConfig) -> ThresholdSuggestion {
    let mut values: Vec<f64> = profiles.iter().flat_map(|p| p.non_pad_normalized()).collect();
    let before = values.len();
    values.retain(|&v| v >= config.filter);
    values.sort_by(f64::total_cmp);
    let histogram = Histogram::uniform(&values, config.bins, 0.0, 1.0);
    let filtered_out = before - values.len();

    let fallback = |histogram: Histogram, why: &str| {
        log::warn!("no gap in the norm histogram ({why}); using threshold {}", config.fallback);
        ThresholdSuggestion {
            threshold: config.fallback,
            histogram,
            gap: None,
            used_fallback: true,
            filtered_out,
            config: *config,
        }
    };
    if values.is_empty() {
        return fallback(histogram, "every value was filtered out");
    }

    let peak = *histogram.counts.iter().max().expect("at least one bin");
    let sparse: Vec<bool> = histogram
        .counts
        .iter()
        .map(|&c| (c as f64) < config.sparse_fraction * peak as f64)
        .collect();
    let total = values.len() as f64;
    let bins = sparse.len();
    // (width in bins, value gap, below, above)
    let mut best: Option<(usize, f64, f64, f64)> = None;
    let mut start = 0;
    while start < bins {
        if !sparse[start] {
            start += 1;
            continue;
        }
        let mut end = start;
        while end + 1 < bins && sparse[end + 1] {
            end += 1;
        }
        let below_count = values.partition_point(|&v| histogram.bin_of(v) < start);
        let above_start = values.partition_point(|&v| histogram.bin_of(v) <= end);
        let above_count = values.len() - above_start;
        let eligible = below_count as f64 >= config.min_side_mass * total
            && above_count as f64 >= config.min_side_mass * total
            && below_count > 0
            && above_count > 0;
        if eligible {
            let below = values[below_count - 1];
            let above = values[above_start];
            let width = end - start + 1;
            let better = match best {
                None => true,
                Some((w, g, _, _)) => width > w || (width == w && above - below > g),
            };
            if better {
                best = Some((width, above - below, below, above));
            }
        }
        start = end + 1;
    }
    match best {
        Some((_, _, below, above)) => ThresholdSuggestion {
            threshold: 0.5 * (below + above),
            histogram,
            gap: Some((below, above)),
            used_fallback: false,
            filtered_out,
            config: *config,
        },
        None => fallback(histogram, "no sparse run separates the values"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn profile(values: Vec<f64>) -> NormProfile {
        NormProfile::from_normalized(values)
    }

    #[test]
    fn three_clusters_give_the_left_gap() {
        let mut rng = Rng::new(1);
        let mut v = Vec::new();
        v.extend((0..50).map(|_| 0.03 + 0.004 * (rng.uniform() - 0.5)));
        v.extend((0..30).map(|_| 0.5 + 0.02 * (rng.uniform() - 0.5)));
        v.extend((0..5).map(|_| 1.0 - 0.01 * rng.uniform()));
        let s = suggest_threshold(&[profile(v.clone())], &ThresholdConfig::with_filter(0.01));
        assert!(!s.used_fallback);
        assert!(s.threshold > 0.03 && s.threshold < 0.5);
        let (below, above) = s.gap.unwrap();
        let max_low = v[..50].iter().cloned().fold(0.0, f64::max);
        let min_mid = v[50..80].iter().cloned().fold(1.0, f64::min);
        assert_eq!((below, above), (max_low, min_mid));
        assert!((s.threshold - 0.265).abs() < 0.01, "{}", s.threshold);
        assert_eq!(s.histogram.total(), 85);
    }

    #[test]
    fn uniform_values_fall_back() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let s = suggest_threshold(&[profile(v)], &ThresholdConfig::default());
        assert!(s.used_fallback);
        assert_eq!(s.threshold, 0.1);
    }

    #[test]
    fn all_filtered_falls_back() {
        let s = suggest_threshold(&[profile(vec![0.001, 0.002])], &ThresholdConfig::default());
        assert!(s.used_fallback);
        assert_eq!(s.threshold, 0.1);
        assert_eq!(s.filtered_out, 2);
        assert_eq!(suggest_threshold(&[], &ThresholdConfig::default()).threshold, 0.1);
    }

    #[test]
    fn presets_differ_only_in_filter() {
        let a = ThresholdConfig::default();
        let b = ThresholdConfig::milli_filter();
        assert!((a.filter - 0.049787).abs() < 1e-6);
        assert_eq!(b.filter, 1e-3);
        assert_eq!(ThresholdConfig { filter: a.filter, ..b }, a);
    }

    #[test]
    fn one_sided_runs_are_ignored() {
        // Only a thin tail above the sparse run: not a gap.
        let mut v: Vec<f64> = (0..200).map(|i| 0.1 + 0.3 * i as f64 / 200.0).collect();
        v.push(0.95);
        let s = suggest_threshold(&[profile(v)], &ThresholdConfig::default());
        assert!(s.used_fallback);
    }
}
