//! Quantile-sketched split candidates and the binned (column-major, `u8`) training matrix.

use rayon::prelude::*;

/// Per-feature cut points plus the binned training data.
///
/// A value falls into bin `b` = number of cuts `<= value`, so splitting at
/// cut `k` (left iff `value < cuts[k]`) sends exactly bins `0..=k` left.
pub struct FeatureBins {
    pub cuts: Vec<Vec<f64>>,
    /// Column-major: `bins[f * n + i]`.
    pub bins: Vec<u8>,
    pub n: usize,
}

impl FeatureBins {
    /// `rows` is row-major `n × dim`. Cut points depend only on the multiset of
    /// values per feature, never on row order.
    pub fn build(rows: &[f64], n: usize, dim: usize, max_bins: usize) -> Self {
        let per_feature: Vec<(Vec<f64>, Vec<u8>)> = (0..dim)
            .into_par_iter()
            .map(|f| {
                let column: Vec<f64> = (0..n).map(|i| rows[i * dim + f]).collect();
                let cuts = quantile_cuts(&column, max_bins);
                let binned = column.iter().map(|&v| bin_of(&cuts, v)).collect();
                (cuts, binned)
            })
            .collect();
        let mut cuts = Vec::with_capacity(dim);
        let mut bins = Vec::with_capacity(n * dim);
        for (c, b) in per_feature {
            cuts.push(c);
            bins.extend(b);
        }
        FeatureBins { cuts, bins, n }
    }

    pub fn column(&self, f: usize) -> &[u8] {
        &self.bins[f * self.n..(f + 1) * self.n]
    }
}

#[inline]
pub fn bin_of(cuts: &[f64], v: f64) -> u8 {
    cuts.partition_point(|&c| c <= v) as u8
}

/// At most `max_bins - 1` cuts, placed midway between consecutive distinct
/// values at (approximately) equal-count quantiles.
pub fn quantile_cuts(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut unique = sorted.clone();
    unique.dedup();
    if unique.len() <= 1 {
        return Vec::new();
    }
    let n = sorted.len();
    let mut idx: Vec<usize> = if unique.len() <= max_bins {
        (1..unique.len()).collect()
    } else {
        (1..max_bins)
            .map(|k| {
                let v = sorted[k * n / max_bins];
                unique.partition_point(|&u| u < v)
            })
            .filter(|&j| j >= 1)
            .collect()
    };
    idx.dedup();
    idx.into_iter().map(|j| 0.5 * (unique[j - 1] + unique[j])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_values_get_midpoint_cuts() {
        let cuts = quantile_cuts(&[3.0, 1.0, 2.0, 2.0], 256);
        assert_eq!(cuts, vec![1.5, 2.5]);
        assert_eq!(bin_of(&cuts, 1.0), 0);
        assert_eq!(bin_of(&cuts, 2.0), 1);
        assert_eq!(bin_of(&cuts, 3.0), 2);
    }

    #[test]
    fn constant_feature_has_no_cuts() {
        assert!(quantile_cuts(&[4.0; 10], 256).is_empty());
    }

    #[test]
    fn many_values_are_sketched() {
        let v: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        let cuts = quantile_cuts(&v, 256);
        assert!(cuts.len() <= 255 && cuts.len() > 200);
        assert!(cuts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cuts_ignore_row_order() {
        let v: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 613) as f64 * 0.1).collect();
        let mut r = v.clone();
        r.reverse();
        assert_eq!(quantile_cuts(&v, 32), quantile_cuts(&r, 32));
    }
}
