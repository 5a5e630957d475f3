//! Window spectra and the 22-slot spectral feature vector.
//!
//! Feature layout (version 1), 1-based slots:
//!
//! | slots | content |
//! |-------|---------|
//! | 1–8   | top-8 eigenvalues λ1..λ8 (zero-padded when r < 8) |
//! | 9–12  | cumulative variance at top_k ∈ {1, 2, 4, 8} |
//! | 13–15 | gaps λ1/λ2, λ2/λ3, λ4/λ5 |
//! | 16    | spectral entropy (natural log) |
//! | 17    | KL(empirical ‖ Marchenko–Pastur) |
//! | 18    | mean λ |
//! | 19    | median λ |
//! | 20    | max λ |
//! | 21    | sum λ |
//! | 22    | standard deviation of λ (population) |
//!
//! All statistics are taken over the retained spectrum of r = min(rows,
//! cols, r_max) eigenvalues. The KL slot compares those eigenvalues with the
//! Marchenko–Pastur law conditioned on its upper r / cols share of mass, so
//! truncation does not masquerade as structure.

use serde::{Deserialize, Serialize};

use crate::error::SpectralError;
use crate::linalg::{singular_values, Matrix};
use crate::mp::{self, MPParams};

pub const FEATURE_COUNT: usize = 22;
pub const LAYOUT_VERSION: u32 = 1;
/// Ratio emitted for a gap whose denominator is zero.
pub const GAP_CAP: f64 = 1e6;
pub const DEFAULT_R_MAX: usize = 64;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "lambda_1",
    "lambda_2",
    "lambda_3",
    "lambda_4",
    "lambda_5",
    "lambda_6",
    "lambda_7",
    "lambda_8",
    "cumvar_1",
    "cumvar_2",
    "cumvar_4",
    "cumvar_8",
    "gap_1_2",
    "gap_2_3",
    "gap_4_5",
    "entropy",
    "mp_kl",
    "mean_lambda",
    "median_lambda",
    "max_lambda",
    "sum_lambda",
    "std_lambda",
];

/// 0-based slot indices.
pub mod slot {
    pub const LAMBDA_1: usize = 0;
    pub const CUMVAR_1: usize = 8;
    pub const CUMVAR_8: usize = 11;
    pub const GAP_1_2: usize = 12;
    pub const GAP_2_3: usize = 13;
    pub const GAP_4_5: usize = 14;
    pub const ENTROPY: usize = 15;
    pub const MP_KL: usize = 16;
    pub const MEAN: usize = 17;
    pub const MEDIAN: usize = 18;
    pub const MAX: usize = 19;
    pub const SUM: usize = 20;
    pub const STD: usize = 21;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub singular_values: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl SpectrumResult {
    pub fn rank_bound(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Share of the n_cols-dimensional covariance spectrum that was retained.
    pub fn tail_fraction(&self) -> f64 {
        self.eigenvalues.len() as f64 / self.n_cols as f64
    }

    pub fn aspect(&self) -> f64 {
        self.n_cols as f64 / self.n_rows as f64
    }
}

/// Leading singular values of `h` and eigenvalues λ_i = σ_i² / rows.
pub fn truncated_svd(h: &Matrix, r_max: usize) -> Result<SpectrumResult, SpectralError> {
    if h.is_empty() {
        return Err(SpectralError::EmptyMatrix);
    }
    if !h.all_finite() {
        return Err(SpectralError::NonFinite);
    }
    if r_max == 0 {
        return Err(SpectralError::InvalidParameter("r_max must be >= 1".into()));
    }
    let mut sv = singular_values(h);
    // Values under the numerical-rank cutoff are rounding residue.
    let cutoff = sv.first().copied().unwrap_or(0.0) * h.rows().max(h.cols()) as f64 * f64::EPSILON;
    sv.iter_mut()
        .filter(|s| **s <= cutoff)
        .for_each(|s| *s = 0.0);
    sv.truncate(r_max);
    let n = h.rows() as f64;
    let eigenvalues = sv.iter().map(|s| s * s / n).collect();
    Ok(SpectrumResult {
        singular_values: sv,
        eigenvalues,
        n_rows: h.rows(),
        n_cols: h.cols(),
    })
}

fn total_mass(lambda: &[f64]) -> Result<f64, SpectralError> {
    if lambda.is_empty() {
        return Err(SpectralError::EmptySpectrum);
    }
    let total: f64 = lambda.iter().sum();
    if total <= 0.0 {
        return Err(SpectralError::ZeroSpectrum);
    }
    Ok(total)
}

/// Shannon entropy (natural log) of the normalized spectrum; zero terms
/// contribute nothing.
pub fn spectral_entropy(lambda: &[f64]) -> Result<f64, SpectralError> {
    let total = total_mass(lambda)?;
    let s: f64 = lambda
        .iter()
        .map(|&l| l / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(s.max(0.0))
}

/// λ_i / λ_j for each 1-based pair, at most [`GAP_CAP`]. A zero
/// denominator yields the cap, or 1 when the numerator is zero as well.
pub fn spectral_gaps(lambda: &[f64], pairs: &[(usize, usize)]) -> Result<Vec<f64>, SpectralError> {
    pairs
        .iter()
        .map(|&(i, j)| {
            if i == 0 || i >= j || j > lambda.len() {
                return Err(SpectralError::IndexOutOfRange(i, j));
            }
            let (num, den) = (lambda[i - 1], lambda[j - 1]);
            Ok(if den > 0.0 {
                (num / den).min(GAP_CAP)
            } else if num > 0.0 {
                GAP_CAP
            } else {
                1.0
            })
        })
        .collect()
}

/// Share of total variance captured by the leading `top_k` eigenvalues.
pub fn cumulative_variance(lambda: &[f64], top_k: usize) -> Result<f64, SpectralError> {
    if top_k == 0 {
        return Err(SpectralError::InvalidParameter("top_k must be >= 1".into()));
    }
    let total = total_mass(lambda)?;
    let head: f64 = lambda.iter().take(top_k).sum();
    Ok((head / total).clamp(0.0, 1.0))
}

/// How the noise variance entering the MP reference is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VarianceMode {
    /// Median matching against the unit-variance law.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpSettings {
    pub bins: usize,
    pub variance: VarianceMode,
}

impl Default for MpSettings {
    fn default() -> Self {
        Self {
            bins: mp::DEFAULT_BINS,
            variance: VarianceMode::Median,
        }
    }
}

impl MpSettings {
    /// MP parameters matched to a window spectrum.
    pub fn params_for(&self, spectrum: &SpectrumResult) -> Result<MPParams, SpectralError> {
        let variance = match self.variance {
            VarianceMode::Fixed(v) => v,
            VarianceMode::Median => mp::estimate_variance(
                &spectrum.eigenvalues,
                spectrum.aspect(),
                spectrum.tail_fraction(),
            )?,
        };
        MPParams::for_window(variance, spectrum.n_rows, spectrum.n_cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout_version: u32,
}

impl FeatureVector {
    pub fn get(&self, slot: usize) -> f64 {
        self.values[slot]
    }
}

/// Features of an all-zero window: zero eigenvalue statistics, cumulative
/// variance, entropy and divergence, and flat (1.0) gaps.
pub fn degenerate_features() -> FeatureVector {
    let mut values = vec![0.0; FEATURE_COUNT];
    for g in [slot::GAP_1_2, slot::GAP_2_3, slot::GAP_4_5] {
        values[g] = 1.0;
    }
    FeatureVector {
        values,
        layout_version: LAYOUT_VERSION,
    }
}

/// Builds the 22-slot feature vector using MP parameters chosen by `mp`.
pub fn extract_features(
    spectrum: &SpectrumResult,
    mp: &MpSettings,
) -> Result<FeatureVector, SpectralError> {
    total_mass(&spectrum.eigenvalues)?;
    let params = mp.params_for(spectrum)?;
    extract_features_with_params(spectrum, &params, mp.bins)
}

/// Builds the feature vector against explicit MP parameters.
pub fn extract_features_with_params(
    spectrum: &SpectrumResult,
    params: &MPParams,
    bins: usize,
) -> Result<FeatureVector, SpectralError> {
    let lambda = &spectrum.eigenvalues;
    let total = total_mass(lambda)?;
    let r = lambda.len();
    let mut padded = [0.0; 8];
    for (dst, &l) in padded.iter_mut().zip(lambda) {
        *dst = l;
    }

    let mut v = Vec::with_capacity(FEATURE_COUNT);
    v.extend_from_slice(&padded);
    for k in [1, 2, 4, 8] {
        v.push(cumulative_variance(lambda, k)?);
    }
    v.extend(spectral_gaps(&padded, &[(1, 2), (2, 3), (4, 5)])?);
    v.push(spectral_entropy(lambda)?);
    v.push(mp::kl_top_vs_mp(
        lambda,
        params,
        bins,
        spectrum.tail_fraction(),
    )?);
    let mean = total / r as f64;
    v.push(mean);
    v.push(mp::median(lambda));
    v.push(lambda.iter().copied().fold(0.0, f64::max));
    v.push(total);
    let var = lambda.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / r as f64;
    v.push(var.sqrt());

    debug_assert_eq!(v.len(), FEATURE_COUNT);
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SpectralError::NonFinite);
    }
    Ok(FeatureVector {
        values: v,
        layout_version: LAYOUT_VERSION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spectrum() {
        let s = truncated_svd(&Matrix::identity(3), 64).unwrap();
        assert_eq!(s.singular_values.len(), 3);
        for (sv, l) in s.singular_values.iter().zip(&s.eigenvalues) {
            assert!((sv - 1.0).abs() < 1e-15);
            assert!((l - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn truncation_respects_r_max() {
        let s = truncated_svd(&Matrix::identity(5), 2).unwrap();
        assert_eq!(s.eigenvalues.len(), 2);
        assert!((s.tail_fraction() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn svd_errors() {
        assert_eq!(
            truncated_svd(&Matrix::zeros(0, 3), 4),
            Err(SpectralError::EmptyMatrix)
        );
        let mut m = Matrix::identity(2);
        m[(0, 1)] = f64::NAN;
        assert_eq!(truncated_svd(&m, 4), Err(SpectralError::NonFinite));
    }

    #[test]
    fn entropy_examples() {
        assert!((spectral_entropy(&[2.5; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(spectral_entropy(&[5.0, 0.0, 0.0]).unwrap(), 0.0);
        let s = spectral_entropy(&[3.0, 1.0]).unwrap();
        // -(3/4)ln(3/4) - (1/4)ln(1/4) = ln 4 - (3/4) ln 3
        let exact = 4f64.ln() - 0.75 * 3f64.ln();
        assert!((s - exact).abs() < 1e-15);
        assert!((s - 0.562_335).abs() < 1e-6);
        assert_eq!(
            spectral_entropy(&[0.0, 0.0]),
            Err(SpectralError::ZeroSpectrum)
        );
    }

    #[test]
    fn gap_examples() {
        assert_eq!(
            spectral_gaps(&[4.0, 2.0, 1.0], &[(1, 2)]).unwrap(),
            vec![2.0]
        );
        assert_eq!(
            spectral_gaps(&[1.0, 1.0, 1.0], &[(1, 2), (2, 3)]).unwrap(),
            vec![1.0, 1.0]
        );
        assert_eq!(spectral_gaps(&[4.0, 0.0], &[(1, 2)]).unwrap(), vec![1e6]);
        assert_eq!(spectral_gaps(&[0.0, 0.0], &[(1, 2)]).unwrap(), vec![1.0]);
        assert_eq!(
            spectral_gaps(&[4.0, 2.0], &[(1, 3)]),
            Err(SpectralError::IndexOutOfRange(1, 3))
        );
        assert!(spectral_gaps(&[4.0, 2.0], &[(2, 1)]).is_err());
    }

    #[test]
    fn cumulative_variance_examples() {
        assert_eq!(cumulative_variance(&[1.0; 4], 2).unwrap(), 0.5);
        assert!((cumulative_variance(&[9.0, 1.0], 1).unwrap() - 0.9).abs() < 1e-15);
        let l = [5.0, 3.5, 1.25, 0.5, 0.01];
        assert!((cumulative_variance(&l, l.len()).unwrap() - 1.0).abs() < 1e-15);
        assert!(cumulative_variance(&l, 0).is_err());
        let mut prev = 0.0;
        for k in 1..=7 {
            let c = cumulative_variance(&l, k).unwrap();
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn identity_window_features() {
        let s = truncated_svd(&Matrix::identity(8), 64).unwrap();
        let f = extract_features(&s, &MpSettings::default()).unwrap();
        assert_eq!(f.values.len(), FEATURE_COUNT);
        assert!((f.get(slot::ENTROPY) - 8f64.ln()).abs() < 1e-12);
        for g in [slot::GAP_1_2, slot::GAP_2_3, slot::GAP_4_5] {
            assert!((f.get(g) - 1.0).abs() < 1e-12);
        }
        assert!((f.get(slot::CUMVAR_1) - 1.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_window_features() {
        let row = vec![0.5, -1.0, 2.0, 0.25, 1.0, -0.5];
        let rows: Vec<Vec<f64>> = (0..10).map(|_| row.clone()).collect();
        let s = truncated_svd(&Matrix::from_rows(&rows), 64).unwrap();
        let f = extract_features(&s, &MpSettings::default()).unwrap();
        assert!((f.get(slot::CUMVAR_1) - 1.0).abs() < 1e-12);
        assert!(f.get(slot::ENTROPY) < 1e-9);
        assert_eq!(f.get(slot::GAP_1_2), GAP_CAP);
        assert!(f.values.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn zero_window_is_an_error() {
        let s = truncated_svd(&Matrix::zeros(4, 3), 64).unwrap();
        assert_eq!(
            extract_features(&s, &MpSettings::default()),
            Err(SpectralError::ZeroSpectrum)
        );
    }

    #[test]
    fn names_match_slots() {
        assert_eq!(FEATURE_NAMES[slot::MP_KL], "mp_kl");
        assert_eq!(FEATURE_NAMES[slot::STD], "std_lambda");
        assert_eq!(FEATURE_NAMES[slot::CUMVAR_8], "cumvar_8");
        assert_eq!(FEATURE_NAMES[slot::LAMBDA_1], "lambda_1");
        assert_eq!(FEATURE_NAMES[slot::MEDIAN], "median_lambda");
        assert_eq!(FEATURE_NAMES[slot::MAX], "max_lambda");
        assert_eq!(FEATURE_NAMES[slot::SUM], "sum_lambda");
        assert_eq!(FEATURE_NAMES[slot::MEAN], "mean_lambda");
    }
}
