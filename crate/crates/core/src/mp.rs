//! Marchenko–Pastur reference law, histogram KL divergence against it, and
//! the BBP outlier prediction for spiked covariances.
//!
//! Conventions: `variance` is the per-entry noise variance σ² and `aspect`
//! is c = n_cols / n_rows of the window matrix, so the law describes the
//! eigenvalues of `(1/n_rows) HᵀH`. For c > 1 the law carries a point mass
//! of weight 1 − 1/c at zero; [`mp_pdf`] is the continuous part only.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::SpectralError;

/// Additive per-bin smoothing applied to both histograms before the KL sum.
pub const KL_SMOOTHING: f64 = 1e-9;
/// Right padding of the shared histogram range.
pub const RANGE_PADDING: f64 = 1.05;
pub const DEFAULT_BINS: usize = 64;
/// Eigenvalues below this are treated as exact zeros.
pub const ZERO_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MPParams {
    pub variance: f64,
    pub aspect: f64,
}

impl MPParams {
    pub fn new(variance: f64, aspect: f64) -> Result<Self, SpectralError> {
        let p = Self { variance, aspect };
        p.validate()?;
        Ok(p)
    }

    /// Parameters for a `rows × cols` window.
    pub fn for_window(variance: f64, rows: usize, cols: usize) -> Result<Self, SpectralError> {
        if rows == 0 || cols == 0 {
            return Err(SpectralError::EmptyMatrix);
        }
        Self::new(variance, cols as f64 / rows as f64)
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(SpectralError::InvalidParameter(format!(
                "variance must be positive, got {}",
                self.variance
            )));
        }
        if !(self.aspect > 0.0 && self.aspect.is_finite()) {
            return Err(SpectralError::InvalidParameter(format!(
                "aspect ratio must be positive, got {}",
                self.aspect
            )));
        }
        Ok(())
    }

    /// λ− = σ²(1 − √c)².
    pub fn lower_edge(&self) -> f64 {
        let s = 1.0 - self.aspect.sqrt();
        self.variance * s * s
    }

    /// λ+ = σ²(1 + √c)².
    pub fn upper_edge(&self) -> f64 {
        let s = 1.0 + self.aspect.sqrt();
        self.variance * s * s
    }

    /// Weight of the continuous part, min(1, 1/c).
    pub fn continuous_mass(&self) -> f64 {
        (1.0 / self.aspect).min(1.0)
    }

    /// Weight of the atom at zero, max(0, 1 − 1/c).
    pub fn point_mass(&self) -> f64 {
        (1.0 - 1.0 / self.aspect).max(0.0)
    }

    fn with_variance(&self, variance: f64) -> Self {
        Self {
            variance,
            aspect: self.aspect,
        }
    }
}

/// Continuous Marchenko–Pastur density.
pub fn mp_pdf(x: f64, params: &MPParams) -> f64 {
    let (a, b) = (params.lower_edge(), params.upper_edge());
    if x <= a || x >= b || x <= 0.0 {
        return 0.0;
    }
    ((b - x) * (x - a)).sqrt() / (2.0 * PI * params.variance * params.aspect * x)
}

/// Continuous-part CDF, from 0 at λ− up to [`MPParams::continuous_mass`] at λ+.
///
/// Closed form obtained with the substitution x = m − w·cos φ, where m and w
/// are the midpoint and half-width of the support.
pub fn mp_cdf_continuous(x: f64, params: &MPParams) -> f64 {
    let (a, b) = (params.lower_edge(), params.upper_edge());
    if x <= a {
        return 0.0;
    }
    if x >= b {
        return params.continuous_mass();
    }
    let m = 0.5 * (a + b);
    let w = 0.5 * (b - a);
    let phi = ((m - x) / w).clamp(-1.0, 1.0).acos();
    cdf_at_angle(phi, a, b, params)
}

fn cdf_at_angle(phi: f64, a: f64, b: f64, params: &MPParams) -> f64 {
    let m = 0.5 * (a + b);
    let w = 0.5 * (b - a);
    let mut g = w * phi.sin() + m * phi;
    if a > 0.0 {
        let half = 0.5 * phi;
        g -= 2.0 * (a * b).sqrt() * (b.sqrt() * half.sin()).atan2(a.sqrt() * half.cos());
    }
    (g / (2.0 * PI * params.variance * params.aspect)).clamp(0.0, params.continuous_mass())
}

/// CDF of the full law including the atom at zero (for x ≥ 0).
pub fn mp_cdf(x: f64, params: &MPParams) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    params.point_mass() + mp_cdf_continuous(x, params)
}

/// Quantile of the full law. Levels inside the atom map to 0.
pub fn mp_quantile(level: f64, params: &MPParams) -> f64 {
    let pm = params.point_mass();
    let level = level.clamp(0.0, 1.0);
    if level <= pm {
        return 0.0;
    }
    let (a, b) = (params.lower_edge(), params.upper_edge());
    let target = level - pm;
    if target >= params.continuous_mass() {
        return b;
    }
    let (mut lo, mut hi) = (0.0, PI);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cdf_at_angle(mid, a, b, params) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let phi = 0.5 * (lo + hi);
    0.5 * (a + b) - 0.5 * (b - a) * phi.cos()
}

/// Normalized histogram over shared bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumHistogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

impl SpectrumHistogram {
    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    /// Applies additive smoothing and renormalizes.
    pub fn smoothed(&self, eps: f64) -> SpectrumHistogram {
        let total: f64 = self.masses.iter().sum::<f64>() + eps * self.masses.len() as f64;
        SpectrumHistogram {
            edges: self.edges.clone(),
            masses: self.masses.iter().map(|m| (m + eps) / total).collect(),
        }
    }
}

/// Equal-width edges on [0, hi].
pub fn uniform_edges(hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| hi * i as f64 / bins as f64).collect()
}

/// The shared histogram range [0, max(λ+, λ_max)·1.05].
pub fn shared_edges(eigenvalues: &[f64], params: &MPParams, bins: usize) -> Vec<f64> {
    let lmax = eigenvalues.iter().copied().fold(0.0, f64::max);
    uniform_edges(params.upper_edge().max(lmax) * RANGE_PADDING, bins)
}

/// Empirical distribution of eigenvalues over `edges`. Values below
/// [`ZERO_EIGENVALUE`] land in the first bin; values past the last edge are
/// clamped into the last bin.
pub fn empirical_histogram(eigenvalues: &[f64], edges: &[f64]) -> SpectrumHistogram {
    let bins = edges.len() - 1;
    let mut masses = vec![0.0; bins];
    let hi = edges[bins];
    let width = hi / bins as f64;
    let inc = 1.0 / eigenvalues.len() as f64;
    for &l in eigenvalues {
        let idx = if l < ZERO_EIGENVALUE {
            0
        } else {
            ((l / width) as usize).min(bins - 1)
        };
        masses[idx] += inc;
    }
    SpectrumHistogram {
        edges: edges.to_vec(),
        masses,
    }
}

/// Discretized Marchenko–Pastur law conditioned on its upper
/// `tail_fraction` of mass.
///
/// `tail_fraction = 1` is the full law with its atom in the first bin. A
/// smaller fraction is the reference for a spectrum truncated to its top
/// `tail_fraction · n_cols` eigenvalues.
pub fn mp_histogram(params: &MPParams, edges: &[f64], tail_fraction: f64) -> SpectrumHistogram {
    let bins = edges.len() - 1;
    let f = tail_fraction.clamp(f64::MIN_POSITIVE, 1.0);
    let cut = mp_quantile(1.0 - f, params);
    let pm = params.point_mass();
    let atom = (pm - (1.0 - f)).max(0.0);
    let mut masses = vec![0.0; bins];
    let lower = |x: f64| mp_cdf_continuous(x.max(cut), params);
    for i in 0..bins {
        let (e0, e1) = (edges[i], edges[i + 1]);
        masses[i] = (lower(e1) - lower(e0)).max(0.0);
    }
    masses[0] += atom;
    masses.iter_mut().for_each(|m| *m /= f);
    SpectrumHistogram {
        edges: edges.to_vec(),
        masses,
    }
}

/// KL(p ‖ q) after ε-smoothing of both histograms.
pub fn kl_histograms(p: &SpectrumHistogram, q: &SpectrumHistogram, eps: f64) -> f64 {
    debug_assert_eq!(p.bins(), q.bins());
    let (ps, qs) = (p.smoothed(eps), q.smoothed(eps));
    let kl: f64 = ps
        .masses
        .iter()
        .zip(&qs.masses)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
        .sum();
    kl.max(0.0)
}

/// KL(empirical ‖ MP) treating `eigenvalues` as the complete spectrum of
/// the n_cols × n_cols covariance (zeros included).
pub fn kl_empirical_vs_mp(
    eigenvalues: &[f64],
    params: &MPParams,
    bins: usize,
) -> Result<f64, SpectralError> {
    kl_top_vs_mp(eigenvalues, params, bins, 1.0)
}

/// KL(empirical ‖ MP) when `eigenvalues` are only the leading
/// `tail_fraction` share of the spectrum.
pub fn kl_top_vs_mp(
    eigenvalues: &[f64],
    params: &MPParams,
    bins: usize,
    tail_fraction: f64,
) -> Result<f64, SpectralError> {
    if eigenvalues.is_empty() {
        return Err(SpectralError::EmptySpectrum);
    }
    if bins < 8 {
        return Err(SpectralError::InvalidParameter(format!(
            "need at least 8 bins, got {bins}"
        )));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(SpectralError::InvalidParameter(format!(
            "tail fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    params.validate()?;
    let edges = shared_edges(eigenvalues, params, bins);
    let p = empirical_histogram(eigenvalues, &edges);
    let q = mp_histogram(params, &edges, tail_fraction);
    Ok(kl_histograms(&p, &q, KL_SMOOTHING))
}

/// Median-matching noise-variance estimate: the median of the observed
/// eigenvalues divided by the median of the unit-variance reference
/// restricted to the same tail. Falls back to the median of the nonzero
/// eigenvalues when more than half the spectrum is numerically zero.
pub fn estimate_variance(
    eigenvalues: &[f64],
    aspect: f64,
    tail_fraction: f64,
) -> Result<f64, SpectralError> {
    if eigenvalues.is_empty() {
        return Err(SpectralError::EmptySpectrum);
    }
    let unit = MPParams::new(1.0, aspect)?;
    let reference_median = mp_quantile(1.0 - 0.5 * tail_fraction, &unit);
    let mut med = median(eigenvalues);
    if med < ZERO_EIGENVALUE {
        let nz: Vec<f64> = eigenvalues
            .iter()
            .copied()
            .filter(|&l| l >= ZERO_EIGENVALUE)
            .collect();
        if nz.is_empty() {
            return Err(SpectralError::ZeroSpectrum);
        }
        med = median(&nz);
    }
    if reference_median <= 0.0 {
        return Err(SpectralError::InvalidParameter(
            "reference median is zero".into(),
        ));
    }
    Ok(med / reference_median)
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Detection threshold √c for a rank-one spike on unit-variance noise.
pub fn bbp_threshold(params: &MPParams) -> f64 {
    params.aspect.sqrt()
}

/// Predicted location of the top sample eigenvalue for a population
/// covariance I + θ·uuᵀ, or `None` when θ ≤ √c and the spike stays in the
/// bulk. The boundary θ = √c is treated as undetached.
pub fn bbp_outlier_location(theta: f64, params: &MPParams) -> Option<f64> {
    let c = params.aspect;
    if theta > c.sqrt() {
        Some((1.0 + theta) * (1.0 + c / theta))
    } else {
        None
    }
}

/// Same prediction with the noise variance applied.
pub fn bbp_outlier_scaled(theta: f64, params: &MPParams) -> Option<f64> {
    bbp_outlier_location(theta, &params.with_variance(1.0)).map(|l| l * params.variance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    /// Integrates the density over [a, b] in the angle variable, where the
    /// integrand is smooth at both support edges.
    fn quad_mass(params: &MPParams, x0: f64, x1: f64) -> f64 {
        let (a, b) = (params.lower_edge(), params.upper_edge());
        let (m, w) = (0.5 * (a + b), 0.5 * (b - a));
        let angle = |x: f64| ((m - x.clamp(a, b)) / w).clamp(-1.0, 1.0).acos();
        simpson(
            |phi| {
                let x = m - w * phi.cos();
                if x <= 0.0 {
                    // c = 1 limit at the origin: sin²φ / x -> 2/w.
                    return w * w * 2.0 / w / (2.0 * PI * params.variance * params.aspect);
                }
                w * w * phi.sin().powi(2) / (2.0 * PI * params.variance * params.aspect * x)
            },
            angle(x0),
            angle(x1),
            20_000,
        )
    }

    #[test]
    fn edges_for_quarter_aspect() {
        let p = MPParams::new(1.0, 0.25).unwrap();
        assert!((p.lower_edge() - 0.25).abs() < 1e-15);
        assert!((p.upper_edge() - 2.25).abs() < 1e-15);
    }

    #[test]
    fn pdf_values() {
        let p = MPParams::new(1.0, 1.0).unwrap();
        assert_eq!(mp_pdf(5.0, &p), 0.0);
        assert_eq!(mp_pdf(-1.0, &p), 0.0);
        assert!((mp_pdf(2.0, &p) - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((mp_pdf(2.0, &p) - 0.159_154_943_091_895_3).abs() < 1e-12);
    }

    #[test]
    fn pdf_integrates_to_continuous_mass() {
        for &(s2, c) in &[(1.0, 0.25), (1.0, 1.0), (2.5, 0.7), (1.0, 4.0), (0.3, 16.0)] {
            let p = MPParams::new(s2, c).unwrap();
            let total = quad_mass(&p, p.lower_edge(), p.upper_edge());
            assert!(
                (total - (1.0f64).min(1.0 / c)).abs() < 1e-6,
                "σ²={s2} c={c}: {total}"
            );
        }
    }

    #[test]
    fn closed_form_cdf_matches_quadrature() {
        for &(s2, c) in &[(1.0, 0.25), (1.0, 1.0), (1.7, 3.0)] {
            let p = MPParams::new(s2, c).unwrap();
            let (a, b) = (p.lower_edge(), p.upper_edge());
            for i in 1..10 {
                let x = a + (b - a) * i as f64 / 10.0;
                let q = quad_mass(&p, a, x);
                assert!((mp_cdf_continuous(x, &p) - q).abs() < 1e-8, "c={c} x={x}");
            }
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let p = MPParams::new(1.3, 2.0).unwrap();
        assert_eq!(mp_quantile(0.3, &p), 0.0);
        for &lvl in &[0.55, 0.7, 0.9, 0.99] {
            let x = mp_quantile(lvl, &p);
            assert!((mp_cdf(x, &p) - lvl).abs() < 1e-10);
        }
    }

    #[test]
    fn mp_histogram_sums_to_one() {
        for &(c, f) in &[
            (0.25, 1.0),
            (0.25, 0.5),
            (4.0, 1.0),
            (4.0, 0.25),
            (4.0, 0.1),
        ] {
            let p = MPParams::new(1.0, c).unwrap();
            let edges = uniform_edges(p.upper_edge() * 1.05, 64);
            let h = mp_histogram(&p, &edges, f);
            let s: f64 = h.masses.iter().sum();
            assert!((s - 1.0).abs() < 1e-10, "c={c} f={f}: {s}");
        }
    }

    #[test]
    fn kl_zero_on_self() {
        let p = MPParams::new(1.0, 0.5).unwrap();
        let edges = uniform_edges(p.upper_edge() * 1.05, 64);
        let h = mp_histogram(&p, &edges, 1.0);
        assert_eq!(kl_histograms(&h, &h, KL_SMOOTHING), 0.0);
    }

    #[test]
    fn kl_outside_support_is_large() {
        let p = MPParams::new(1.0, 0.25).unwrap();
        let lambdas = vec![2.0 * p.upper_edge(); 16];
        let kl = kl_empirical_vs_mp(&lambdas, &p, 64).unwrap();
        // All empirical mass sits in the top bin, where the reference holds
        // only the smoothing floor.
        let bins = 64.0;
        let pe = (1.0 + KL_SMOOTHING) / (1.0 + bins * KL_SMOOTHING);
        let qe = KL_SMOOTHING / (1.0 + bins * KL_SMOOTHING);
        let expect = pe * (pe / qe).ln();
        // The remaining bins contribute non-positive terms of order ε·ln(1/ε).
        assert!((kl - expect).abs() < 1e-5, "{kl} vs {expect}");
    }

    #[test]
    fn kl_argument_errors() {
        let p = MPParams::new(1.0, 0.5).unwrap();
        assert_eq!(
            kl_empirical_vs_mp(&[], &p, 64),
            Err(SpectralError::EmptySpectrum)
        );
        assert!(kl_empirical_vs_mp(&[1.0], &p, 4).is_err());
        assert!(MPParams::new(0.0, 1.0).is_err());
        assert!(MPParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn bbp_predictions() {
        let p = MPParams::new(1.0, 0.25).unwrap();
        assert!((bbp_outlier_location(2.0, &p).unwrap() - 3.375).abs() < 1e-15);
        assert_eq!(bbp_outlier_location(0.3, &p), None);
        assert_eq!(bbp_outlier_location(0.5, &p), None);
        let q = MPParams::new(2.0, 0.25).unwrap();
        assert!((bbp_outlier_scaled(2.0, &q).unwrap() - 6.75).abs() < 1e-12);
    }

    #[test]
    fn variance_estimate_recovers_scale_on_reference_quantiles() {
        // Feed exact quantiles of the σ²=2 law; the estimate must return 2.
        let p = MPParams::new(2.0, 0.5).unwrap();
        let n = 201;
        let l: Vec<f64> = (0..n)
            .map(|i| mp_quantile((i as f64 + 0.5) / n as f64, &p))
            .collect();
        let est = estimate_variance(&l, 0.5, 1.0).unwrap();
        assert!((est - 2.0).abs() < 1e-9, "{est}");
        // Keep only the top half and tell the estimator so.
        let mut top = l.clone();
        top.sort_by(|a, b| b.total_cmp(a));
        top.truncate(101);
        let est = estimate_variance(&top, 0.5, 101.0 / 201.0).unwrap();
        assert!((est - 2.0).abs() < 1e-2, "{est}");
    }
}
