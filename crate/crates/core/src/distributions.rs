//! Distributions of random correlations: histograms, reference laws and
//! Kolmogorov-Smirnov comparisons, including the product-distribution test.

use std::fmt;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::quantum::SubsetMask;
use crate::rng::{substream, PERMUTATION_STREAM};
use crate::sampling::CorrelationDataset;

/// Default bin count for correlation histograms.
pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Counts,
    Density,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub values: Vec<f64>,
    pub normalization: Normalization,
}

impl Histogram {
    /// Equal-width histogram over `[lo, hi]`; values outside are clamped into the end bins.
    pub fn from_values(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 bins, got {bins}")));
        }
        if values.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0.0; bins];
        for v in values {
            let i = ((v - lo) / width).floor();
            counts[(i.max(0.0) as usize).min(bins - 1)] += 1.0;
        }
        Ok(Self { edges, values: counts, normalization: Normalization::Counts })
    }

    pub fn bins(&self) -> usize {
        self.values.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn total(&self) -> f64 {
        match self.normalization {
            Normalization::Counts => self.values.iter().sum(),
            Normalization::Density => self.values.iter().zip(self.widths()).map(|(v, w)| v * w).sum(),
        }
    }

    /// Rescaled so that the histogram integrates to one.
    pub fn density(&self) -> Histogram {
        if self.normalization == Normalization::Density {
            return self.clone();
        }
        let total: f64 = self.values.iter().sum();
        let values = self.values.iter().zip(self.widths()).map(|(c, w)| c / (total * w)).collect();
        Histogram { edges: self.edges.clone(), values, normalization: Normalization::Density }
    }
}

/// Histogram of `|E_A|` on `[0, 1]`, or of the signed `E_A` on `[-1, 1]`.
pub fn histogram(ds: &CorrelationDataset, subset: SubsetMask, bins: usize, signed: bool) -> Result<Histogram> {
    subset.check_nonempty(ds.n)?;
    if ds.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let values = ds.values(subset);
    if signed {
        Histogram::from_values(&values, bins, -1.0, 1.0)
    } else {
        let moduli: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        Histogram::from_values(&moduli, bins, 0.0, 1.0)
    }
}

/// Sample mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Reference laws for the modulus `|E|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoreticalModel {
    /// Pure product state of `n` qubits: `|E|` is a product of `n` independent uniforms.
    ProductPure(u32),
    /// Flat law of a maximally entangled pair.
    Uniform,
    /// Maximally mixed state: `E = 0` always.
    MixedDelta,
}

impl fmt::Display for TheoreticalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TheoreticalModel::ProductPure(n) => write!(f, "product-pure-{n}"),
            TheoreticalModel::Uniform => f.write_str("uniform"),
            TheoreticalModel::MixedDelta => f.write_str("mixed-delta"),
        }
    }
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

fn check_model(model: TheoreticalModel) -> Result<()> {
    match model {
        TheoreticalModel::ProductPure(0) => {
            Err(Error::InvalidParameter("product-pure model needs n >= 1".into()))
        }
        _ => Ok(()),
    }
}

/// Density of `|E|` at each grid point.
///
/// For `ProductPure(n)` this is `(-ln e)^(n-1) / (n-1)!` on `(0, 1]` (infinite at 0 for `n >= 2`).
/// `MixedDelta` is discretized: the grid point nearest 0 carries `1 / spacing`.
pub fn theoretical_density(model: TheoreticalModel, grid: &[f64]) -> Result<Vec<f64>> {
    check_model(model)?;
    let inside = |e: f64| (0.0..=1.0).contains(&e);
    Ok(match model {
        TheoreticalModel::ProductPure(n) => grid
            .iter()
            .map(|&e| match (inside(e), n) {
                (false, _) => 0.0,
                (true, 1) => 1.0,
                (true, _) if e == 0.0 => f64::INFINITY,
                (true, _) => (-e.ln()).powi(n as i32 - 1) / factorial(n - 1),
            })
            .collect(),
        TheoreticalModel::Uniform => grid.iter().map(|&e| if inside(e) { 1.0 } else { 0.0 }).collect(),
        TheoreticalModel::MixedDelta => {
            let spacing = if grid.len() > 1 { (grid[1] - grid[0]).abs() } else { 1.0 };
            let nearest = grid
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(i, _)| i);
            (0..grid.len()).map(|i| if Some(i) == nearest { 1.0 / spacing } else { 0.0 }).collect()
        }
    })
}

/// Cumulative distribution of `|E|`: for `ProductPure(n)`, `x sum_{k<n} (-ln x)^k / k!`.
pub fn theoretical_cdf(model: TheoreticalModel, e: f64) -> Result<f64> {
    check_model(model)?;
    if e < 0.0 {
        return Ok(0.0);
    }
    if e >= 1.0 {
        return Ok(1.0);
    }
    Ok(match model {
        TheoreticalModel::ProductPure(n) => {
            if e == 0.0 {
                0.0
            } else {
                let l = -e.ln();
                e * (0..n).map(|k| l.powi(k as i32) / factorial(k)).sum::<f64>()
            }
        }
        TheoreticalModel::Uniform => e,
        TheoreticalModel::MixedDelta => 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsVerdict {
    /// No evidence against the null hypothesis at level alpha.
    Consistent,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub verdict: KsVerdict,
}

impl TestResult {
    fn new(statistic: f64, threshold: f64, alpha: f64) -> Self {
        let verdict = if statistic > threshold { KsVerdict::Rejected } else { KsVerdict::Consistent };
        Self { statistic, threshold, alpha, verdict }
    }

    pub fn label(&self) -> &'static str {
        match self.verdict {
            KsVerdict::Consistent => "consistent-with-product",
            KsVerdict::Rejected => "product-rejected",
        }
    }
}

/// Asymptotic Kolmogorov critical value `c(alpha) = sqrt(-ln(alpha/2) / 2)`.
pub fn ks_critical(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("significance level {alpha}")));
    }
    Ok((-(alpha / 2.0).ln() / 2.0).sqrt())
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample statistic `sup_x |F_a(x) - F_b(x)|`, with ties handled exactly.
pub fn ks_two_sample_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let threshold = ks_critical(alpha)? * ((na + nb) / (na * nb)).sqrt();
    Ok(TestResult::new(ks_two_sample_statistic(a, b), threshold, alpha))
}

/// One-sample statistic against a continuous cumulative distribution.
pub fn ks_one_sample(values: &[f64], cdf: impl Fn(f64) -> f64, alpha: f64) -> Result<TestResult> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let v = sorted(values);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    Ok(TestResult::new(d, ks_critical(alpha)? / n.sqrt(), alpha))
}

/// Compares `E_{A∪B}` with products of independently permuted `E_A` and `E_B`.
///
/// A rejection means the joint distribution is not the product distribution.
/// That implies entanglement across `A|B` only for states known to be pure.
pub fn product_distribution_test(
    ds: &CorrelationDataset,
    a: SubsetMask,
    b: SubsetMask,
    alpha: f64,
) -> Result<TestResult> {
    a.check_nonempty(ds.n)?;
    b.check_nonempty(ds.n)?;
    if a.intersects(b) {
        return Err(Error::OverlappingSubsets);
    }
    if ds.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let joint = ds.values(a.union(b));
    let mut ea = ds.values(a);
    let mut eb = ds.values(b);
    let mut rng = substream(ds.seed, PERMUTATION_STREAM, u64::from(a.bits()) << 32 | u64::from(b.bits()));
    ea.shuffle(&mut rng);
    eb.shuffle(&mut rng);
    let product: Vec<f64> = ea.iter().zip(&eb).map(|(x, y)| x * y).collect();
    ks_two_sample(&joint, &product, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{correlation_tensor, make_reference_state, CorrelationTensor, ReferenceState};
    use crate::sampling::{run_experiment, ExperimentConfig, NoiseModel, Shots};

    fn dataset(t: &CorrelationTensor, settings: usize, shots: Shots, seed: u64) -> CorrelationDataset {
        let cfg = ExperimentConfig { settings, shots, noise: NoiseModel::NONE, seed };
        run_experiment(t, "test", &cfg).unwrap()
    }

    fn reference(kind: ReferenceState) -> CorrelationTensor {
        correlation_tensor(&make_reference_state(kind))
    }

    #[test]
    fn bell_marginal_is_flat() {
        // E_12 of the trisep state is the Bell-pair correlation
        let ds = dataset(&reference(ReferenceState::Trisep), 10_000, Shots::Exact, 1);
        let h = histogram(&ds, SubsetMask::from_qubits(&[1, 2]), 50, true).unwrap();
        let expected: f64 = 10_000.0 / 50.0;
        let sigma = (expected * (1.0 - 1.0 / 50.0f64)).sqrt();
        for c in &h.values {
            assert!((c - expected).abs() < 5.0 * sigma, "{c}");
        }
    }

    #[test]
    fn white_qubit_is_a_spike_at_zero() {
        let t = CorrelationTensor::identity(1).unwrap();
        let ds = dataset(&t, 500, Shots::Exact, 2);
        let h = histogram(&ds, SubsetMask(1), DEFAULT_BINS, false).unwrap();
        assert_eq!(h.values[0], 500.0);
        assert!(h.values[1..].iter().all(|c| *c == 0.0));

        let ds = dataset(&t, 10_000, Shots::Finite(475), 2);
        let (_, sd) = mean_std(&ds.values(SubsetMask(1)));
        assert!((sd - 0.046).abs() < 0.0046, "{sd}");
    }

    #[test]
    fn histogram_errors_and_density() {
        let t = CorrelationTensor::identity(1).unwrap();
        let ds = dataset(&t, 10, Shots::Finite(3), 2);
        assert!(histogram(&ds, SubsetMask(1), 1, false).is_err());
        let d = histogram(&ds, SubsetMask(1), 10, true).unwrap().density();
        assert!((d.total() - 1.0).abs() < 1e-9);
        let mut empty = ds.clone();
        empty.records.clear();
        assert!(matches!(histogram(&empty, SubsetMask(1), 10, true), Err(Error::EmptyDataset)));
    }

    #[test]
    fn theoretical_density_examples() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let one = theoretical_density(TheoreticalModel::ProductPure(1), &grid).unwrap();
        assert!(one.iter().all(|v| *v == 1.0));
        let two = theoretical_density(TheoreticalModel::ProductPure(2), &[1.0]).unwrap();
        assert_eq!(two[0], 0.0);
        assert!(theoretical_density(TheoreticalModel::ProductPure(0), &grid).is_err());
    }

    #[test]
    fn product_pure_density_normalized() {
        // midpoint rule on a log-spaced grid handles the integrable log singularity
        let pieces = 200_000;
        let mut integral = 0.0;
        let (lo, hi) = (-40f64, 0f64);
        let h = (hi - lo) / pieces as f64;
        for i in 0..pieces {
            let u = lo + (i as f64 + 0.5) * h;
            let x = u.exp();
            integral += theoretical_density(TheoreticalModel::ProductPure(4), &[x]).unwrap()[0] * x * h;
        }
        assert!((integral - 1.0).abs() < 1e-9, "{integral}");
        assert!((theoretical_cdf(TheoreticalModel::ProductPure(4), 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cdf_matches_density() {
        for n in 1..=4 {
            let m = TheoreticalModel::ProductPure(n);
            for &x in &[0.05, 0.3, 0.7] {
                let h = 1e-6;
                let num = (theoretical_cdf(m, x + h).unwrap() - theoretical_cdf(m, x - h).unwrap()) / (2.0 * h);
                let dens = theoretical_density(m, &[x]).unwrap()[0];
                assert!((num - dens).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ks_statistic_with_ties() {
        assert_eq!(ks_two_sample_statistic(&[0.0; 10], &[0.0; 7]), 0.0);
        assert_eq!(ks_two_sample_statistic(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
        assert!((ks_two_sample_statistic(&[0.0, 1.0], &[0.5, 1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn product_test_examples() {
        let q = SubsetMask::from_qubits;
        let trisep = dataset(&reference(ReferenceState::Trisep), 5_000, Shots::Exact, 3);
        let r = product_distribution_test(&trisep, q(&[1, 2]), q(&[3, 4]), 0.01).unwrap();
        assert_eq!(r.verdict, KsVerdict::Consistent, "{r:?}");
        let r = product_distribution_test(&trisep, q(&[1]), q(&[2]), 0.01).unwrap();
        assert_eq!(r.verdict, KsVerdict::Rejected);
        let cluster = dataset(&reference(ReferenceState::Cluster), 5_000, Shots::Exact, 4);
        let r = product_distribution_test(&cluster, q(&[2]), q(&[3]), 0.01).unwrap();
        assert_eq!(r.verdict, KsVerdict::Consistent);
        assert!(matches!(
            product_distribution_test(&cluster, q(&[1, 2]), q(&[2]), 0.01),
            Err(Error::OverlappingSubsets)
        ));
    }
}
