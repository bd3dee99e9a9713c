//! Second moments of correlation distributions, finite-statistics handling,
//! purity from moments and the purity-dependent witnesses `M_n`.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quantum::{CorrelationTensor, SubsetMask};
use crate::sampling::{CorrelationDataset, Shots};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Raw,
    BayesCorrected,
    Exact,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Raw => "raw",
            Estimator::BayesCorrected => "bayes",
            Estimator::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub subset: SubsetMask,
    pub order: u32,
    pub value: f64,
    pub error: f64,
    pub estimator: Estimator,
}

/// `m_A = 3^-|A| sum_{supp(mu) = A} T_mu^2` for every mask (entry 0 is 1).
pub fn exact_moments(t: &CorrelationTensor) -> Vec<f64> {
    let n = t.n();
    let mut sums = vec![0.0; 1 << n];
    for (idx, &v) in t.entries().iter().enumerate() {
        sums[t.support(idx).bits() as usize] += v * v;
    }
    for (mask, s) in sums.iter_mut().enumerate() {
        *s /= 3f64.powi(mask.count_ones() as i32);
    }
    sums
}

pub fn exact_moment(t: &CorrelationTensor, subset: SubsetMask, order: u32) -> Result<MomentEstimate> {
    subset.check_nonempty(t.n())?;
    if order != 2 {
        return Err(Error::UnsupportedOrder(order));
    }
    Ok(MomentEstimate {
        subset,
        order,
        value: exact_moments(t)[subset.bits() as usize],
        error: 0.0,
        estimator: Estimator::Exact,
    })
}

/// Variance of the sample second moment:
/// `(1/N_s) [m4 - (N_s - 3)/(N_s - 1) m2^2]`, floored at zero.
pub fn second_moment_variance(m2: f64, m4: f64, settings: usize) -> f64 {
    let ns = settings as f64;
    ((m4 - (ns - 3.0) / (ns - 1.0) * m2 * m2) / ns).max(0.0)
}

fn sample_moment(values: &[f64], k: i32) -> f64 {
    values.iter().map(|e| e.powi(k)).sum::<f64>() / values.len() as f64
}

/// Sample mean of `E^k` over settings with its statistical error.
pub fn estimate_moment(ds: &CorrelationDataset, subset: SubsetMask, order: u32) -> Result<MomentEstimate> {
    subset.check_nonempty(ds.n)?;
    if order == 0 {
        return Err(Error::UnsupportedOrder(order));
    }
    if ds.settings() < 4 {
        return Err(Error::TooFewSettings { needed: 4, found: ds.settings() });
    }
    let values = ds.values(subset);
    let k = order as i32;
    let mk = sample_moment(&values, k);
    let m2k = sample_moment(&values, 2 * k);
    Ok(MomentEstimate {
        subset,
        order,
        value: mk,
        error: second_moment_variance(mk, m2k, values.len()).sqrt(),
        estimator: Estimator::Raw,
    })
}

/// Discretization and stopping rule of the Bayesian finite-shot correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesConfig {
    /// Uniform grid points on `[-1, 1]`, shared by `E_R` and `E_M`.
    pub grid_points: usize,
    /// Upper limit on prior-update passes; 1 is a single Bayes update.
    pub max_passes: usize,
    /// Stop once a pass changes the moment by less than this.
    pub tolerance: f64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self { grid_points: 2001, max_passes: 50, tolerance: 1e-6 }
    }
}

/// Binned distribution of measured values on the uniform grid.
struct GridData {
    grid: Vec<f64>,
    step: f64,
    /// `(grid index, probability mass)` for occupied bins.
    occupied: Vec<(usize, f64)>,
}

impl GridData {
    fn new(values: &[f64], points: usize) -> Self {
        let step = 2.0 / (points - 1) as f64;
        let grid: Vec<f64> = (0..points).map(|i| -1.0 + i as f64 * step).collect();
        let mut counts = vec![0usize; points];
        for v in values {
            let i = ((v.clamp(-1.0, 1.0) + 1.0) / step).round() as usize;
            counts[i.min(points - 1)] += 1;
        }
        let total = values.len() as f64;
        let occupied = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c as f64 / total))
            .collect();
        Self { grid, step, occupied }
    }
}

/// Gaussian shot-noise likelihood `p(E_M | E_R)` with `sigma = sqrt(1 - E_R^2) / sqrt(N_c)`,
/// normalized over the `E_M` grid for every `E_R` node.
struct ShotKernel {
    sigma: Vec<f64>,
    norm: Vec<f64>,
    half_width: usize,
}

impl ShotKernel {
    const CUTOFF_SIGMAS: f64 = 8.0;

    fn new(grid: &[f64], step: f64, shots: u64) -> Self {
        let floor = step / 2.0;
        let sigma: Vec<f64> = grid
            .iter()
            .map(|r| ((1.0 - r * r).max(0.0).sqrt() / (shots as f64).sqrt()).max(floor))
            .collect();
        let max_sigma = sigma.iter().copied().fold(0.0, f64::max);
        let half_width = ((Self::CUTOFF_SIGMAS * max_sigma / step).ceil() as usize).min(grid.len());
        let mut kernel = Self { sigma, norm: vec![1.0; grid.len()], half_width };
        kernel.norm = (0..grid.len())
            .map(|r| kernel.window(r, grid.len()).map(|m| kernel.raw(grid, m, r)).sum())
            .collect();
        kernel
    }

    fn window(&self, center: usize, len: usize) -> std::ops::Range<usize> {
        center.saturating_sub(self.half_width)..(center + self.half_width + 1).min(len)
    }

    fn raw(&self, grid: &[f64], m: usize, r: usize) -> f64 {
        let d = (grid[m] - grid[r]) / self.sigma[r];
        (-0.5 * d * d).exp()
    }

    fn likelihood(&self, grid: &[f64], m: usize, r: usize) -> f64 {
        self.raw(grid, m, r) / self.norm[r]
    }
}

/// One Bayes update: `p'(E_R) = sum_M p(E_M) p(E_M|E_R) prior(E_R) / sum_R' p(E_M|E_R') prior(E_R')`.
fn bayes_pass(data: &GridData, kernel: &ShotKernel, prior: &[f64]) -> Vec<f64> {
    let grid = &data.grid;
    let mut updated = vec![0.0; grid.len()];
    for &(m, weight) in &data.occupied {
        let window = kernel.window(m, grid.len());
        let evidence: f64 = window.clone().map(|r| kernel.likelihood(grid, m, r) * prior[r]).sum();
        if evidence <= 0.0 {
            continue;
        }
        for r in window {
            updated[r] += weight * kernel.likelihood(grid, m, r) * prior[r] / evidence;
        }
    }
    updated
}

fn grid_moment(grid: &[f64], dist: &[f64], k: i32) -> f64 {
    grid.iter().zip(dist).map(|(e, p)| e.powi(k) * p).sum()
}

/// Second moment with the finite-shot bias removed by Bayesian deconvolution.
///
/// The measured distribution serves as the initial prior. Each pass applies
/// Bayes' rule with the Gaussian shot kernel and feeds the updated `p(E_R)`
/// back as the prior, until the moment stabilizes or `max_passes` is reached.
/// Exact-mode datasets carry no shot noise and return the raw moment.
pub fn bayes_correct_moment_with(
    ds: &CorrelationDataset,
    subset: SubsetMask,
    config: &BayesConfig,
) -> Result<MomentEstimate> {
    let raw = estimate_moment(ds, subset, 2)?;
    let shots = match ds.shots {
        Shots::Exact => return Ok(MomentEstimate { estimator: Estimator::BayesCorrected, ..raw }),
        Shots::Finite(n) => n,
    };
    if config.grid_points < 3 || config.max_passes == 0 {
        return Err(Error::InvalidParameter("Bayes grid needs >= 3 points and >= 1 pass".into()));
    }
    let data = GridData::new(&ds.values(subset), config.grid_points);
    let kernel = ShotKernel::new(&data.grid, data.step, shots);

    let mut dist = vec![0.0; data.grid.len()];
    for &(i, w) in &data.occupied {
        dist[i] = w;
    }
    let mut moment = grid_moment(&data.grid, &dist, 2);
    for _ in 0..config.max_passes {
        dist = bayes_pass(&data, &kernel, &dist);
        let next = grid_moment(&data.grid, &dist, 2);
        let change = (next - moment).abs();
        moment = next;
        if change < config.tolerance {
            break;
        }
    }
    Ok(MomentEstimate { value: moment, estimator: Estimator::BayesCorrected, ..raw })
}

pub fn bayes_correct_moment(ds: &CorrelationDataset, subset: SubsetMask) -> Result<MomentEstimate> {
    bayes_correct_moment_with(ds, subset, &BayesConfig::default())
}

/// Second moments for every nonempty subset of `n` qubits, from one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    n: usize,
    estimator: Estimator,
    entries: Vec<Option<MomentEstimate>>,
}

impl MomentTable {
    pub fn new(n: usize, estimates: impl IntoIterator<Item = MomentEstimate>) -> Result<Self> {
        crate::quantum::check_qubits(n)?;
        let mut entries = vec![None; 1 << n];
        let mut estimator = None;
        for e in estimates {
            e.subset.check_nonempty(n)?;
            if *estimator.get_or_insert(e.estimator) != e.estimator {
                return Err(Error::MixedEstimators);
            }
            entries[e.subset.bits() as usize] = Some(e);
        }
        Ok(Self { n, estimator: estimator.unwrap_or(Estimator::Exact), entries })
    }

    pub fn exact(t: &CorrelationTensor) -> Self {
        let moments = exact_moments(t);
        let entries = moments
            .iter()
            .enumerate()
            .map(|(mask, &value)| {
                (mask != 0).then_some(MomentEstimate {
                    subset: SubsetMask(mask as u32),
                    order: 2,
                    value,
                    error: 0.0,
                    estimator: Estimator::Exact,
                })
            })
            .collect();
        Self { n: t.n(), estimator: Estimator::Exact, entries }
    }

    pub fn raw(ds: &CorrelationDataset) -> Result<Self> {
        let estimates = SubsetMask::all_nonempty(ds.n)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|a| estimate_moment(ds, a, 2))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ds.n, estimates)
    }

    pub fn bayes(ds: &CorrelationDataset, config: &BayesConfig) -> Result<Self> {
        let estimates = SubsetMask::all_nonempty(ds.n)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|a| bayes_correct_moment_with(ds, a, config))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ds.n, estimates)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn get(&self, subset: SubsetMask) -> Option<&MomentEstimate> {
        self.entries.get(subset.bits() as usize)?.as_ref()
    }

    fn value_error(&self, subset: SubsetMask) -> Result<(f64, f64)> {
        if subset.is_empty() {
            return Ok((1.0, 0.0));
        }
        self.get(subset)
            .map(|e| (e.value, e.error))
            .ok_or_else(|| Error::MissingMoment(subset.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &MomentEstimate> {
        self.entries.iter().flatten()
    }
}

/// A value with its first-order propagated standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured {
    pub value: f64,
    pub error: f64,
}

/// `M_S = m_S - 1/2 sum_{A proper nonempty subset of S} m_A m_{S \ A}`.
///
/// Errors are propagated to first order, treating the subset moments as independent.
pub fn witness_value(moments: &MomentTable, set: SubsetMask) -> Result<Measured> {
    set.check_nonempty(moments.n)?;
    let (m_s, err_s) = moments.value_error(set)?;
    let mut value = m_s;
    let mut var = err_s * err_s;
    for a in set.subsets().filter(|a| !a.is_empty() && *a != set) {
        let (m_a, err_a) = moments.value_error(a)?;
        let (m_b, _) = moments.value_error(set.minus(a))?;
        value -= 0.5 * m_a * m_b;
        // d M / d m_A = -m_{S\A}; each unordered pair appears twice in the sum
        var += (m_b * err_a).powi(2);
    }
    Ok(Measured { value, error: var.sqrt() })
}

/// Purity of the reduced state on `set`: `2^-|S| sum_{A subset of S} 3^|A| m_A`.
pub fn purity_from_moments(moments: &MomentTable, set: SubsetMask) -> Result<Measured> {
    set.check_nonempty(moments.n)?;
    let mut value = 0.0;
    let mut var = 0.0;
    for a in set.subsets() {
        let (m, err) = moments.value_error(a)?;
        let w = 3f64.powi(a.len() as i32);
        value += w * m;
        var += (w * err).powi(2);
    }
    let scale = 0.5f64.powi(set.len() as i32);
    Ok(Measured { value: value * scale, error: var.sqrt() * scale })
}

/// Purity at which the two upper branches of the four-qubit bound meet.
pub fn four_qubit_purity_threshold() -> f64 {
    (-4.0 + 3.0 * 3f64.sqrt()) / 2.0
}

const PURITY_SLACK: f64 = 1e-12;

/// Minimal excess over the bound counted as a detection when errors vanish.
const EXACT_MARGIN: f64 = 1e-12;

fn check_bound_args(n: usize, purity: f64) -> Result<()> {
    if !(2..=4).contains(&n) {
        return Err(Error::UnsupportedBound(n));
    }
    let lower = 0.5f64.powi(n as i32);
    if !(purity >= lower - PURITY_SLACK && purity <= 1.0 + PURITY_SLACK) {
        return Err(Error::PurityRange(purity));
    }
    Ok(())
}

/// Largest `M_n` attainable by biseparable `n`-qubit states of the given purity.
pub fn bisep_bound(n: usize, purity: f64) -> Result<f64> {
    check_bound_args(n, purity)?;
    let p = purity;
    Ok(match n {
        2 if p >= 0.5 => 4.0 * (1.0 - p) * p / 9.0,
        2 => (4.0 * p - 1.0) / 9.0,
        3 if p <= 0.25 => (8.0 * p - 1.0) / 27.0,
        3 if p <= 0.5 => 4.0 * p / 27.0,
        3 => 8.0 * (1.0 - p) * p / 27.0,
        _ if p <= 0.25 => (16.0 * p - 1.0) / 81.0,
        _ if p <= four_qubit_purity_threshold() => 2.0 * (-8.0 * p * p + 16.0 * p + 1.0) / 243.0,
        _ => 8.0 * (1.0 - p * p) / 81.0,
    })
}

/// `d bound / d purity`, used to propagate the purity error.
pub fn bisep_bound_slope(n: usize, purity: f64) -> Result<f64> {
    check_bound_args(n, purity)?;
    let p = purity;
    Ok(match n {
        2 if p >= 0.5 => 4.0 * (1.0 - 2.0 * p) / 9.0,
        2 => 4.0 / 9.0,
        3 if p <= 0.25 => 8.0 / 27.0,
        3 if p <= 0.5 => 4.0 / 27.0,
        3 => 8.0 * (1.0 - 2.0 * p) / 27.0,
        _ if p <= 0.25 => 16.0 / 81.0,
        _ if p <= four_qubit_purity_threshold() => 2.0 * (-16.0 * p + 16.0) / 243.0,
        _ => -16.0 * p / 81.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Bipartite entanglement (two qubits) or genuine multipartite entanglement.
    Detected,
    NotDetected,
    /// No biseparable bound is known for this subset size.
    NoBound,
}

impl Verdict {
    pub fn label(self, size: usize) -> &'static str {
        match (self, size) {
            (Verdict::Detected, 2) => "entangled",
            (Verdict::Detected, _) => "gme-detected",
            (Verdict::NotDetected, _) => "not-detected",
            (Verdict::NoBound, _) => "no-bound",
        }
    }
}

/// Witness analysis of the reduced state on one subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetReport {
    pub subset: SubsetMask,
    pub raw_moment: MomentEstimate,
    pub moment: MomentEstimate,
    pub purity: Measured,
    /// `None` for single qubits.
    pub witness: Option<Measured>,
    /// Bound at the purity estimate clamped into the physical range, with propagated error.
    pub bound: Option<Measured>,
    pub verdict: Verdict,
}

impl SubsetReport {
    /// `(M - bound) / combined error`.
    pub fn significance(&self) -> Option<f64> {
        let (w, b) = (self.witness?, self.bound?);
        let err = w.error.hypot(b.error);
        Some(if err > 0.0 { (w.value - b.value) / err } else { f64::INFINITY.copysign(w.value - b.value) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WitnessReport {
    pub n: usize,
    pub settings: usize,
    pub shots: Shots,
    pub z: f64,
    pub estimator: Estimator,
    /// One entry per nonempty subset, in bitmask order; the last is the full set.
    pub subsets: Vec<SubsetReport>,
}

impl WitnessReport {
    pub fn get(&self, subset: SubsetMask) -> Option<&SubsetReport> {
        self.subsets.iter().find(|r| r.subset == subset)
    }

    pub fn full(&self) -> &SubsetReport {
        self.subsets.last().expect("report covers the full set")
    }

    /// Subsets (of size >= 2) whose witness exceeds the bound.
    pub fn detected(&self) -> Vec<SubsetMask> {
        self.subsets.iter().filter(|r| r.verdict == Verdict::Detected).map(|r| r.subset).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    /// Detection threshold in combined standard errors.
    pub z: f64,
    pub bayes: BayesConfig,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { z: 3.0, bayes: BayesConfig::default() }
    }
}

/// Verdict for one subset given the moments of the whole state.
fn analyze_subset(
    raw: &MomentTable,
    moments: &MomentTable,
    set: SubsetMask,
    z: f64,
) -> Result<SubsetReport> {
    let k = set.len();
    let purity = purity_from_moments(moments, set)?;
    let (witness, bound, verdict) = if k < 2 {
        (None, None, Verdict::NoBound)
    } else {
        let w = witness_value(moments, set)?;
        if k > 4 {
            (Some(w), None, Verdict::NoBound)
        } else {
            let clamped = purity.value.clamp(0.5f64.powi(k as i32), 1.0);
            let b = Measured {
                value: bisep_bound(k, clamped)?,
                error: bisep_bound_slope(k, clamped)?.abs() * purity.error,
            };
            let detected = w.value - b.value > (z * w.error.hypot(b.error)).max(EXACT_MARGIN);
            (Some(w), Some(b), if detected { Verdict::Detected } else { Verdict::NotDetected })
        }
    };
    Ok(SubsetReport {
        subset: set,
        raw_moment: *raw.get(set).ok_or_else(|| Error::MissingMoment(set.to_string()))?,
        moment: *moments.get(set).ok_or_else(|| Error::MissingMoment(set.to_string()))?,
        purity,
        witness,
        bound,
        verdict,
    })
}

/// Bias-corrected moments, purities and witnesses for every subset of the dataset.
pub fn witness_report(ds: &CorrelationDataset, options: &ReportOptions) -> Result<WitnessReport> {
    if ds.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let raw = MomentTable::raw(ds)?;
    let corrected = MomentTable::bayes(ds, &options.bayes)?;
    let subsets = SubsetMask::all_nonempty(ds.n)
        .map(|s| analyze_subset(&raw, &corrected, s, options.z))
        .collect::<Result<Vec<_>>>()?;
    Ok(WitnessReport {
        n: ds.n,
        settings: ds.settings(),
        shots: ds.shots,
        z: options.z,
        estimator: Estimator::BayesCorrected,
        subsets,
    })
}

/// The same analysis on exact moments of a known state.
pub fn exact_report(t: &CorrelationTensor, z: f64) -> Result<WitnessReport> {
    let exact = MomentTable::exact(t);
    let subsets = SubsetMask::all_nonempty(t.n())
        .map(|s| analyze_subset(&exact, &exact, s, z))
        .collect::<Result<Vec<_>>>()?;
    Ok(WitnessReport {
        n: t.n(),
        settings: 0,
        shots: Shots::Exact,
        z,
        estimator: Estimator::Exact,
        subsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{
        apply_local_unitaries, correlation_tensor, haar_local_unitary, make_reference_state, purity,
        state_from_tensor, DensityMatrix, Pauli, ReferenceState,
    };
    use crate::rng::substream;
    use crate::sampling::{run_experiment, ExperimentConfig, NoiseModel, SettingRecord};
    use nalgebra::DMatrix;
    use num_complex::Complex64;
    use rand::Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn reference(kind: ReferenceState) -> CorrelationTensor {
        correlation_tensor(&make_reference_state(kind))
    }

    fn bell() -> CorrelationTensor {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        correlation_tensor(&DensityMatrix::from_pure(2, &[c(h), c(0.0), c(0.0), c(h)]).unwrap())
    }

    fn diagonal(n: usize, weights: &[(usize, f64)]) -> CorrelationTensor {
        let dim = 1 << n;
        let mut m = DMatrix::zeros(dim, dim);
        for &(i, w) in weights {
            m[(i, i)] = c(w);
        }
        correlation_tensor(&DensityMatrix::new(n, m).unwrap())
    }

    /// Ginibre mixed state of rank `rank`.
    fn random_state<R: Rng>(n: usize, rank: usize, rng: &mut R) -> DensityMatrix {
        let dim = 1 << n;
        let g = DMatrix::from_fn(dim, rank, |_, _| {
            Complex64::new(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal))
        });
        let m = &g * g.adjoint();
        let tr = m.trace();
        DensityMatrix::new(n, m / tr).unwrap()
    }

    fn exact_dataset(t: &CorrelationTensor, settings: usize, seed: u64) -> CorrelationDataset {
        let cfg = ExperimentConfig { settings, shots: Shots::Exact, noise: NoiseModel::NONE, seed };
        run_experiment(t, "test", &cfg).unwrap()
    }

    #[test]
    fn exact_moment_examples() {
        let full2 = SubsetMask::full(2);
        assert!((exact_moment(&bell(), full2, 2).unwrap().value - 1.0 / 3.0).abs() < 1e-12);
        let ghz = reference(ReferenceState::Ghz);
        assert!((exact_moment(&ghz, SubsetMask::full(4), 2).unwrap().value - 1.0 / 9.0).abs() < 1e-12);
        let mm = CorrelationTensor::identity(3).unwrap();
        for a in SubsetMask::all_nonempty(3) {
            assert_eq!(exact_moment(&mm, a, 2).unwrap().value, 0.0);
        }
        assert!(matches!(exact_moment(&ghz, full2, 4), Err(Error::UnsupportedOrder(4))));
        assert!(matches!(exact_moment(&ghz, SubsetMask::EMPTY, 2), Err(Error::EmptySubset)));
    }

    #[test]
    fn sampled_moment_matches_oracle() {
        let ghz = reference(ReferenceState::Ghz);
        let ds = exact_dataset(&ghz, 10_000, 21);
        let est = estimate_moment(&ds, SubsetMask::full(4), 2).unwrap();
        assert!((est.value - 1.0 / 9.0).abs() < 3.0 * est.error, "{est:?}");

        let mm = exact_dataset(&CorrelationTensor::identity(4).unwrap(), 1000, 1);
        let est = estimate_moment(&mm, SubsetMask::full(4), 2).unwrap();
        assert!(est.value.abs() <= 3.0 * est.error + 1e-300);
    }

    #[test]
    fn degenerate_sample() {
        let value = 0.4;
        let records = (0..100)
            .map(|j| SettingRecord { index: j, directions: vec![[0.0, 0.0, 1.0]], correlations: vec![1.0, value] })
            .collect();
        let ds = CorrelationDataset {
            n: 1,
            state: "const".into(),
            shots: Shots::Exact,
            noise: NoiseModel::NONE,
            seed: 0,
            records,
        };
        let est = estimate_moment(&ds, SubsetMask(1), 2).unwrap();
        assert!((est.value - 0.16).abs() < 1e-15);
        // only the (N_s - 3)/(N_s - 1) residual remains
        let residual = (0.16f64.powi(2) * (1.0 - 97.0 / 99.0) / 100.0).sqrt();
        assert!((est.error - residual).abs() < 1e-12);
        let est3 = estimate_moment(&ds, SubsetMask(1), 3).unwrap();
        assert!((est3.value - 0.064).abs() < 1e-15);

        let mut short = ds.clone();
        short.records.truncate(3);
        assert!(matches!(estimate_moment(&short, SubsetMask(1), 2), Err(Error::TooFewSettings { .. })));
    }

    #[test]
    fn exact_mode_bayes_is_raw() {
        let ds = exact_dataset(&reference(ReferenceState::Cluster), 2000, 4);
        for a in SubsetMask::all_nonempty(4) {
            let raw = estimate_moment(&ds, a, 2).unwrap();
            let corrected = bayes_correct_moment(&ds, a).unwrap();
            assert!((raw.value - corrected.value).abs() < 1e-4);
            assert_eq!(corrected.estimator, Estimator::BayesCorrected);
        }
    }

    fn shot_dataset(t: &CorrelationTensor, seed: u64) -> CorrelationDataset {
        let cfg = ExperimentConfig { settings: 10_000, shots: Shots::Finite(475), noise: NoiseModel::NONE, seed };
        run_experiment(t, "test", &cfg).unwrap()
    }

    #[test]
    fn bayes_removes_white_noise_bias() {
        let ds = shot_dataset(&CorrelationTensor::identity(4).unwrap(), 5);
        let full = SubsetMask::full(4);
        let raw = estimate_moment(&ds, full, 2).unwrap();
        assert!((raw.value - 1.0 / 475.0).abs() < 3.0 * raw.error, "{raw:?}");
        let corrected = bayes_correct_moment(&ds, full).unwrap();
        assert!(corrected.value < 0.0007, "{corrected:?}");
        // a single update only removes about a quarter of the bias
        let single = BayesConfig { max_passes: 1, ..BayesConfig::default() };
        let once = bayes_correct_moment_with(&ds, full, &single).unwrap();
        assert!(once.value > 0.0012 && once.value < raw.value);
    }

    #[test]
    fn bayes_on_ghz() {
        let ds = shot_dataset(&reference(ReferenceState::Ghz), 6);
        let full = SubsetMask::full(4);
        let raw = estimate_moment(&ds, full, 2).unwrap();
        let corrected = bayes_correct_moment(&ds, full).unwrap();
        let bias = (1.0 - 1.0 / 9.0) / 475.0;
        assert!((raw.value - corrected.value - bias).abs() < 3e-4, "{raw:?} {corrected:?}");
        assert!((corrected.value - 1.0 / 9.0).abs() < 3.0 * corrected.error);
    }

    #[test]
    fn witness_examples() {
        let ghz = MomentTable::exact(&reference(ReferenceState::Ghz));
        let m4 = witness_value(&ghz, SubsetMask::full(4)).unwrap();
        assert!((m4.value - 2.0 / 27.0).abs() < 1e-12);
        assert_eq!(m4.error, 0.0);
        let m2 = witness_value(&MomentTable::exact(&bell()), SubsetMask::full(2)).unwrap();
        assert!((m2.value - 1.0 / 3.0).abs() < 1e-12);
        let zero = diagonal(2, &[(0, 1.0)]);
        let table = MomentTable::exact(&zero);
        assert!((table.get(SubsetMask::full(2)).unwrap().value - 1.0 / 9.0).abs() < 1e-12);
        assert!(witness_value(&table, SubsetMask::full(2)).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn witness_needs_all_subsets() {
        let exact = exact_moments(&bell());
        let partial = MomentTable::new(
            2,
            [MomentEstimate { subset: SubsetMask(3), order: 2, value: exact[3], error: 0.0, estimator: Estimator::Exact }],
        )
        .unwrap();
        assert!(matches!(witness_value(&partial, SubsetMask(3)), Err(Error::MissingMoment(_))));
        let mixed = MomentTable::new(
            2,
            [
                MomentEstimate { subset: SubsetMask(1), order: 2, value: 0.0, error: 0.0, estimator: Estimator::Exact },
                MomentEstimate { subset: SubsetMask(2), order: 2, value: 0.0, error: 0.0, estimator: Estimator::Raw },
            ],
        );
        assert!(matches!(mixed, Err(Error::MixedEstimators)));
    }

    #[test]
    fn witness_error_propagation() {
        let est = |mask, value, error| MomentEstimate {
            subset: SubsetMask(mask),
            order: 2,
            value,
            error,
            estimator: Estimator::Raw,
        };
        let table = MomentTable::new(2, [est(1, 0.2, 0.01), est(2, 0.3, 0.02), est(3, 0.25, 0.03)]).unwrap();
        let w = witness_value(&table, SubsetMask(3)).unwrap();
        assert!((w.value - (0.25 - 0.06)).abs() < 1e-15);
        let expected = (0.03f64.powi(2) + (0.3f64 * 0.01).powi(2) + (0.2f64 * 0.02).powi(2)).sqrt();
        assert!((w.error - expected).abs() < 1e-15);
    }

    #[test]
    fn bound_examples() {
        assert_eq!(bisep_bound(2, 1.0).unwrap(), 0.0);
        let mid: f64 = 4.0 * 0.5 / 27.0;
        let upper = 8.0 * 0.5 * 0.5 / 27.0;
        assert!((bisep_bound(3, 0.5).unwrap() - 2.0 / 27.0).abs() < 1e-15);
        assert!((mid - upper).abs() < 1e-15);
        let p0 = four_qubit_purity_threshold();
        assert!((p0 - 0.598_076_211_353_316).abs() < 1e-12);
        let lower_branch = 2.0 * (-8.0 * p0 * p0 + 16.0 * p0 + 1.0) / 243.0;
        let upper_branch = 8.0 * (1.0 - p0 * p0) / 81.0;
        assert!((lower_branch - upper_branch).abs() < 1e-12);
        assert!(matches!(bisep_bound(5, 0.5), Err(Error::UnsupportedBound(5))));
        assert!(matches!(bisep_bound(3, 0.1), Err(Error::PurityRange(_))));
        assert!(matches!(bisep_bound(2, 1.01), Err(Error::PurityRange(_))));
    }

    #[test]
    fn bounds_are_continuous_and_slopes_match() {
        for n in 2..=4 {
            let lo = 0.5f64.powi(n as i32);
            let steps = 10_000;
            for i in 1..steps {
                let p = lo + (1.0 - lo) * i as f64 / steps as f64;
                let h = 1e-7;
                let (a, b) = (bisep_bound(n, p - h).unwrap(), bisep_bound(n, p + h).unwrap());
                assert!((a - b).abs() < 1e-6, "n={n} p={p}");
                let slope = bisep_bound_slope(n, p).unwrap();
                if ![0.25, 0.5, four_qubit_purity_threshold()].iter().any(|k| (p - k).abs() < 2.0 * h) {
                    assert!(((b - a) / (2.0 * h) - slope).abs() < 1e-5, "n={n} p={p}");
                }
            }
        }
    }

    #[test]
    fn two_qubit_family_is_tight() {
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            let t = diagonal(2, &[(0, p), (3, 1.0 - p)]);
            let m = witness_value(&MomentTable::exact(&t), SubsetMask::full(2)).unwrap().value;
            let closed = (1.0 - (2.0 * p - 1.0).powi(4)) / 9.0;
            assert!((m - closed).abs() < 1e-12);
            assert!((m - bisep_bound(2, purity(&t)).unwrap()).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn strength_test_vector() {
        let s3 = 3f64.sqrt();
        let root = 2f64.sqrt() * 3f64.powf(0.75);
        let mut t = CorrelationTensor::identity(2).unwrap();
        use Pauli::*;
        t.set(&[X, X], 1.0 / s3);
        t.set(&[Y, Y], 1.0 / s3);
        t.set(&[Z, Z], -1.0 / s3);
        t.set(&[I, Z], (-3.0 + s3 + root) / 6.0);
        t.set(&[Z, I], (-3.0 + s3 - root) / 6.0);
        let rho = state_from_tensor(&t).unwrap();
        assert!(rho.min_eigenvalue() > -1e-9);
        let bar_m12: f64 = [X, Y, Z].iter().flat_map(|a| [X, Y, Z].map(|b| t.get(&[*a, b]).powi(2))).sum();
        assert!((bar_m12 - 1.0).abs() < 1e-12);
        let table = MomentTable::exact(&t);
        let m2 = witness_value(&table, SubsetMask::full(2)).unwrap().value;
        let p = purity(&t);
        assert!(m2 - bisep_bound(2, p).unwrap() > 0.0);
    }

    #[test]
    fn purity_from_exact_moments() {
        let mut rng = substream(77, 0, 0);
        for n in 2..=4 {
            for i in 0..100 {
                let rho = random_state(n, 1 + i % (1 << n), &mut rng);
                let table = MomentTable::exact(&correlation_tensor(&rho));
                let p = purity_from_moments(&table, SubsetMask::full(n)).unwrap();
                assert!((p.value - rho.purity()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn exact_report_is_lu_invariant() {
        let mut rng = substream(78, 0, 0);
        for kind in [ReferenceState::Trisep, ReferenceState::Bisep { phi: 0.2 }, ReferenceState::Ghz, ReferenceState::Cluster] {
            let rho = make_reference_state(kind);
            let before = exact_report(&correlation_tensor(&rho), 3.0).unwrap();
            for _ in 0..10 {
                let us: Vec<_> = (0..4).map(|_| haar_local_unitary(&mut rng)).collect();
                let after = exact_report(&correlation_tensor(&apply_local_unitaries(&rho, &us).unwrap()), 3.0).unwrap();
                for (a, b) in before.subsets.iter().zip(&after.subsets) {
                    assert!((a.moment.value - b.moment.value).abs() < 1e-10);
                    assert!((a.purity.value - b.purity.value).abs() < 1e-10);
                    if let (Some(x), Some(y)) = (a.witness, b.witness) {
                        assert!((x.value - y.value).abs() < 1e-10);
                    }
                    assert_eq!(a.verdict, b.verdict);
                }
            }
        }
    }

    #[test]
    fn exact_reports_of_reference_states() {
        let q = SubsetMask::from_qubits;
        let ghz = exact_report(&reference(ReferenceState::Ghz), 3.0).unwrap();
        assert_eq!(ghz.full().verdict, Verdict::Detected);
        assert!(SubsetMask::all_nonempty(4).filter(|s| s.len() == 3).all(|s| ghz.get(s).unwrap().verdict == Verdict::NotDetected));

        let trisep = exact_report(&reference(ReferenceState::Trisep), 3.0).unwrap();
        assert_eq!(trisep.detected(), vec![q(&[1, 2])]);
        for s in [q(&[3]), q(&[4])] {
            assert!((trisep.get(s).unwrap().purity.value - 1.0).abs() < 1e-12);
        }

        let bisep = exact_report(&reference(ReferenceState::Bisep { phi: 0.2 }), 3.0).unwrap();
        assert_eq!(bisep.detected(), vec![q(&[1, 2]), q(&[3, 4])]);

        let mm = exact_report(&CorrelationTensor::identity(4).unwrap(), 3.0).unwrap();
        assert!(mm.detected().is_empty());
    }

    #[test]
    fn sampled_report_of_ghz() {
        let ds = shot_dataset(&reference(ReferenceState::Ghz), 8);
        let report = witness_report(&ds, &ReportOptions::default()).unwrap();
        assert_eq!(report.full().verdict, Verdict::Detected);
        let full = report.full().witness.unwrap();
        assert!((full.value - 2.0 / 27.0).abs() < 3.0 * full.error, "{full:?}");
        assert!(report.subsets.iter().filter(|r| r.subset.len() == 3).all(|r| r.verdict == Verdict::NotDetected));
    }

    #[test]
    fn sampled_report_of_white_noise() {
        let ds = shot_dataset(&CorrelationTensor::identity(4).unwrap(), 9);
        let report = witness_report(&ds, &ReportOptions::default()).unwrap();
        assert!(report.detected().is_empty(), "{:?}", report.detected());
    }
}
