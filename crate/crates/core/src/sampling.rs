//! Random measurement settings, exact and shot-sampled correlations, and the
//! experiment loop with local unitary noise.
//!
//! Observables are represented by their Bloch directions. Channel noise
//! `rho -> U rho U^dagger` is folded into the measured directions analytically:
//! measuring `a.sigma` on the rotated state equals measuring `(R^T a).sigma` on
//! the original one, where `R` is the rotation of `U`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution, UnitSphere};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quantum::{haar_local_unitary, CorrelationTensor, SubsetMask};
use crate::rng::{substream, NOISE_STREAM, SETTING_STREAM};

/// Outcome probabilities in `[-CLIP_TOL, 0)` are treated as rounding noise.
pub const CLIP_TOL: f64 = 1e-12;

/// One unit Bloch vector per qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSetting {
    directions: Vec<[f64; 3]>,
}

impl MeasurementSetting {
    pub fn new(directions: Vec<[f64; 3]>) -> Result<Self> {
        for d in &directions {
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("direction norm {norm}")));
            }
        }
        Ok(Self { directions })
    }

    /// All qubits measured along the same axis.
    pub fn uniform(n: usize, direction: [f64; 3]) -> Result<Self> {
        Self::new(vec![direction; n])
    }

    pub fn n(&self) -> usize {
        self.directions.len()
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    /// Directions seen by the unrotated state when `rotations[q]` acts on qubit `q`.
    fn pulled_back(&self, rotations: &[[[f64; 3]; 3]]) -> MeasurementSetting {
        let directions = self
            .directions
            .iter()
            .zip(rotations)
            .map(|(a, r)| {
                let mut b = [0.0; 3];
                for (k, bk) in b.iter_mut().enumerate() {
                    *bk = (0..3).map(|j| r[j][k] * a[j]).sum();
                }
                b
            })
            .collect();
        MeasurementSetting { directions }
    }
}

/// Independent Haar-uniform direction for every qubit.
pub fn sample_setting<R: Rng + ?Sized>(n: usize, rng: &mut R) -> MeasurementSetting {
    let directions = (0..n).map(|_| UnitSphere.sample(rng)).collect();
    MeasurementSetting { directions }
}

/// `E_A` for every subset, indexed by mask; entry 0 is the trivial `E = 1`.
pub fn all_correlations(t: &CorrelationTensor, s: &MeasurementSetting) -> Result<Vec<f64>> {
    let n = t.n();
    if s.n() != n {
        return Err(Error::Dimension { expected: n, found: s.n() });
    }
    let mut out = vec![0.0; 1 << n];
    for (idx, &v) in t.entries().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let mut mask = 0usize;
        let mut weight = v;
        for q in 0..n {
            let mu = (idx >> (2 * (n - 1 - q))) & 3;
            if mu != 0 {
                mask |= 1 << q;
                weight *= s.directions[q][mu - 1];
            }
        }
        out[mask] += weight;
    }
    Ok(out)
}

/// `tr(rho ⊗_{i in A} a_i.sigma)` for a nonempty subset `A`.
pub fn exact_correlation(t: &CorrelationTensor, s: &MeasurementSetting, subset: SubsetMask) -> Result<f64> {
    subset.check_nonempty(t.n())?;
    Ok(all_correlations(t, s)?[subset.bits() as usize])
}

/// Joint distribution of the `n` outcomes; bit `q` of the index set means qubit `q` gave `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution {
    n: usize,
    probs: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// `sum_o p(o) prod_{i in A} o_i`.
    pub fn expectation(&self, subset: SubsetMask) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(o, p)| if parity(o, subset) { -p } else { *p })
            .sum()
    }
}

fn parity(outcome: usize, subset: SubsetMask) -> bool {
    (outcome as u32 & subset.bits()).count_ones() % 2 == 1
}

/// Outcome table from exact correlations: `p(o) = 2^-n sum_A E_A prod_{i in A} o_i`.
pub fn outcome_distribution(t: &CorrelationTensor, s: &MeasurementSetting) -> Result<OutcomeDistribution> {
    let corr = all_correlations(t, s)?;
    distribution_from_correlations(t.n(), &corr)
}

fn distribution_from_correlations(n: usize, corr: &[f64]) -> Result<OutcomeDistribution> {
    let dim = 1usize << n;
    // Walsh-Hadamard transform over subset masks
    let mut probs = corr.to_vec();
    let mut h = 1;
    while h < dim {
        for i in (0..dim).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (probs[j], probs[j + h]);
                probs[j] = a + b;
                probs[j + h] = a - b;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / dim as f64;
    let mut clipped = false;
    for p in probs.iter_mut() {
        *p *= scale;
        if *p < 0.0 {
            if *p < -CLIP_TOL {
                return Err(Error::NegativeProbability(*p));
            }
            *p = 0.0;
            clipped = true;
        }
    }
    if clipped {
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
    }
    Ok(OutcomeDistribution { n, probs })
}

/// Shots per setting: a finite count or the noiseless limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shots {
    Exact,
    Finite(u64),
}

impl Shots {
    pub fn finite(self) -> Option<u64> {
        match self {
            Shots::Exact => None,
            Shots::Finite(n) => Some(n),
        }
    }
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::Exact => f.write_str("exact"),
            Shots::Finite(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Shots {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("exact") {
            return Ok(Shots::Exact);
        }
        match s.parse::<u64>() {
            Ok(n) if n >= 1 => Ok(Shots::Finite(n)),
            _ => Err(Error::InvalidParameter(format!("shot count `{s}`"))),
        }
    }
}

/// Estimated correlations for one setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingRecord {
    pub index: u64,
    pub directions: Vec<[f64; 3]>,
    /// Indexed by subset mask; entry 0 is always 1.
    pub correlations: Vec<f64>,
}

impl SettingRecord {
    pub fn correlation(&self, subset: SubsetMask) -> f64 {
        self.correlations[subset.bits() as usize]
    }
}

/// Draws `shots` outcome tuples and estimates every subset correlation from the same list.
pub fn simulate_setting<R: Rng + ?Sized>(
    t: &CorrelationTensor,
    s: &MeasurementSetting,
    shots: Shots,
    index: u64,
    rng: &mut R,
) -> Result<SettingRecord> {
    let exact = all_correlations(t, s)?;
    let correlations = match shots {
        Shots::Exact => exact,
        Shots::Finite(count) => {
            let dist = distribution_from_correlations(t.n(), &exact)?;
            let counts = multinomial(count, &dist.probs, rng);
            correlations_from_counts(t.n(), &counts)
        }
    };
    Ok(SettingRecord { index, directions: s.directions.clone(), correlations })
}

fn multinomial<R: Rng + ?Sized>(total: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = total;
    let mut mass = 1.0f64;
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == probs.len() - 1 {
            counts[i] = remaining;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q).expect("valid binomial").sample(rng)
        };
        counts[i] = k;
        remaining -= k;
        mass -= p;
    }
    counts
}

/// `E_A = (N_+ - N_-) / N` computed exactly in integers.
fn correlations_from_counts(n: usize, counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    (0..1u32 << n)
        .map(|mask| {
            let signed: i64 = counts
                .iter()
                .enumerate()
                .map(|(o, &c)| if parity(o, SubsetMask(mask)) { -(c as i64) } else { c as i64 })
                .sum();
            signed as f64 / total as f64
        })
        .collect()
}

/// Scheduling of the local unitary channel noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    None,
    /// New random unitaries for every setting.
    FreshPerSetting,
    /// One unitary set held for `block` consecutive settings.
    Drift { block: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseModel {
    pub mode: NoiseMode,
    pub stream: u64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel { mode: NoiseMode::None, stream: 0 };

    pub fn new(mode: NoiseMode) -> Result<Self> {
        if let NoiseMode::Drift { block: 0 } = mode {
            return Err(Error::InvalidParameter("drift block length must be >= 1".into()));
        }
        Ok(Self { mode, stream: 0 })
    }

    fn block_of(&self, setting: u64) -> Option<u64> {
        match self.mode {
            NoiseMode::None => None,
            NoiseMode::FreshPerSetting => Some(setting),
            NoiseMode::Drift { block } => Some(setting / block),
        }
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::NONE
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            NoiseMode::None => f.write_str("none")?,
            NoiseMode::FreshPerSetting => f.write_str("fresh")?,
            NoiseMode::Drift { block } => write!(f, "drift:{block}")?,
        }
        if self.stream != 0 {
            write!(f, "@{}", self.stream)?;
        }
        Ok(())
    }
}

impl FromStr for NoiseModel {
    type Err = Error;

    /// `none`, `fresh`, `drift:<B>`, optionally suffixed with `@<stream>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (body, stream) = match s.split_once('@') {
            Some((b, st)) => (
                b,
                st.parse().map_err(|_| Error::InvalidParameter(format!("noise stream `{st}`")))?,
            ),
            None => (s, 0),
        };
        let mode = match body.split_once(':') {
            None if body == "none" => NoiseMode::None,
            None if body == "fresh" => NoiseMode::FreshPerSetting,
            Some(("drift", b)) => NoiseMode::Drift {
                block: b.parse().map_err(|_| Error::InvalidParameter(format!("drift block `{b}`")))?,
            },
            _ => return Err(Error::InvalidParameter(format!("noise model `{s}`"))),
        };
        let mut model = NoiseModel::new(mode)?;
        model.stream = stream;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationDataset {
    pub n: usize,
    /// Free-form description of the measured state.
    pub state: String,
    pub shots: Shots,
    pub noise: NoiseModel,
    pub seed: u64,
    pub records: Vec<SettingRecord>,
}

impl CorrelationDataset {
    pub fn settings(&self) -> usize {
        self.records.len()
    }

    /// Per-setting values of `E_A`.
    pub fn values(&self, subset: SubsetMask) -> Vec<f64> {
        self.records.iter().map(|r| r.correlation(subset)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub settings: usize,
    pub shots: Shots,
    pub noise: NoiseModel,
    pub seed: u64,
}

/// Channel unitaries (as rotations) in force for `setting`.
fn noise_rotations(n: usize, noise: &NoiseModel, seed: u64, setting: u64) -> Option<Vec<[[f64; 3]; 3]>> {
    let block = noise.block_of(setting)?;
    let mut rng = substream(seed, NOISE_STREAM ^ noise.stream << 20, block);
    Some((0..n).map(|_| haar_local_unitary(&mut rng).rotation()).collect())
}

/// Simulates `settings` independent random settings, in parallel with one substream per setting.
pub fn run_experiment(state: &CorrelationTensor, label: &str, config: &ExperimentConfig) -> Result<CorrelationDataset> {
    if config.settings == 0 {
        return Err(Error::InvalidParameter("at least one setting required".into()));
    }
    let n = state.n();
    let records = (0..config.settings as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(config.seed, SETTING_STREAM, j);
            let setting = sample_setting(n, &mut rng);
            match noise_rotations(n, &config.noise, config.seed, j) {
                None => simulate_setting(state, &setting, config.shots, j, &mut rng),
                Some(rots) => {
                    let effective = setting.pulled_back(&rots);
                    let mut record = simulate_setting(state, &effective, config.shots, j, &mut rng)?;
                    record.directions = setting.directions;
                    Ok(record)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationDataset {
        n,
        state: label.to_string(),
        shots: config.shots,
        noise: config.noise,
        seed: config.seed,
        records,
    })
}
