//! Random biseparable states and empirical checks of the purity-dependent witness bounds.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::moments::{bisep_bound, exact_moments};
use crate::quantum::{
    correlation_tensor, haar_local_unitary, purity, state_from_tensor, CorrelationTensor, DensityMatrix, SubsetMask,
};
use crate::rng::{substream, SCAN_STREAM};
use crate::{Error, Result};

pub const DEFAULT_BIN_WIDTH: f64 = 0.01;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const MAX_MIXTURE_TERMS: usize = 8;

/// Raw draws tried before a stratified sample falls back to a pure state.
const STRATIFY_ATTEMPTS: usize = 8;

/// Which states a scan draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanMode {
    Biseparable,
    /// Arbitrary states, for the empirical boundary of physicality.
    AllStates,
    /// Only the tightness family of `boundary_state`.
    BoundaryFamily,
}

impl fmt::Display for ScanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScanMode::Biseparable => "biseparable",
            ScanMode::AllStates => "all-states",
            ScanMode::BoundaryFamily => "boundary",
        })
    }
}

impl FromStr for ScanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "biseparable" | "bisep" => Ok(ScanMode::Biseparable),
            "all-states" | "all" => Ok(ScanMode::AllStates),
            "boundary" => Ok(ScanMode::BoundaryFamily),
            other => Err(Error::InvalidParameter(format!("unknown scan mode `{other}`"))),
        }
    }
}

/// Ensemble a factor state was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    /// Haar-random pure state.
    Pure,
    /// `G G^dagger / tr` with a complex Gaussian `G` of the given column count.
    Ginibre { rank: usize },
    /// GHZ-type state with a random phase, rotated by random local unitaries.
    Ghz,
}

/// One term `w rho_A ⊗ rho_B` of a biseparable mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTerm {
    pub weight: f64,
    /// Side `A` of the cut; always contains qubit 1.
    pub cut: SubsetMask,
    pub factors: [FactorKind; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateFamily {
    Mixture(Vec<MixtureTerm>),
    /// The tightness family at parameter `p`, with permuted qubits and random local unitaries.
    Boundary { p: f64 },
    /// Fallback when no raw draw was pure enough for the target purity.
    PureProduct { cut: SubsetMask },
    /// An arbitrary (possibly entangled) `n`-qubit state.
    Global(FactorKind),
}

/// A scan sample: how it was drawn, and its exact purity and witness.
///
/// `state()` regenerates the density matrix from `(seed, index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BisepSample {
    pub n: usize,
    pub mode: ScanMode,
    pub seed: u64,
    pub index: u64,
    pub target_purity: f64,
    pub family: StateFamily,
    /// White-noise visibility applied after the draw.
    pub visibility: f64,
    pub purity: f64,
    pub witness: f64,
}

impl BisepSample {
    pub fn tensor(&self) -> Result<CorrelationTensor> {
        let mut rng = substream(self.seed, SCAN_STREAM, self.index);
        Ok(draw_stratified(self.n, self.mode, self.target_purity, &mut rng)?.0)
    }

    pub fn state(&self) -> Result<DensityMatrix> {
        state_from_tensor(&self.tensor()?)
    }
}

/// `M_n` of the full qubit set, from exact moments.
pub fn exact_witness(t: &CorrelationTensor) -> f64 {
    let m = exact_moments(t);
    let full = SubsetMask::full(t.n());
    full.subsets()
        .filter(|a| !a.is_empty() && *a != full)
        .fold(m[full.bits() as usize], |acc, a| {
            acc - 0.5 * m[a.bits() as usize] * m[full.minus(a).bits() as usize]
        })
}

fn check_scan_qubits(n: usize) -> Result<()> {
    if (2..=4).contains(&n) {
        Ok(())
    } else {
        Err(Error::UnsupportedBound(n))
    }
}

fn bell_plus() -> CorrelationTensor {
    let amps = [FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2].map(|v| Complex64::new(v, 0.0));
    correlation_tensor(&DensityMatrix::from_pure(2, &amps).expect("valid amplitudes"))
}

fn basis_tensor(n: usize, bits: usize) -> CorrelationTensor {
    let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
    amps[bits] = Complex64::new(1.0, 0.0);
    correlation_tensor(&DensityMatrix::from_pure(n, &amps).expect("valid amplitudes"))
}

fn boundary_tensor(n: usize, p: f64) -> Result<CorrelationTensor> {
    check_scan_qubits(n)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("mixing parameter {p} outside [0, 1]")));
    }
    let (first, second) = match n {
        2 => (basis_tensor(2, 0b00), basis_tensor(2, 0b11)),
        3 => {
            let minus = bell_plus().rotate(&[z_flip(), identity3()])?;
            let ab = SubsetMask::from_qubits(&[1, 2]);
            (bell_plus().embed_product(ab, &basis_tensor(1, 0))?, minus.embed_product(ab, &basis_tensor(1, 1))?)
        }
        _ => (
            bell_plus().embed_product(SubsetMask::from_qubits(&[1, 2]), &bell_plus())?,
            bell_plus().embed_product(SubsetMask::from_qubits(&[1, 3]), &bell_plus())?,
        ),
    };
    CorrelationTensor::mixture(&[(p, &first), (1.0 - p, &second)])
}

fn identity3() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// Bloch rotation of `Z`: turns `|phi+>` into `|phi->` on the first qubit.
fn z_flip() -> [[f64; 3]; 3] {
    [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// The tightness state for `n` qubits:
/// `p|00><00| + (1-p)|11><11|`, `p phi+ ⊗ |0><0| + (1-p) phi- ⊗ |1><1|`, or
/// `p phi+_12 ⊗ phi+_34 + (1-p) phi+_13 ⊗ phi+_24`.
pub fn boundary_state(n: usize, p: f64) -> Result<DensityMatrix> {
    state_from_tensor(&boundary_tensor(n, p)?)
}

/// Purity of `boundary_state(n, p)`.
pub fn boundary_purity(n: usize, p: f64) -> f64 {
    let q = 1.0 - p;
    if n == 4 {
        p * p + q * q + p * q / 2.0
    } else {
        p * p + q * q
    }
}

/// Smallest purity reached by the tightness family.
fn boundary_min_purity(n: usize) -> f64 {
    boundary_purity(n, 0.5)
}

/// Parameter `p >= 1/2` with `boundary_purity(n, p) = target`.
fn boundary_parameter(n: usize, target: f64) -> f64 {
    let x = if n == 4 { (target - 0.625) * 2.0 / 3.0 } else { (target - 0.5) / 2.0 };
    (0.5 + x.max(0.0).sqrt()).min(1.0)
}

/// Relabels qubits: qubit `q` of `t` becomes qubit `perm[q]`.
pub fn permute_qubits(t: &CorrelationTensor, perm: &[usize]) -> Result<CorrelationTensor> {
    let n = t.n();
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&q| q >= n || std::mem::replace(&mut seen[q], true)) {
        return Err(Error::InvalidParameter(format!("{perm:?} is not a permutation of {n} qubits")));
    }
    let mut entries = vec![0.0; t.entries().len()];
    for (idx, &v) in t.entries().iter().enumerate() {
        let moved = (0..n).fold(0, |acc, q| acc | ((idx >> (2 * (n - 1 - q))) & 3) << (2 * (n - 1 - perm[q])));
        entries[moved] = v;
    }
    CorrelationTensor::from_entries(n, entries)
}

fn random_rotations<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[[f64; 3]; 3]> {
    (0..n).map(|_| haar_local_unitary(rng).rotation()).collect()
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows, cols, |_, _| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

fn random_factor<R: Rng + ?Sized>(k: usize, kind: FactorKind, rng: &mut R) -> Result<CorrelationTensor> {
    let dim = 1 << k;
    match kind {
        FactorKind::Pure => {
            let psi: Vec<Complex64> = gaussian_matrix(dim, 1, rng).iter().copied().collect();
            Ok(correlation_tensor(&DensityMatrix::from_pure(k, &psi)?))
        }
        FactorKind::Ginibre { rank } => {
            let g = gaussian_matrix(dim, rank, rng);
            let m = &g * g.adjoint();
            let tr = m.trace();
            Ok(correlation_tensor(&DensityMatrix::new(k, m / tr)?))
        }
        FactorKind::Ghz => {
            let mut psi = vec![Complex64::new(0.0, 0.0); dim];
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            psi[0] = Complex64::new(FRAC_1_SQRT_2, 0.0);
            psi[dim - 1] = Complex64::from_polar(FRAC_1_SQRT_2, phase);
            let t = correlation_tensor(&DensityMatrix::from_pure(k, &psi)?);
            t.rotate(&random_rotations(k, rng))
        }
    }
}

fn random_kind<R: Rng + ?Sized>(k: usize, rng: &mut R) -> FactorKind {
    match rng.random_range(0..4) {
        0 | 1 => FactorKind::Pure,
        2 => FactorKind::Ginibre { rank: rng.random_range(1..=1 << k) },
        _ if k >= 2 => FactorKind::Ghz,
        _ => FactorKind::Pure,
    }
}

/// Uniformly random bipartition `A|B`, labelled by the side holding qubit 1.
fn random_cut<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SubsetMask {
    // masks with bit 0 set, excluding the full set
    let choices = (1u32 << (n - 1)) - 1;
    SubsetMask(1 | (rng.random_range(0..choices) << 1))
}

fn product_term<R: Rng + ?Sized>(
    n: usize,
    cut: SubsetMask,
    factors: [FactorKind; 2],
    rng: &mut R,
) -> Result<CorrelationTensor> {
    let a = random_factor(cut.len(), factors[0], rng)?;
    let b = random_factor(n - cut.len(), factors[1], rng)?;
    a.embed_product(cut, &b)
}

fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

fn draw_boundary<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<CorrelationTensor> {
    let t = permute_qubits(&boundary_tensor(n, p)?, &random_permutation(n, rng))?;
    t.rotate(&random_rotations(n, rng))
}

fn draw_mixture<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(CorrelationTensor, StateFamily)> {
    let len = rng.random_range(1..=MAX_MIXTURE_TERMS);
    let raw: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    let mut terms = Vec::with_capacity(len);
    let mut tensors = Vec::with_capacity(len);
    for w in raw {
        let cut = random_cut(n, rng);
        let factors = [random_kind(cut.len(), rng), random_kind(n - cut.len(), rng)];
        tensors.push(product_term(n, cut, factors, rng)?);
        terms.push(MixtureTerm { weight: w / total, cut, factors });
    }
    let weighted: Vec<(f64, &CorrelationTensor)> = terms.iter().map(|t| t.weight).zip(&tensors).collect();
    Ok((CorrelationTensor::mixture(&weighted)?, StateFamily::Mixture(terms)))
}

fn draw_raw<R: Rng + ?Sized>(n: usize, mode: ScanMode, rng: &mut R) -> Result<(CorrelationTensor, StateFamily)> {
    match mode {
        ScanMode::Biseparable => {
            if rng.random_bool(0.25) {
                let p = rng.random_range(0.0..=1.0);
                Ok((draw_boundary(n, p, rng)?, StateFamily::Boundary { p }))
            } else {
                draw_mixture(n, rng)
            }
        }
        ScanMode::AllStates => {
            let kind = match rng.random_range(0..3) {
                0 => FactorKind::Pure,
                1 => FactorKind::Ginibre { rank: rng.random_range(1..=1 << n) },
                _ => FactorKind::Ghz,
            };
            Ok((random_factor(n, kind, rng)?, StateFamily::Global(kind)))
        }
        ScanMode::BoundaryFamily => {
            let p = rng.random_range(0.5..=1.0);
            Ok((draw_boundary(n, p, rng)?, StateFamily::Boundary { p }))
        }
    }
}

/// Visibility bringing the purity of `t` down to `target`; `None` if `t` is below it.
fn visibility_for(t: &CorrelationTensor, target: f64) -> Option<f64> {
    let dim = (1u64 << t.n()) as f64;
    let excess: f64 = t.entries()[1..].iter().map(|v| v * v).sum();
    let needed = target * dim - 1.0;
    if needed > excess * (1.0 + 1e-12) {
        return None;
    }
    if excess == 0.0 {
        return Some(1.0);
    }
    Some((needed.max(0.0) / excess).sqrt().min(1.0))
}

/// Draws a state of purity `target` (up to rounding) by diluting a raw draw with white noise.
fn draw_stratified<R: Rng + ?Sized>(
    n: usize,
    mode: ScanMode,
    target: f64,
    rng: &mut R,
) -> Result<(CorrelationTensor, StateFamily, f64)> {
    if mode == ScanMode::BoundaryFamily {
        // aim p at the target; below the family's range, dilute its least pure member
        let p = boundary_parameter(n, target);
        let t = draw_boundary(n, p, rng)?;
        let v = if target < boundary_min_purity(n) { visibility_for(&t, target).unwrap_or(1.0) } else { 1.0 };
        return Ok((t.with_visibility(v), StateFamily::Boundary { p }, v));
    }
    for _ in 0..STRATIFY_ATTEMPTS {
        let (t, family) = draw_raw(n, mode, rng)?;
        if let Some(v) = visibility_for(&t, target) {
            return Ok((t.with_visibility(v), family, v));
        }
    }
    let (t, family) = match mode {
        ScanMode::AllStates => (random_factor(n, FactorKind::Pure, rng)?, StateFamily::Global(FactorKind::Pure)),
        _ => {
            let cut = random_cut(n, rng);
            (product_term(n, cut, [FactorKind::Pure; 2], rng)?, StateFamily::PureProduct { cut })
        }
    };
    let v = visibility_for(&t, target).unwrap_or(1.0);
    Ok((t.with_visibility(v), family, v))
}

/// An unstratified random biseparable state: a mixture of 1 to 8 product terms,
/// each across its own random cut, or a randomly rotated member of the tightness family.
pub fn sample_biseparable<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DensityMatrix> {
    check_scan_qubits(n)?;
    state_from_tensor(&draw_raw(n, ScanMode::Biseparable, rng)?.0)
}

/// Random state of arbitrary entanglement.
pub fn sample_any_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DensityMatrix> {
    check_scan_qubits(n)?;
    state_from_tensor(&draw_raw(n, ScanMode::AllStates, rng)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub n: usize,
    pub samples: u64,
    pub bin_width: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub mode: ScanMode,
}

impl ScanConfig {
    pub fn new(n: usize, samples: u64, seed: u64, mode: ScanMode) -> Self {
        Self { n, samples, bin_width: DEFAULT_BIN_WIDTH, tolerance: DEFAULT_TOLERANCE, seed, mode }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    /// Largest witness seen in the bin, with the sample that produced it.
    pub max_witness: Option<f64>,
    pub index_at_max: u64,
    pub purity_at_max: f64,
    /// Bound evaluated at `purity_at_max`.
    pub bound_at_max: f64,
}

impl FrontierBin {
    fn absorb(&mut self, other: &FrontierBin) {
        self.count += other.count;
        if let Some(w) = other.max_witness {
            let better = match self.max_witness {
                None => true,
                Some(cur) => w > cur || (w == cur && other.index_at_max < self.index_at_max),
            };
            if better {
                self.max_witness = Some(w);
                self.index_at_max = other.index_at_max;
                self.purity_at_max = other.purity_at_max;
                self.bound_at_max = other.bound_at_max;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub seed: u64,
    pub index: u64,
    pub purity: f64,
    pub witness: f64,
    pub bound: f64,
}

impl Violation {
    pub fn excess(&self) -> f64 {
        self.witness - self.bound
    }
}

/// Per-purity-bin maxima of `M_n` and the samples exceeding the biseparable bound.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierTable {
    pub n: usize,
    pub mode: ScanMode,
    pub bin_width: f64,
    pub tolerance: f64,
    pub samples: u64,
    pub bins: Vec<FrontierBin>,
    /// Sorted by `(seed, index)`.
    pub violations: Vec<Violation>,
}

impl FrontierTable {
    pub fn empty(n: usize, mode: ScanMode, bin_width: f64, tolerance: f64) -> Result<Self> {
        check_scan_qubits(n)?;
        if !(bin_width > 0.0 && bin_width <= 1.0) {
            return Err(Error::InvalidParameter(format!("bin width {bin_width}")));
        }
        if !(tolerance >= 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance {tolerance}")));
        }
        let lower = 0.5f64.powi(n as i32);
        let first = (lower / bin_width + 1e-9).floor() as u64;
        let last = (1.0 / bin_width - 1e-9).ceil() as u64;
        let bins = (first..last)
            .map(|k| FrontierBin {
                lo: (k as f64 * bin_width).max(lower),
                hi: ((k + 1) as f64 * bin_width).min(1.0),
                count: 0,
                max_witness: None,
                index_at_max: 0,
                purity_at_max: f64::NAN,
                bound_at_max: f64::NAN,
            })
            .collect();
        Ok(Self { n, mode, bin_width, tolerance, samples: 0, bins, violations: Vec::new() })
    }

    pub fn bin_of(&self, purity: f64) -> usize {
        let k = self.bins.partition_point(|b| b.hi <= purity);
        k.min(self.bins.len() - 1)
    }

    pub fn violation_count(&self) -> usize {
        self.violations.len()
    }

    pub fn record(&mut self, sample: &BisepSample) -> Result<()> {
        let bound = bisep_bound(self.n, sample.purity.clamp(self.bins[0].lo, 1.0))?;
        let k = self.bin_of(sample.purity);
        self.samples += 1;
        let single = FrontierBin {
            count: 1,
            max_witness: Some(sample.witness),
            index_at_max: sample.index,
            purity_at_max: sample.purity,
            bound_at_max: bound,
            ..self.bins[k]
        };
        self.bins[k].absorb(&single);
        if sample.witness - bound > self.tolerance {
            self.violations.push(Violation {
                seed: sample.seed,
                index: sample.index,
                purity: sample.purity,
                witness: sample.witness,
                bound,
            });
        }
        Ok(())
    }

    /// Accumulates another table over the same bins: counts add, maxima take the larger.
    pub fn merge(&mut self, other: &FrontierTable) -> Result<()> {
        if other.n != self.n || other.bins.len() != self.bins.len() || other.bin_width != self.bin_width {
            return Err(Error::InvalidParameter("frontier tables have different binning".into()));
        }
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.absorb(b);
        }
        self.samples += other.samples;
        self.violations.extend_from_slice(&other.violations);
        self.violations.sort_by_key(|v| (v.seed, v.index));
        self.violations.dedup_by_key(|v| (v.seed, v.index));
        Ok(())
    }
}

/// Target purity of sample `index`: bins are visited round-robin and each bin is
/// filled along a golden-ratio sequence.
fn target_purity(table: &FrontierTable, index: u64) -> f64 {
    let nbins = table.bins.len() as u64;
    let bin = &table.bins[(index % nbins) as usize];
    let frac = (((index / nbins) as f64 + 0.5) * 0.618_033_988_749_894_9).fract();
    // keep clear of the edges so rounding cannot move a sample into a neighbour
    bin.lo + (bin.hi - bin.lo) * (1e-6 + (1.0 - 2e-6) * frac)
}

/// Draws sample `index` of a scan; the same `(config, index)` always gives the same state.
pub fn scan_sample(config: &ScanConfig, index: u64) -> Result<BisepSample> {
    let table = FrontierTable::empty(config.n, config.mode, config.bin_width, config.tolerance)?;
    scan_sample_in(&table, config, index)
}

fn scan_sample_in(table: &FrontierTable, config: &ScanConfig, index: u64) -> Result<BisepSample> {
    let target = target_purity(table, index);
    let mut rng = substream(config.seed, SCAN_STREAM, index);
    let (t, family, visibility) = draw_stratified(config.n, config.mode, target, &mut rng)?;
    Ok(BisepSample {
        n: config.n,
        mode: config.mode,
        seed: config.seed,
        index,
        target_purity: target,
        family,
        visibility,
        purity: purity(&t),
        witness: exact_witness(&t),
    })
}

/// Evaluates `config.samples` stratified samples in parallel.
///
/// Each purity bin receives every `bins`-th sample index, so coverage is even across purities.
pub fn scan_bound(config: &ScanConfig) -> Result<FrontierTable> {
    if config.samples == 0 {
        return Err(Error::InvalidParameter("scan needs at least one sample".into()));
    }
    let empty = FrontierTable::empty(config.n, config.mode, config.bin_width, config.tolerance)?;
    (0..config.samples)
        .into_par_iter()
        .try_fold(
            || empty.clone(),
            |mut table, index| {
                table.record(&scan_sample_in(&empty, config, index)?)?;
                Ok(table)
            },
        )
        .try_reduce(
            || empty.clone(),
            |mut a, b| {
                a.merge(&b)?;
                Ok(a)
            },
        )
}
