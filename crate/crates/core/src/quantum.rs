//! Exact n-qubit state algebra.
//!
//! States are stored canonically as real Pauli correlation tensors
//! `T[mu_1..mu_n] = tr(rho sigma_mu_1 ⊗ ... ⊗ sigma_mu_n)`, with density
//! matrices as the secondary view.
//!
//! Index conventions used throughout the crate:
//! - tensor flat index `sum_i mu_i 4^(n-1-i)` (qubit 1 is the most significant digit),
//! - matrix basis index `sum_i b_i 2^(n-1-i)`,
//! - [`SubsetMask`] bit `i` selects qubit `i + 1`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 6;

/// Hermiticity and trace tolerance.
pub const STATE_TOL: f64 = 1e-10;

/// Smallest eigenvalue still accepted as positive.
pub const POSITIVITY_TOL: f64 = -1e-9;

/// Tensor entries below this magnitude are stored as exact zeros.
const NUMERICAL_ZERO: f64 = 1e-14;

pub(crate) fn check_qubits(n: usize) -> Result<()> {
    if (1..=MAX_QUBITS).contains(&n) {
        Ok(())
    } else {
        Err(Error::QubitCount(n))
    }
}

/// Single-qubit Pauli operator; `I` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Pauli {
        Self::ALL[i & 3]
    }

    pub fn matrix(self) -> [[Complex64; 2]; 2] {
        let o = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        match self {
            Pauli::I => [[one, o], [o, one]],
            Pauli::X => [[o, one], [one, o]],
            Pauli::Y => [[o, -i], [i, o]],
            Pauli::Z => [[one, o], [o, -one]],
        }
    }

    fn label(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    fn from_label(c: char) -> Option<Pauli> {
        match c.to_ascii_uppercase() {
            'I' | '0' => Some(Pauli::I),
            'X' | '1' => Some(Pauli::X),
            'Y' | '2' => Some(Pauli::Y),
            'Z' | '3' => Some(Pauli::Z),
            _ => None,
        }
    }
}

/// Flat tensor index of a Pauli string.
pub fn pauli_index(paulis: &[Pauli]) -> usize {
    paulis.iter().fold(0, |acc, p| acc * 4 + p.index())
}

/// Pauli string of a flat tensor index.
pub fn pauli_string(n: usize, index: usize) -> Vec<Pauli> {
    (0..n)
        .map(|q| Pauli::from_index(index >> (2 * (n - 1 - q))))
        .collect()
}

/// Parses labels like `XXYZ` or `I0Z3`.
pub fn parse_pauli_string(s: &str) -> Option<Vec<Pauli>> {
    s.chars().map(Pauli::from_label).collect()
}

pub fn format_pauli_string(paulis: &[Pauli]) -> String {
    paulis.iter().map(|p| p.label()).collect()
}

/// A set of qubit positions, bit `i` standing for qubit `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetMask(pub u32);

impl SubsetMask {
    pub const EMPTY: SubsetMask = SubsetMask(0);

    pub fn full(n: usize) -> Self {
        SubsetMask((1u32 << n) - 1)
    }

    /// Builds a mask from 1-based qubit labels.
    pub fn from_qubits(qubits: &[usize]) -> Self {
        SubsetMask(qubits.iter().fold(0, |m, &q| m | 1 << (q - 1)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// `q` is 0-based.
    pub fn contains(self, q: usize) -> bool {
        self.0 >> q & 1 == 1
    }

    pub fn is_subset_of(self, other: SubsetMask) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersects(self, other: SubsetMask) -> bool {
        self.0 & other.0 != 0
    }

    pub fn union(self, other: SubsetMask) -> SubsetMask {
        SubsetMask(self.0 | other.0)
    }

    pub fn minus(self, other: SubsetMask) -> SubsetMask {
        SubsetMask(self.0 & !other.0)
    }

    /// 0-based qubit positions in increasing order.
    pub fn qubits(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..32).filter(move |q| bits >> q & 1 == 1)
    }

    pub fn check(self, n: usize) -> Result<()> {
        if self.0 >> n != 0 {
            Err(Error::SubsetRange { mask: self.0, n })
        } else {
            Ok(())
        }
    }

    pub fn check_nonempty(self, n: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptySubset);
        }
        self.check(n)
    }

    /// All nonempty subsets of `n` qubits in increasing bitmask order.
    pub fn all_nonempty(n: usize) -> impl Iterator<Item = SubsetMask> {
        (1u32..1 << n).map(SubsetMask)
    }

    /// All subsets of `self` (including empty and `self`), in increasing order.
    pub fn subsets(self) -> impl Iterator<Item = SubsetMask> {
        let full = self.0;
        let mut next = Some(0u32);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == full {
                None
            } else {
                Some((cur.wrapping_sub(full)) & full)
            };
            Some(SubsetMask(cur))
        })
    }
}

impl fmt::Display for SubsetMask {
    /// 1-based qubit labels, e.g. `134`; `-` for the empty set.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        for q in self.qubits() {
            write!(f, "{}", q + 1)?;
        }
        Ok(())
    }
}

impl FromStr for SubsetMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "-" {
            return Ok(SubsetMask::EMPTY);
        }
        let mut mask = 0u32;
        for c in s.chars() {
            let q = c
                .to_digit(10)
                .filter(|d| (1..=MAX_QUBITS as u32).contains(d))
                .ok_or_else(|| Error::InvalidParameter(format!("bad subset label `{s}`")))?;
            mask |= 1 << (q - 1);
        }
        Ok(SubsetMask(mask))
    }
}

/// Hermitian, positive semi-definite, unit-trace matrix on `2^n` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    matrix: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validates Hermiticity, trace and positivity.
    pub fn new(n: usize, matrix: DMatrix<Complex64>) -> Result<Self> {
        check_qubits(n)?;
        let dim = 1 << n;
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        let herm = (&matrix - matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > STATE_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let trace = matrix.trace().re;
        if (trace - 1.0).abs() > STATE_TOL {
            return Err(Error::Trace(trace));
        }
        let min_eig = min_eigenvalue(&matrix);
        if min_eig < POSITIVITY_TOL {
            return Err(Error::NotPositive(min_eig));
        }
        Ok(Self { n, matrix })
    }

    /// Rank-one projector onto the normalized `amplitudes`.
    pub fn from_pure(n: usize, amplitudes: &[Complex64]) -> Result<Self> {
        check_qubits(n)?;
        let dim = 1 << n;
        if amplitudes.len() != dim {
            return Err(Error::Dimension { expected: dim, found: amplitudes.len() });
        }
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidParameter("zero state vector".into()));
        }
        let matrix = DMatrix::from_fn(dim, dim, |r, c| amplitudes[r] * amplitudes[c].conj() / (norm * norm));
        Ok(Self { n, matrix })
    }

    pub fn maximally_mixed(n: usize) -> Result<Self> {
        check_qubits(n)?;
        let dim = 1 << n;
        let matrix = DMatrix::identity(dim, dim) * Complex64::new(1.0 / dim as f64, 0.0);
        Ok(Self { n, matrix })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// `tr(rho^2)` from the matrix entries.
    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }

    /// Convex combination `sum_j w_j rho_j`; weights must be non-negative and sum to 1.
    pub fn mixture(terms: &[(f64, &DensityMatrix)]) -> Result<Self> {
        let first = terms.first().ok_or_else(|| Error::InvalidParameter("empty mixture".into()))?;
        let n = first.1.n;
        let dim = 1 << n;
        let mut matrix = DMatrix::zeros(dim, dim);
        for (w, rho) in terms {
            if rho.n != n {
                return Err(Error::Dimension { expected: n, found: rho.n });
            }
            matrix += &rho.matrix * Complex64::new(*w, 0.0);
        }
        Self::new(n, matrix)
    }

    /// Reduced state on `keep`, with qubits in increasing order.
    pub fn partial_trace(&self, keep: SubsetMask) -> Result<DensityMatrix> {
        keep.check_nonempty(self.n)?;
        let n = self.n;
        let kept: Vec<usize> = keep.qubits().collect();
        let traced: Vec<usize> = SubsetMask::full(n).minus(keep).qubits().collect();
        let k = kept.len();
        let embed = |sub: usize, positions: &[usize], len: usize| -> usize {
            positions.iter().enumerate().fold(0, |acc, (j, &q)| {
                acc | ((sub >> (len - 1 - j)) & 1) << (n - 1 - q)
            })
        };
        let mut out = DMatrix::zeros(1 << k, 1 << k);
        for r in 0..1usize << k {
            for c in 0..1usize << k {
                let (rb, cb) = (embed(r, &kept, k), embed(c, &kept, k));
                let mut acc = Complex64::new(0.0, 0.0);
                for t in 0..1usize << traced.len() {
                    let tb = embed(t, &traced, traced.len());
                    acc += self.matrix[(rb | tb, cb | tb)];
                }
                out[(r, c)] = acc;
            }
        }
        Ok(DensityMatrix { n: k, matrix: out })
    }

    /// `|<psi|rho|psi>|` for a normalized vector.
    pub fn fidelity_with_pure(&self, amplitudes: &[Complex64]) -> f64 {
        let dim = self.dim();
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..dim {
            for c in 0..dim {
                acc += amplitudes[r].conj() * self.matrix[(r, c)] * amplitudes[c];
            }
        }
        acc.re
    }
}

fn min_eigenvalue(m: &DMatrix<Complex64>) -> f64 {
    m.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Pauli string as a signed permutation: `P|c> = phase(c) |c ^ flip>`.
#[derive(Clone, Copy)]
struct PauliAction {
    flip: usize,
    sign_mask: usize,
    y_count: u32,
}

impl PauliAction {
    fn new(n: usize, index: usize) -> Self {
        let (mut flip, mut sign_mask, mut y_count) = (0, 0, 0);
        for q in 0..n {
            let bit = 1 << (n - 1 - q);
            match Pauli::from_index(index >> (2 * (n - 1 - q))) {
                Pauli::I => {}
                Pauli::X => flip |= bit,
                Pauli::Y => {
                    flip |= bit;
                    sign_mask |= bit;
                    y_count += 1;
                }
                Pauli::Z => sign_mask |= bit,
            }
        }
        Self { flip, sign_mask, y_count }
    }

    fn phase(&self, c: usize) -> Complex64 {
        let base = match self.y_count % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        };
        if (c & self.sign_mask).count_ones() % 2 == 1 {
            -base
        } else {
            base
        }
    }
}

/// Real coefficients of a state in the tensor-product Pauli basis.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTensor {
    n: usize,
    entries: Vec<f64>,
}

impl CorrelationTensor {
    /// Requires the identity entry to be exactly 1. Physicality is not checked here.
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        check_qubits(n)?;
        if entries.len() != 1 << (2 * n) {
            return Err(Error::Dimension { expected: 1 << (2 * n), found: entries.len() });
        }
        if entries[0] != 1.0 {
            return Err(Error::IdentityEntry(entries[0]));
        }
        Ok(Self { n, entries })
    }

    /// Tensor with only the identity entry set: the maximally mixed state.
    pub fn identity(n: usize) -> Result<Self> {
        check_qubits(n)?;
        let mut entries = vec![0.0; 1 << (2 * n)];
        entries[0] = 1.0;
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, paulis: &[Pauli]) -> f64 {
        debug_assert_eq!(paulis.len(), self.n);
        self.entries[pauli_index(paulis)]
    }

    pub fn set(&mut self, paulis: &[Pauli], value: f64) {
        debug_assert_eq!(paulis.len(), self.n);
        let i = pauli_index(paulis);
        if i != 0 {
            self.entries[i] = value;
        }
    }

    /// Qubits carrying a non-identity Pauli at flat index `index`.
    pub fn support(&self, index: usize) -> SubsetMask {
        support_of(self.n, index)
    }

    /// Product tensor for `self` on qubits `a` and `other` on the complement.
    pub fn embed_product(&self, a: SubsetMask, other: &CorrelationTensor) -> Result<CorrelationTensor> {
        let n = self.n + other.n;
        check_qubits(n)?;
        if a.len() != self.n {
            return Err(Error::Dimension { expected: self.n, found: a.len() });
        }
        a.check(n)?;
        let b = SubsetMask::full(n).minus(a);
        let pos_a: Vec<usize> = a.qubits().collect();
        let pos_b: Vec<usize> = b.qubits().collect();
        let mut entries = vec![0.0; 1 << (2 * n)];
        for (ia, &ta) in self.entries.iter().enumerate() {
            if ta == 0.0 {
                continue;
            }
            let base = spread(ia, &pos_a, n);
            for (ib, &tb) in other.entries.iter().enumerate() {
                if tb != 0.0 {
                    entries[base | spread(ib, &pos_b, n)] = ta * tb;
                }
            }
        }
        Ok(CorrelationTensor { n, entries })
    }

    /// `sum_j w_j T_j` for tensors of equal size.
    pub fn mixture(terms: &[(f64, &CorrelationTensor)]) -> Result<CorrelationTensor> {
        let first = terms.first().ok_or_else(|| Error::InvalidParameter("empty mixture".into()))?;
        let n = first.1.n;
        let total: f64 = terms.iter().map(|(w, _)| w).sum();
        let mut entries = vec![0.0; 1 << (2 * n)];
        for (w, t) in terms {
            if t.n != n {
                return Err(Error::Dimension { expected: n, found: t.n });
            }
            for (e, v) in entries.iter_mut().zip(&t.entries) {
                *e += w / total * v;
            }
        }
        entries[0] = 1.0;
        Ok(CorrelationTensor { n, entries })
    }

    /// Mixes with white noise: every non-identity entry is scaled by `visibility`.
    pub fn with_visibility(&self, visibility: f64) -> CorrelationTensor {
        let mut entries: Vec<f64> = self.entries.iter().map(|v| v * visibility).collect();
        entries[0] = 1.0;
        CorrelationTensor { n: self.n, entries }
    }

    /// Applies an SO(3) rotation to each qubit's Bloch indices:
    /// the tensor of `U rho U^dagger` when `rotations[q]` is the rotation of `U_q`.
    pub fn rotate(&self, rotations: &[[[f64; 3]; 3]]) -> Result<CorrelationTensor> {
        if rotations.len() != self.n {
            return Err(Error::Dimension { expected: self.n, found: rotations.len() });
        }
        let n = self.n;
        let mut cur = self.entries.clone();
        for (q, rot) in rotations.iter().enumerate() {
            let stride = 1 << (2 * (n - 1 - q));
            let mut next = cur.clone();
            for base in 0..cur.len() {
                if (base / stride) % 4 != 0 {
                    continue;
                }
                for j in 0..3 {
                    next[base + (j + 1) * stride] =
                        (0..3).map(|k| rot[j][k] * cur[base + (k + 1) * stride]).sum();
                }
            }
            cur = next;
        }
        Ok(CorrelationTensor { n, entries: cur })
    }
}

fn support_of(n: usize, index: usize) -> SubsetMask {
    let mut mask = 0;
    for q in 0..n {
        if (index >> (2 * (n - 1 - q))) & 3 != 0 {
            mask |= 1 << q;
        }
    }
    SubsetMask(mask)
}

/// Places the digits of a `positions.len()`-qubit flat index onto `positions` of an `n`-qubit index.
fn spread(index: usize, positions: &[usize], n: usize) -> usize {
    let k = positions.len();
    positions.iter().enumerate().fold(0, |acc, (j, &q)| {
        acc | ((index >> (2 * (k - 1 - j))) & 3) << (2 * (n - 1 - q))
    })
}

/// All `4^n` entries `tr(rho P_mu)`.
pub fn correlation_tensor(rho: &DensityMatrix) -> CorrelationTensor {
    let n = rho.n;
    let dim = 1usize << n;
    let m = &rho.matrix;
    let entries = (0..1usize << (2 * n))
        .map(|idx| {
            if idx == 0 {
                return 1.0;
            }
            let act = PauliAction::new(n, idx);
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..dim {
                acc += act.phase(c) * m[(c, c ^ act.flip)];
            }
            if acc.re.abs() < NUMERICAL_ZERO {
                0.0
            } else {
                acc.re
            }
        })
        .collect();
    CorrelationTensor { n, entries }
}

/// `rho = 2^-n sum_mu T_mu P_mu`; fails if the result is not positive.
pub fn state_from_tensor(t: &CorrelationTensor) -> Result<DensityMatrix> {
    let n = t.n;
    let dim = 1usize << n;
    let scale = 1.0 / dim as f64;
    let mut matrix = DMatrix::<Complex64>::zeros(dim, dim);
    for (idx, &v) in t.entries.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let act = PauliAction::new(n, idx);
        for c in 0..dim {
            matrix[(c ^ act.flip, c)] += act.phase(c) * (v * scale);
        }
    }
    DensityMatrix::new(n, matrix)
}

/// Tensor of the reduced state on `subset`.
pub fn marginal_tensor(t: &CorrelationTensor, subset: SubsetMask) -> Result<CorrelationTensor> {
    subset.check_nonempty(t.n)?;
    let positions: Vec<usize> = subset.qubits().collect();
    let k = positions.len();
    let entries = (0..1usize << (2 * k))
        .map(|nu| t.entries[spread(nu, &positions, t.n)])
        .collect();
    Ok(CorrelationTensor { n: k, entries })
}

/// `tr(rho^2) = 2^-n sum_mu T_mu^2`.
pub fn purity(t: &CorrelationTensor) -> f64 {
    t.entries.iter().map(|v| v * v).sum::<f64>() / (1u64 << t.n) as f64
}

/// A 2x2 special-unitary matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalUnitary([[Complex64; 2]; 2]);

impl LocalUnitary {
    pub fn new(m: [[Complex64; 2]; 2]) -> Result<Self> {
        let u = LocalUnitary(m);
        let dev = u.unitarity_defect();
        if dev > STATE_TOL {
            return Err(Error::NotUnitary(dev));
        }
        Ok(u)
    }

    pub fn identity() -> Self {
        LocalUnitary(Pauli::I.matrix())
    }

    /// `exp(-i theta/2 n.sigma)`.
    pub fn rotation_about(axis: [f64; 3], theta: f64) -> Self {
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let [x, y, z] = axis.map(|a| a / norm);
        let (s, c) = (theta / 2.0).sin_cos();
        LocalUnitary([
            [Complex64::new(c, -s * z), Complex64::new(-s * y, -s * x)],
            [Complex64::new(s * y, -s * x), Complex64::new(c, s * z)],
        ])
    }

    pub fn matrix(&self) -> &[[Complex64; 2]; 2] {
        &self.0
    }

    pub fn adjoint(&self) -> Self {
        let m = self.0;
        LocalUnitary([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn det(&self) -> Complex64 {
        let m = self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Max-abs deviation of `U^dagger U` from the identity.
    pub fn unitarity_defect(&self) -> f64 {
        let p = mul2(&self.adjoint().0, &self.0);
        let id = Pauli::I.matrix();
        (0..2)
            .flat_map(|r| (0..2).map(move |c| (r, c)))
            .map(|(r, c)| (p[r][c] - id[r][c]).norm())
            .fold(0.0, f64::max)
    }

    /// `U A U^dagger` for a 2x2 matrix `A`.
    pub fn conjugate(&self, a: &[[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
        mul2(&mul2(&self.0, a), &self.adjoint().0)
    }

    /// SO(3) matrix `R` with `U (b.sigma) U^dagger = (R b).sigma`.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let paulis = [Pauli::X.matrix(), Pauli::Y.matrix(), Pauli::Z.matrix()];
        let mut r = [[0.0; 3]; 3];
        for (k, sk) in paulis.iter().enumerate() {
            let conj = self.conjugate(sk);
            for (j, sj) in paulis.iter().enumerate() {
                r[j][k] = 0.5 * trace2(&mul2(sj, &conj)).re;
            }
        }
        r
    }
}

fn mul2(a: &[[Complex64; 2]; 2], b: &[[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

fn trace2(a: &[[Complex64; 2]; 2]) -> Complex64 {
    a[0][0] + a[1][1]
}

/// Haar-distributed element of SU(2), from a uniform point on the 3-sphere.
pub fn haar_local_unitary<R: Rng + ?Sized>(rng: &mut R) -> LocalUnitary {
    let mut q = [0.0f64; 4];
    let norm = loop {
        for v in q.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            break norm;
        }
    };
    let a = Complex64::new(q[0], q[1]) / norm;
    let b = Complex64::new(q[2], q[3]) / norm;
    LocalUnitary([[a, -b.conj()], [b, a.conj()]])
}

/// `(U_1 ⊗ ... ⊗ U_n) rho (U_1 ⊗ ... ⊗ U_n)^dagger`.
pub fn apply_local_unitaries(rho: &DensityMatrix, us: &[LocalUnitary]) -> Result<DensityMatrix> {
    let n = rho.n;
    if us.len() != n {
        return Err(Error::Dimension { expected: n, found: us.len() });
    }
    let dim = 1usize << n;
    let mut m = rho.matrix.clone();
    for (q, u) in us.iter().enumerate() {
        let bit = 1 << (n - 1 - q);
        let u = u.0;
        for lo in (0..dim).filter(|i| i & bit == 0) {
            let hi = lo | bit;
            // rows: U rho
            for c in 0..dim {
                let (a, b) = (m[(lo, c)], m[(hi, c)]);
                m[(lo, c)] = u[0][0] * a + u[0][1] * b;
                m[(hi, c)] = u[1][0] * a + u[1][1] * b;
            }
            // columns: (U rho) U^dagger
            for r in 0..dim {
                let (a, b) = (m[(r, lo)], m[(r, hi)]);
                m[(r, lo)] = a * u[0][0].conj() + b * u[0][1].conj();
                m[(r, hi)] = a * u[1][0].conj() + b * u[1][1].conj();
            }
        }
    }
    Ok(DensityMatrix { n, matrix: m })
}

/// The four-qubit reference states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceState {
    /// Bell pair on qubits 1,2 with qubits 3,4 in |0>.
    Trisep,
    /// Bell pair on 1,2 times `sin(phi)|00> + cos(phi)|11>` on 3,4.
    Bisep { phi: f64 },
    Ghz,
    /// Linear cluster `(|0000> + |0011> - |1100> + |1111>)/2`.
    Cluster,
}

impl ReferenceState {
    pub const QUBITS: usize = 4;

    pub fn amplitudes(&self) -> Vec<Complex64> {
        let mut psi = vec![Complex64::new(0.0, 0.0); 16];
        let mut set = |bits: usize, v: f64| psi[bits] = Complex64::new(v, 0.0);
        match *self {
            ReferenceState::Trisep => {
                set(0b0000, FRAC_1_SQRT_2);
                set(0b1100, FRAC_1_SQRT_2);
            }
            ReferenceState::Bisep { phi } => {
                let (s, c) = phi.sin_cos();
                set(0b0000, FRAC_1_SQRT_2 * s);
                set(0b0011, FRAC_1_SQRT_2 * c);
                set(0b1100, FRAC_1_SQRT_2 * s);
                set(0b1111, FRAC_1_SQRT_2 * c);
            }
            ReferenceState::Ghz => {
                set(0b0000, FRAC_1_SQRT_2);
                set(0b1111, FRAC_1_SQRT_2);
            }
            ReferenceState::Cluster => {
                set(0b0000, 0.5);
                set(0b0011, 0.5);
                set(0b1100, -0.5);
                set(0b1111, 0.5);
            }
        }
        psi
    }
}

impl fmt::Display for ReferenceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceState::Trisep => f.write_str("trisep"),
            ReferenceState::Bisep { phi } => write!(f, "bisep:{phi}"),
            ReferenceState::Ghz => f.write_str("ghz"),
            ReferenceState::Cluster => f.write_str("cluster"),
        }
    }
}

impl FromStr for ReferenceState {
    type Err = Error;

    /// Accepts `trisep`, `bisep:<phi>`, `ghz`, `cluster`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k, Some(p)),
            None => (s, None),
        };
        let state = match (kind.to_ascii_lowercase().as_str(), param) {
            ("trisep", None) => ReferenceState::Trisep,
            ("ghz", None) => ReferenceState::Ghz,
            ("cluster", None) => ReferenceState::Cluster,
            ("bisep", Some(p)) => {
                let phi: f64 = p
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad phi `{p}`")))?;
                if !phi.is_finite() {
                    return Err(Error::InvalidParameter(format!("bad phi `{p}`")));
                }
                ReferenceState::Bisep { phi }
            }
            ("bisep", None) => return Err(Error::InvalidParameter("bisep requires phi".into())),
            _ => return Err(Error::UnknownState(s.to_string())),
        };
        Ok(state)
    }
}

/// Rank-one density matrix of a reference state.
pub fn make_reference_state(kind: ReferenceState) -> DensityMatrix {
    DensityMatrix::from_pure(ReferenceState::QUBITS, &kind.amplitudes())
        .expect("reference amplitudes have the right length")
}
