//! Pure and mixed state representations with in-place gate kernels.
//!
//! Basis-state indices use qubit 0 as the least significant bit, so the
//! amplitude of `|q_{n-1} ... q_1 q_0>` lives at index `sum q_k 2^k`.
//! Density matrices are stored row-major; viewed as a flat vector of
//! `2^(2n)` entries the column index occupies the low `n` bits and the row
//! index the high `n` bits, which lets one strided kernel serve both
//! representations.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest register the dense kernels accept.
pub const MAX_QUBITS: usize = 24;

/// Tolerance for unitarity checks on gate construction.
pub const UNITARY_TOL: f64 = 1e-10;

/// Row-major 2×2 complex matrix.
pub type Mat2 = [[Complex64; 2]; 2];

/// Bitstring (most significant qubit first) to count.
pub type Histogram = BTreeMap<String, u64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn mat2_identity() -> Mat2 {
    [[ONE, ZERO], [ZERO, ONE]]
}

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn mat2_dagger(a: &Mat2) -> Mat2 {
    [
        [a[0][0].conj(), a[1][0].conj()],
        [a[0][1].conj(), a[1][1].conj()],
    ]
}

pub fn mat2_conj(a: &Mat2) -> Mat2 {
    [
        [a[0][0].conj(), a[0][1].conj()],
        [a[1][0].conj(), a[1][1].conj()],
    ]
}

/// `max |(U^dagger U - I)_ij|`.
pub fn unitarity_defect(m: &Mat2) -> f64 {
    let p = mat2_mul(&mat2_dagger(m), m);
    let id = mat2_identity();
    let mut worst = 0.0_f64;
    for i in 0..2 {
        for j in 0..2 {
            worst = worst.max((p[i][j] - id[i][j]).norm());
        }
    }
    worst
}

/// A 2×2 matrix validated as unitary when it was built.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Unitary2(Mat2);

impl Unitary2 {
    pub fn new(m: Mat2) -> Result<Self> {
        let defect = unitarity_defect(&m);
        if !defect.is_finite() || defect >= UNITARY_TOL {
            return Err(Error::NonUnitary(defect));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(mat2_identity())
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    pub fn dagger(&self) -> Self {
        Self(mat2_dagger(&self.0))
    }
}

/// Applies `m` to the two-level factor at `bit` of a flat amplitude buffer.
fn kernel_1q(buf: &mut [Complex64], m: &Mat2, bit: usize) {
    let stride = 1usize << bit;
    let [[a, b], [c, d]] = *m;
    for block in buf.chunks_exact_mut(stride << 1) {
        let (lo, hi) = block.split_at_mut(stride);
        for (x0, x1) in lo.iter_mut().zip(hi.iter_mut()) {
            let v0 = *x0;
            let v1 = *x1;
            *x0 = a * v0 + b * v1;
            *x1 = c * v0 + d * v1;
        }
    }
}

/// Applies `m` to the `target` factor of every index whose `control` bit is
/// set. With `project` the amplitudes whose control bit is clear are zeroed,
/// which realises `|1><1| (x) m` for derivative generators.
fn kernel_controlled(buf: &mut [Complex64], m: &Mat2, control: usize, target: usize, project: bool) {
    let cmask = 1usize << control;
    let tmask = 1usize << target;
    let [[a, b], [c, d]] = *m;
    for i in 0..buf.len() {
        if i & tmask != 0 {
            continue;
        }
        let j = i | tmask;
        if i & cmask == 0 {
            if project {
                buf[i] = ZERO;
                buf[j] = ZERO;
            }
            continue;
        }
        let v0 = buf[i];
        let v1 = buf[j];
        buf[i] = a * v0 + b * v1;
        buf[j] = c * v0 + d * v1;
    }
}

fn check_qubit(q: usize, n: usize) -> Result<()> {
    if q >= n {
        return Err(Error::QubitOutOfRange { index: q, n_qubits: n });
    }
    Ok(())
}

fn check_distinct(qubits: &[usize], n: usize) -> Result<usize> {
    let mut mask = 0usize;
    for &q in qubits {
        check_qubit(q, n)?;
        if mask & (1 << q) != 0 {
            return Err(Error::DuplicateQubit(q));
        }
        mask |= 1 << q;
    }
    Ok(mask)
}

#[inline]
fn parity_sign(index: usize, mask: usize) -> f64 {
    if (index & mask).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Dense pure state over `n_qubits` qubits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0...0>` on `n` qubits.
    pub fn zero(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::QubitCount(n));
        }
        let mut amplitudes = vec![ZERO; 1 << n];
        amplitudes[0] = ONE;
        Ok(Self { n_qubits: n, amplitudes })
    }

    /// Wraps a normalised amplitude vector whose length is a power of two.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::InvalidState(format!("length {len} is not 2^n, n >= 1")));
        }
        let n = len.trailing_zeros() as usize;
        if n > MAX_QUBITS {
            return Err(Error::QubitCount(n));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!("squared norm {norm}")));
        }
        Ok(Self { n_qubits: n, amplitudes })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn apply_1q(&mut self, u: &Unitary2, q: usize) -> Result<()> {
        check_qubit(q, self.n_qubits)?;
        kernel_1q(&mut self.amplitudes, u.matrix(), q);
        Ok(())
    }

    pub fn apply_controlled(&mut self, u: &Unitary2, control: usize, target: usize) -> Result<()> {
        check_qubit(control, self.n_qubits)?;
        check_qubit(target, self.n_qubits)?;
        if control == target {
            return Err(Error::SameControlTarget(control));
        }
        kernel_controlled(&mut self.amplitudes, u.matrix(), control, target, false);
        Ok(())
    }

    /// Unchecked application of an arbitrary 2×2 matrix; used for
    /// derivative generators, which are not unitary.
    pub(crate) fn apply_matrix(&mut self, m: &Mat2, q: usize) {
        kernel_1q(&mut self.amplitudes, m, q);
    }

    pub(crate) fn apply_controlled_matrix(&mut self, m: &Mat2, control: usize, target: usize, project: bool) {
        kernel_controlled(&mut self.amplitudes, m, control, target, project);
    }

    /// Multiplies every amplitude by a real diagonal operator.
    pub(crate) fn scale_diagonal(&mut self, diag: &[f64]) {
        for (a, d) in self.amplitudes.iter_mut().zip(diag) {
            *a *= *d;
        }
    }

    /// Expectation of the tensor product of Pauli-Z on `qubits`.
    pub fn expectation_z(&self, qubits: &[usize]) -> Result<f64> {
        if qubits.is_empty() {
            return Err(Error::InvalidArgument("empty Z-string".into()));
        }
        let mask = check_distinct(qubits, self.n_qubits)?;
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| parity_sign(i, mask) * a.norm_sqr())
            .sum())
    }

    /// Born probability of reading `1` on qubit `q`.
    pub fn probability_one(&self, q: usize) -> Result<f64> {
        check_qubit(q, self.n_qubits)?;
        let mask = 1usize << q;
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Draws `shots` computational-basis outcomes with a seeded ChaCha8 stream.
    pub fn sample_bitstrings(&self, shots: u64, seed: u64) -> Result<Histogram> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(shots, &mut rng)
    }

    pub(crate) fn sample_with(&self, shots: u64, rng: &mut ChaCha8Rng) -> Result<Histogram> {
        if shots == 0 {
            return Err(Error::InvalidArgument("shots must be at least 1".into()));
        }
        let probs = self.probabilities();
        let dist = WeightedIndex::new(&probs)
            .map_err(|e| Error::InvalidState(format!("cannot sample: {e}")))?;
        let mut counts = vec![0u64; probs.len()];
        for _ in 0..shots {
            counts[dist.sample(rng)] += 1;
        }
        Ok(counts
            .into_iter()
            .enumerate()
            .filter(|(_, c)| *c > 0)
            .map(|(i, c)| (bitstring(i, self.n_qubits), c))
            .collect())
    }
}

/// Formats a basis index as a bitstring with qubit `n-1` leftmost.
pub fn bitstring(index: usize, n_qubits: usize) -> String {
    (0..n_qubits)
        .rev()
        .map(|q| if index >> q & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// Parses a bitstring written by [`bitstring`].
pub fn parse_bitstring(bits: &str) -> Result<usize> {
    usize::from_str_radix(bits, 2).map_err(|e| Error::Parse(format!("bitstring {bits:?}: {e}")))
}

/// Expectation of a Z-string estimated from sampled counts.
pub fn histogram_expectation_z(hist: &Histogram, qubits: &[usize]) -> Result<f64> {
    let mask = qubits.iter().fold(0usize, |m, q| m | 1 << q);
    let mut total = 0u64;
    let mut acc = 0.0;
    for (bits, &count) in hist {
        let index = parse_bitstring(bits)?;
        acc += parity_sign(index, mask) * count as f64;
        total += count;
    }
    if total == 0 {
        return Err(Error::InvalidArgument("empty histogram".into()));
    }
    Ok(acc / total as f64)
}

/// Dense mixed state over `n_qubits` qubits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix {
    n_qubits: usize,
    entries: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn zero(n: usize) -> Result<Self> {
        // The flat buffer doubles the exponent.
        if n == 0 || 2 * n > MAX_QUBITS {
            return Err(Error::QubitCount(n));
        }
        let mut entries = vec![ZERO; 1 << (2 * n)];
        entries[0] = ONE;
        Ok(Self { n_qubits: n, entries })
    }

    /// `|psi><psi|`.
    pub fn from_pure(state: &StateVector) -> Result<Self> {
        let n = state.n_qubits();
        if 2 * n > MAX_QUBITS {
            return Err(Error::QubitCount(n));
        }
        let a = state.amplitudes();
        let dim = a.len();
        let mut entries = vec![ZERO; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                entries[i * dim + j] = a[i] * a[j].conj();
            }
        }
        Ok(Self { n_qubits: n, entries })
    }

    /// Builds from a row-major `2^n × 2^n` matrix; validates trace,
    /// Hermiticity and positivity.
    pub fn from_entries(n: usize, entries: Vec<Complex64>) -> Result<Self> {
        if n == 0 || 2 * n > MAX_QUBITS {
            return Err(Error::QubitCount(n));
        }
        if entries.len() != 1 << (2 * n) {
            return Err(Error::Dimension {
                what: "density matrix entries",
                expected: 1 << (2 * n),
                got: entries.len(),
            });
        }
        let rho = Self { n_qubits: n, entries };
        if (rho.trace().re - 1.0).abs() > 1e-10 || rho.trace().im.abs() > 1e-10 {
            return Err(Error::InvalidState(format!("trace {}", rho.trace())));
        }
        if rho.hermiticity_defect() > 1e-10 {
            return Err(Error::InvalidState("not Hermitian".into()));
        }
        if rho.min_eigenvalue() < -1e-9 {
            return Err(Error::InvalidState("not positive semidefinite".into()));
        }
        Ok(rho)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim() + col]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim()).map(|i| self.entry(i, i)).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.entry(i, j) - self.entry(j, i).conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim();
        let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (self.entry(i, j) + self.entry(j, i).conj()));
        m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `rho -> U rho U^dagger` on qubit `q`.
    pub fn apply_1q(&mut self, u: &Unitary2, q: usize) -> Result<()> {
        check_qubit(q, self.n_qubits)?;
        self.conjugate_1q(u.matrix(), q);
        Ok(())
    }

    pub fn apply_controlled(&mut self, u: &Unitary2, control: usize, target: usize) -> Result<()> {
        check_qubit(control, self.n_qubits)?;
        check_qubit(target, self.n_qubits)?;
        if control == target {
            return Err(Error::SameControlTarget(control));
        }
        self.conjugate_controlled(u.matrix(), control, target);
        Ok(())
    }

    pub(crate) fn conjugate_1q(&mut self, m: &Mat2, q: usize) {
        let n = self.n_qubits;
        kernel_1q(&mut self.entries, m, n + q);
        kernel_1q(&mut self.entries, &mat2_conj(m), q);
    }

    pub(crate) fn conjugate_controlled(&mut self, m: &Mat2, control: usize, target: usize) {
        let n = self.n_qubits;
        kernel_controlled(&mut self.entries, m, n + control, n + target, false);
        kernel_controlled(&mut self.entries, &mat2_conj(m), control, target, false);
    }

    /// Visits every 2×2 block of qubit `q`, passing the flat indices of
    /// `(r0,c0), (r0,c1), (r1,c0), (r1,c1)`.
    fn for_each_block(&mut self, q: usize, mut f: impl FnMut(&mut [Complex64], [usize; 4])) {
        let n = self.n_qubits;
        let col = 1usize << q;
        let row = 1usize << (n + q);
        for i in 0..self.entries.len() {
            if i & (row | col) != 0 {
                continue;
            }
            f(&mut self.entries, [i, i | col, i | row, i | row | col]);
        }
    }

    /// `rho -> (1-p) rho + p (I/2 (x) Tr_q rho)`.
    pub fn depolarize(&mut self, q: usize, p: f64) -> Result<()> {
        check_qubit(q, self.n_qubits)?;
        check_probability(p)?;
        self.for_each_block(q, |e, [e00, e01, e10, e11]| {
            let half_trace = 0.5 * (e[e00] + e[e11]);
            e[e00] = (1.0 - p) * e[e00] + p * half_trace;
            e[e11] = (1.0 - p) * e[e11] + p * half_trace;
            e[e01] *= 1.0 - p;
            e[e10] *= 1.0 - p;
        });
        Ok(())
    }

    /// `rho -> (1-p) rho + p X rho X`.
    pub fn bit_flip(&mut self, q: usize, p: f64) -> Result<()> {
        check_qubit(q, self.n_qubits)?;
        check_probability(p)?;
        self.for_each_block(q, |e, [e00, e01, e10, e11]| {
            let (a, b, c, d) = (e[e00], e[e01], e[e10], e[e11]);
            e[e00] = (1.0 - p) * a + p * d;
            e[e11] = (1.0 - p) * d + p * a;
            e[e01] = (1.0 - p) * b + p * c;
            e[e10] = (1.0 - p) * c + p * b;
        });
        Ok(())
    }

    /// `rho -> (1-p) rho + p Z rho Z`.
    pub fn phase_flip(&mut self, q: usize, p: f64) -> Result<()> {
        check_qubit(q, self.n_qubits)?;
        check_probability(p)?;
        self.for_each_block(q, |e, [_, e01, e10, _]| {
            e[e01] *= 1.0 - 2.0 * p;
            e[e10] *= 1.0 - 2.0 * p;
        });
        Ok(())
    }

    pub fn expectation_z(&self, qubits: &[usize]) -> Result<f64> {
        if qubits.is_empty() {
            return Err(Error::InvalidArgument("empty Z-string".into()));
        }
        let mask = check_distinct(qubits, self.n_qubits)?;
        Ok((0..self.dim())
            .map(|i| parity_sign(i, mask) * self.entry(i, i).re)
            .sum())
    }

    /// Born probability of reading `1` on qubit `q` from the diagonal.
    pub fn probability_one(&self, q: usize) -> Result<f64> {
        check_qubit(q, self.n_qubits)?;
        Ok((0..self.dim())
            .filter(|i| i >> q & 1 == 1)
            .map(|i| self.entry(i, i).re)
            .sum())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entry(i, i).re.max(0.0)).collect()
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidNoise(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn hadamard() -> Unitary2 {
        let h = FRAC_1_SQRT_2;
        Unitary2::new([[c(h, 0.0), c(h, 0.0)], [c(h, 0.0), c(-h, 0.0)]]).unwrap()
    }

    fn pauli_x() -> Unitary2 {
        Unitary2::new([[ZERO, ONE], [ONE, ZERO]]).unwrap()
    }

    fn ry(theta: f64) -> Unitary2 {
        let (s, co) = (theta / 2.0).sin_cos();
        Unitary2::new([[c(co, 0.0), c(-s, 0.0)], [c(s, 0.0), c(co, 0.0)]]).unwrap()
    }

    #[test]
    fn zero_state_layout() {
        assert_eq!(StateVector::zero(1).unwrap().amplitudes(), &[ONE, ZERO]);
        assert_eq!(StateVector::zero(2).unwrap().amplitudes(), &[ONE, ZERO, ZERO, ZERO]);
        assert!((StateVector::zero(3).unwrap().norm_sqr() - 1.0).abs() < 1e-15);
        assert!(matches!(StateVector::zero(0), Err(Error::QubitCount(0))));
        assert!(StateVector::zero(MAX_QUBITS + 1).is_err());
    }

    #[test]
    fn single_qubit_gates() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_1q(&hadamard(), 0).unwrap();
        for a in s.amplitudes() {
            assert!((a - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        }
        let before = s.clone();
        s.apply_1q(&Unitary2::identity(), 0).unwrap();
        assert_eq!(s, before);

        let mut s = StateVector::zero(2).unwrap();
        s.apply_1q(&pauli_x(), 0).unwrap();
        // |01> in qubit-1-first notation is basis index 1.
        assert_eq!(s.amplitudes()[1], ONE);
        assert!(s.apply_1q(&pauli_x(), 2).is_err());
    }

    #[test]
    fn non_unitary_rejected() {
        assert!(matches!(
            Unitary2::new([[ONE, ONE], [ZERO, ONE]]),
            Err(Error::NonUnitary(_))
        ));
    }

    #[test]
    fn controlled_gates() {
        // |10>: qubit 1 set, index 2.
        let mut s = StateVector::zero(2).unwrap();
        s.apply_1q(&pauli_x(), 1).unwrap();
        s.apply_controlled(&pauli_x(), 1, 0).unwrap();
        assert_eq!(s.amplitudes()[3], ONE);

        let mut s = StateVector::zero(2).unwrap();
        s.apply_controlled(&pauli_x(), 1, 0).unwrap();
        assert_eq!(s.amplitudes()[0], ONE);

        assert!(matches!(
            s.apply_controlled(&pauli_x(), 1, 1),
            Err(Error::SameControlTarget(1))
        ));
    }

    #[test]
    fn controlled_ry_pi_matches_dense_product() {
        // Oracle: explicit 4x4 CRY(pi) with control = qubit 1 (high bit).
        let u = ry(PI);
        let m = u.matrix();
        let mut dense = [[ZERO; 4]; 4];
        dense[0][0] = ONE;
        dense[1][1] = ONE;
        dense[2][2] = m[0][0];
        dense[2][3] = m[0][1];
        dense[3][2] = m[1][0];
        dense[3][3] = m[1][1];
        let input = [ZERO, ZERO, ONE, ZERO];
        let expected: Vec<Complex64> = (0..4)
            .map(|i| (0..4).map(|k| dense[i][k] * input[k]).sum())
            .collect();

        let mut s = StateVector::from_amplitudes(input.to_vec()).unwrap();
        s.apply_controlled(&u, 1, 0).unwrap();
        for (a, b) in s.amplitudes().iter().zip(&expected) {
            assert!((a - b).norm() < 1e-12);
        }
        // |1> (x) RY(pi)|0> = |11>.
        assert!((s.amplitudes()[3] - ONE).norm() < 1e-12);
    }

    #[test]
    fn expectation_values() {
        let s = StateVector::zero(1).unwrap();
        assert_eq!(s.expectation_z(&[0]).unwrap(), 1.0);
        let mut s = StateVector::zero(1).unwrap();
        s.apply_1q(&hadamard(), 0).unwrap();
        assert!(s.expectation_z(&[0]).unwrap().abs() < 1e-12);
        let mut s = StateVector::zero(1).unwrap();
        s.apply_1q(&ry(PI / 3.0), 0).unwrap();
        // cos(pi/3) from [[c,-s],[s,c]] acting on |0>: c^2 - s^2.
        let (sn, cs) = (PI / 6.0).sin_cos();
        let oracle = cs * cs - sn * sn;
        assert!((s.expectation_z(&[0]).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 0.5).abs() < 1e-12);

        let s = StateVector::zero(2).unwrap();
        assert!(matches!(s.expectation_z(&[1, 1]), Err(Error::DuplicateQubit(1))));
    }

    #[test]
    fn sampling() {
        let s = StateVector::zero(1).unwrap();
        let h = s.sample_bitstrings(100, 3).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h["0"], 100);

        let mut s = StateVector::zero(1).unwrap();
        s.apply_1q(&hadamard(), 0).unwrap();
        let shots = 1_000_000;
        let h = s.sample_bitstrings(shots, 11).unwrap();
        assert_eq!(h.values().sum::<u64>(), shots);
        // Binomial sd at p=1/2 is 5e-4; 0.005 is ten sigma.
        for key in ["0", "1"] {
            let f = h[key] as f64 / shots as f64;
            assert!((f - 0.5).abs() < 0.005, "{key}: {f}");
        }
        assert_eq!(h, s.sample_bitstrings(shots, 11).unwrap());
        assert!(s.sample_bitstrings(0, 1).is_err());
    }

    #[test]
    fn bitstrings_are_msb_first() {
        assert_eq!(bitstring(1, 3), "001");
        assert_eq!(bitstring(6, 3), "110");
        assert_eq!(parse_bitstring("110").unwrap(), 6);
    }

    #[test]
    fn density_matrix_unitaries() {
        let mut rho = DensityMatrix::zero(1).unwrap();
        rho.apply_1q(&hadamard(), 0).unwrap();
        for e in rho.entries() {
            assert!((e - c(0.5, 0.0)).norm() < 1e-15);
        }
        let before = rho.clone();
        rho.apply_1q(&Unitary2::identity(), 0).unwrap();
        assert_eq!(rho, before);

        let mut rho =
            DensityMatrix::from_entries(1, vec![c(0.75, 0.0), ZERO, ZERO, c(0.25, 0.0)]).unwrap();
        rho.apply_1q(&pauli_x(), 0).unwrap();
        assert!((rho.entry(0, 0).re - 0.25).abs() < 1e-15);
        assert!((rho.entry(1, 1).re - 0.75).abs() < 1e-15);
    }

    #[test]
    fn channels_on_basis_states() {
        let mut rho = DensityMatrix::zero(1).unwrap();
        rho.bit_flip(0, 0.25).unwrap();
        assert!((rho.entry(0, 0).re - 0.75).abs() < 1e-15);
        assert!((rho.entry(1, 1).re - 0.25).abs() < 1e-15);

        let mut rho = DensityMatrix::zero(1).unwrap();
        rho.apply_1q(&ry(1.1), 0).unwrap();
        rho.depolarize(0, 1.0).unwrap();
        assert!((rho.entry(0, 0).re - 0.5).abs() < 1e-15);
        assert!((rho.entry(1, 1).re - 0.5).abs() < 1e-15);
        assert!(rho.entry(0, 1).norm() < 1e-15);

        let mut rho =
            DensityMatrix::from_entries(1, vec![c(0.6, 0.0), ZERO, ZERO, c(0.4, 0.0)]).unwrap();
        let before = rho.clone();
        rho.phase_flip(0, 0.37).unwrap();
        assert_eq!(rho, before);
        assert!(rho.phase_flip(0, 1.5).is_err());
    }

    #[test]
    fn channels_act_on_the_addressed_qubit_only() {
        // Bit flip on qubit 1 of |00><00| moves weight to index 2.
        let mut rho = DensityMatrix::zero(2).unwrap();
        rho.bit_flip(1, 0.3).unwrap();
        assert!((rho.entry(0, 0).re - 0.7).abs() < 1e-15);
        assert!((rho.entry(2, 2).re - 0.3).abs() < 1e-15);
        assert!(rho.entry(1, 1).norm() < 1e-15);
    }
}
