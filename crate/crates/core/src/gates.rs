//! Gate vocabulary: matrix constructors, analytic parameter derivatives and
//! the parameter-slot bindings that tie gate angles to trainable weights or
//! embedded features.
//!
//! Rotations follow the usual half-angle convention, `RY(t) = exp(-i t Y / 2)`.
//! The three-axis gate uses
//!
//! ```text
//! R3(t, p, l) = [[cos(t/2),          -e^{i l} sin(t/2)     ],
//!                [e^{i p} sin(t/2),   e^{i(p+l)} cos(t/2)   ]]
//! ```
//!
//! which equals `RZ(p) RY(t) RZ(l)` up to a global phase. Two-qubit gates take
//! `[control, target]`; their dense matrices order the local basis with the
//! control as the high bit.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{mat2_mul, Mat2, Unitary2};

#[allow(clippy::upper_case_acronyms)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateKind {
    H,
    X,
    RX,
    RY,
    RZ,
    R3,
    CNOT,
    CRY,
    CRZ,
    /// Controlled Y rotation followed by a controlled Z rotation on the same pair.
    CYZ,
}

impl GateKind {
    pub const ALL: [GateKind; 10] = [
        GateKind::H,
        GateKind::X,
        GateKind::RX,
        GateKind::RY,
        GateKind::RZ,
        GateKind::R3,
        GateKind::CNOT,
        GateKind::CRY,
        GateKind::CRZ,
        GateKind::CYZ,
    ];

    pub fn n_params(self) -> usize {
        match self {
            GateKind::H | GateKind::X | GateKind::CNOT => 0,
            GateKind::RX | GateKind::RY | GateKind::RZ | GateKind::CRY | GateKind::CRZ => 1,
            GateKind::CYZ => 2,
            GateKind::R3 => 3,
        }
    }

    pub fn n_qubits(self) -> usize {
        if self.is_controlled() {
            2
        } else {
            1
        }
    }

    pub fn is_controlled(self) -> bool {
        matches!(self, GateKind::CNOT | GateKind::CRY | GateKind::CRZ | GateKind::CYZ)
    }

    pub fn is_parameterized(self) -> bool {
        self.n_params() > 0
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn cis(phi: f64) -> Complex64 {
    Complex64::from_polar(1.0, phi)
}

fn check_arity(kind: GateKind, params: &[f64]) -> Result<()> {
    if params.len() != kind.n_params() {
        return Err(Error::Arity {
            kind,
            expected: kind.n_params(),
            got: params.len(),
        });
    }
    Ok(())
}

fn raw_target_matrix(kind: GateKind, p: &[f64]) -> Mat2 {
    let z = c(0.0, 0.0);
    match kind {
        GateKind::H => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            [[c(h, 0.0), c(h, 0.0)], [c(h, 0.0), c(-h, 0.0)]]
        }
        GateKind::X | GateKind::CNOT => [[z, c(1.0, 0.0)], [c(1.0, 0.0), z]],
        GateKind::RX => {
            let (s, co) = (p[0] / 2.0).sin_cos();
            [[c(co, 0.0), c(0.0, -s)], [c(0.0, -s), c(co, 0.0)]]
        }
        GateKind::RY | GateKind::CRY => {
            let (s, co) = (p[0] / 2.0).sin_cos();
            [[c(co, 0.0), c(-s, 0.0)], [c(s, 0.0), c(co, 0.0)]]
        }
        GateKind::RZ | GateKind::CRZ => [[cis(-p[0] / 2.0), z], [z, cis(p[0] / 2.0)]],
        GateKind::R3 => {
            let (s, co) = (p[0] / 2.0).sin_cos();
            let (phi, lam) = (p[1], p[2]);
            [
                [c(co, 0.0), -cis(lam) * s],
                [cis(phi) * s, cis(phi + lam) * co],
            ]
        }
        GateKind::CYZ => unreachable!("CYZ has no single target matrix"),
    }
}

fn raw_target_derivative(kind: GateKind, p: &[f64], which: usize) -> Mat2 {
    let z = c(0.0, 0.0);
    match kind {
        GateKind::RX => {
            let (s, co) = (p[0] / 2.0).sin_cos();
            [
                [c(-s / 2.0, 0.0), c(0.0, -co / 2.0)],
                [c(0.0, -co / 2.0), c(-s / 2.0, 0.0)],
            ]
        }
        GateKind::RY | GateKind::CRY => {
            let (s, co) = (p[0] / 2.0).sin_cos();
            [
                [c(-s / 2.0, 0.0), c(-co / 2.0, 0.0)],
                [c(co / 2.0, 0.0), c(-s / 2.0, 0.0)],
            ]
        }
        GateKind::RZ | GateKind::CRZ => [
            [c(0.0, -0.5) * cis(-p[0] / 2.0), z],
            [z, c(0.0, 0.5) * cis(p[0] / 2.0)],
        ],
        GateKind::R3 => {
            let (s, co) = (p[0] / 2.0).sin_cos();
            let (phi, lam) = (p[1], p[2]);
            let i = c(0.0, 1.0);
            match which {
                0 => [
                    [c(-s / 2.0, 0.0), -cis(lam) * (co / 2.0)],
                    [cis(phi) * (co / 2.0), -cis(phi + lam) * (s / 2.0)],
                ],
                1 => [[z, z], [i * cis(phi) * s, i * cis(phi + lam) * co]],
                _ => [[z, -i * cis(lam) * s], [z, i * cis(phi + lam) * co]],
            }
        }
        _ => unreachable!("no derivative for {kind:?}"),
    }
}

/// The 2×2 block a gate applies to its (last) target qubit. For controlled
/// kinds this is the payload applied when the control reads `1`. Not
/// defined for `CYZ`, which is a product of two controlled payloads.
pub fn target_matrix(kind: GateKind, params: &[f64]) -> Result<Unitary2> {
    check_arity(kind, params)?;
    if kind == GateKind::CYZ {
        return Err(Error::InvalidArgument("CYZ has no single payload; use cyz()".into()));
    }
    Unitary2::new(raw_target_matrix(kind, params))
}

/// Derivative of the target payload with respect to parameter `which`.
pub(crate) fn target_derivative(kind: GateKind, params: &[f64], which: usize) -> Mat2 {
    raw_target_derivative(kind, params, which)
}

fn dense_controlled(m: &Mat2, zero_block: bool) -> DMatrix<Complex64> {
    let mut d = DMatrix::zeros(4, 4);
    if !zero_block {
        d[(0, 0)] = c(1.0, 0.0);
        d[(1, 1)] = c(1.0, 0.0);
    }
    for i in 0..2 {
        for j in 0..2 {
            d[(2 + i, 2 + j)] = m[i][j];
        }
    }
    d
}

fn dense_single(m: &Mat2) -> DMatrix<Complex64> {
    DMatrix::from_fn(2, 2, |i, j| m[i][j])
}

/// Full unitary of a gate: 2×2 for single-qubit kinds, 4×4 for controlled ones.
pub fn matrix_of(kind: GateKind, params: &[f64]) -> Result<DMatrix<Complex64>> {
    check_arity(kind, params)?;
    Ok(match kind {
        GateKind::CYZ => {
            let y = raw_target_matrix(GateKind::CRY, &params[..1]);
            let z = raw_target_matrix(GateKind::CRZ, &params[1..]);
            dense_controlled(&mat2_mul(&z, &y), false)
        }
        k if k.is_controlled() => dense_controlled(&raw_target_matrix(k, params), false),
        k => dense_single(&raw_target_matrix(k, params)),
    })
}

/// Entrywise derivative of [`matrix_of`] with respect to parameter `which`.
pub fn param_derivative(kind: GateKind, params: &[f64], which: usize) -> Result<DMatrix<Complex64>> {
    if !kind.is_parameterized() {
        return Err(Error::NotParameterized(kind));
    }
    check_arity(kind, params)?;
    if which >= kind.n_params() {
        return Err(Error::InvalidArgument(format!(
            "{kind:?} has {} parameter(s), asked for index {which}",
            kind.n_params()
        )));
    }
    Ok(match kind {
        GateKind::CYZ => {
            let y = raw_target_matrix(GateKind::CRY, &params[..1]);
            let z = raw_target_matrix(GateKind::CRZ, &params[1..]);
            let block = if which == 0 {
                mat2_mul(&z, &raw_target_derivative(GateKind::CRY, &params[..1], 0))
            } else {
                mat2_mul(&raw_target_derivative(GateKind::CRZ, &params[1..], 0), &y)
            };
            dense_controlled(&block, true)
        }
        k if k.is_controlled() => dense_controlled(&raw_target_derivative(k, params, which), true),
        k => dense_single(&raw_target_derivative(k, params, which)),
    })
}

/// Where a gate angle comes from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParamSlot {
    /// Index into the trainable weight vector.
    Trainable(usize),
    /// Index into the feature vector. Features are unit-interval
    /// coordinates mapped affinely onto `range`.
    Embedded { feature: usize, range: (f64, f64) },
    /// Constant angle in radians.
    Fixed(f64),
}

impl ParamSlot {
    pub fn embedded(feature: usize, range: (f64, f64)) -> Self {
        ParamSlot::Embedded { feature, range }
    }

    /// Resolves the slot to an angle.
    pub fn resolve(&self, theta: &[f64], features: &[f64]) -> Result<f64> {
        match *self {
            ParamSlot::Trainable(j) => theta.get(j).copied().ok_or(Error::Dimension {
                what: "trainable index",
                expected: j + 1,
                got: theta.len(),
            }),
            ParamSlot::Embedded { feature, range } => {
                let x = features.get(feature).copied().ok_or(Error::Dimension {
                    what: "feature index",
                    expected: feature + 1,
                    got: features.len(),
                })?;
                Ok(range.0 + (range.1 - range.0) * x)
            }
            ParamSlot::Fixed(v) => Ok(v),
        }
    }
}

/// A gate instance in a circuit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub params: Vec<ParamSlot>,
}

impl GateOp {
    pub fn new(kind: GateKind, qubits: Vec<usize>, params: Vec<ParamSlot>) -> Result<Self> {
        let op = Self { kind, qubits, params };
        op.validate()?;
        Ok(op)
    }

    pub fn validate(&self) -> Result<()> {
        if self.qubits.len() != self.kind.n_qubits() {
            return Err(Error::QubitArity {
                kind: self.kind,
                expected: self.kind.n_qubits(),
                got: self.qubits.len(),
            });
        }
        if self.params.len() != self.kind.n_params() {
            return Err(Error::Arity {
                kind: self.kind,
                expected: self.kind.n_params(),
                got: self.params.len(),
            });
        }
        if self.qubits.len() == 2 && self.qubits[0] == self.qubits[1] {
            return Err(Error::SameControlTarget(self.qubits[0]));
        }
        Ok(())
    }

    pub fn h(q: usize) -> Self {
        Self { kind: GateKind::H, qubits: vec![q], params: vec![] }
    }

    pub fn x(q: usize) -> Self {
        Self { kind: GateKind::X, qubits: vec![q], params: vec![] }
    }

    pub fn rotation(kind: GateKind, q: usize, slot: ParamSlot) -> Result<Self> {
        Self::new(kind, vec![q], vec![slot])
    }

    pub fn ry(q: usize, slot: ParamSlot) -> Self {
        Self { kind: GateKind::RY, qubits: vec![q], params: vec![slot] }
    }

    pub fn r3(q: usize, slots: [ParamSlot; 3]) -> Self {
        Self { kind: GateKind::R3, qubits: vec![q], params: slots.to_vec() }
    }

    pub fn cnot(control: usize, target: usize) -> Result<Self> {
        Self::new(GateKind::CNOT, vec![control, target], vec![])
    }

    pub fn cry(control: usize, target: usize, slot: ParamSlot) -> Result<Self> {
        Self::new(GateKind::CRY, vec![control, target], vec![slot])
    }

    pub fn crz(control: usize, target: usize, slot: ParamSlot) -> Result<Self> {
        Self::new(GateKind::CRZ, vec![control, target], vec![slot])
    }
}

/// Splits the CYZ composite into its two factors, CRY then CRZ, sharing one
/// control/target pair.
pub fn cyz(control: usize, target: usize, y: ParamSlot, z: ParamSlot) -> Result<[GateOp; 2]> {
    Ok([GateOp::cry(control, target, y)?, GateOp::crz(control, target, z)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn max_dev(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    fn fd(kind: GateKind, params: &[f64], which: usize, h: f64) -> DMatrix<Complex64> {
        let mut plus = params.to_vec();
        let mut minus = params.to_vec();
        plus[which] += h;
        minus[which] -= h;
        (matrix_of(kind, &plus).unwrap() - matrix_of(kind, &minus).unwrap()) / c(2.0 * h, 0.0)
    }

    #[test]
    fn arities() {
        use GateKind::*;
        for (k, p, q) in [
            (H, 0, 1),
            (X, 0, 1),
            (CNOT, 0, 2),
            (RX, 1, 1),
            (RY, 1, 1),
            (RZ, 1, 1),
            (CRY, 1, 2),
            (CRZ, 1, 2),
            (CYZ, 2, 2),
            (R3, 3, 1),
        ] {
            assert_eq!(k.n_params(), p, "{k:?}");
            assert_eq!(k.n_qubits(), q, "{k:?}");
        }
        assert!(matches!(matrix_of(RY, &[]), Err(Error::Arity { .. })));
    }

    #[test]
    fn r3_special_points() {
        let id = matrix_of(GateKind::R3, &[0.0, 0.0, 0.0]).unwrap();
        assert!(max_dev(&id, &DMatrix::identity(2, 2)) < 1e-15);
        let m = matrix_of(GateKind::R3, &[PI, 0.0, 0.0]).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        assert!(max_dev(&m, &expected) < 1e-15);
    }

    #[test]
    fn ry_expectation_oracle() {
        // <0| RY^dagger Z RY |0> by explicit 2x2 algebra.
        for theta in [0.0, PI / 2.0, 1.234] {
            let m = matrix_of(GateKind::RY, &[theta]).unwrap();
            let a0 = m[(0, 0)];
            let a1 = m[(1, 0)];
            let z = a0.norm_sqr() - a1.norm_sqr();
            assert!((z - theta.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_examples() {
        let d = param_derivative(GateKind::RZ, &[0.0], 0).unwrap();
        let fd_rz = fd(GateKind::RZ, &[0.0], 0, 1e-6);
        assert!(max_dev(&d, &fd_rz) < 1e-7);
        let expected = DMatrix::from_row_slice(2, 2, &[c(0.0, -0.5), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.5)]);
        assert!(max_dev(&d, &expected) < 1e-15);

        let d = param_derivative(GateKind::RY, &[0.0], 0).unwrap();
        let fd_ry = fd(GateKind::RY, &[0.0], 0, 1e-6);
        assert!(max_dev(&d, &fd_ry) < 1e-7);
        let expected = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(-0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0)]);
        assert!(max_dev(&d, &expected) < 1e-15);

        assert!(matches!(
            param_derivative(GateKind::H, &[], 0),
            Err(Error::NotParameterized(GateKind::H))
        ));
        assert!(param_derivative(GateKind::RY, &[0.0], 1).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            for kind in GateKind::ALL.into_iter().filter(|k| k.is_parameterized()) {
                let params: Vec<f64> = (0..kind.n_params()).map(|_| rng.random_range(-PI..PI)).collect();
                for which in 0..kind.n_params() {
                    let a = param_derivative(kind, &params, which).unwrap();
                    let b = fd(kind, &params, which, 1e-6);
                    assert!(max_dev(&a, &b) < 1e-7, "{kind:?} slot {which}");
                }
            }
        }
    }

    #[test]
    fn cyz_composite() {
        let [y, z] = cyz(1, 0, ParamSlot::Fixed(0.0), ParamSlot::Fixed(0.0)).unwrap();
        assert_eq!(y.kind, GateKind::CRY);
        assert_eq!(z.kind, GateKind::CRZ);
        let zero = matrix_of(GateKind::CYZ, &[0.0, 0.0]).unwrap();
        assert!(max_dev(&zero, &DMatrix::identity(4, 4)) < 1e-15);
        let a = matrix_of(GateKind::CYZ, &[PI, 0.0]).unwrap();
        let b = matrix_of(GateKind::CRY, &[PI]).unwrap();
        assert!(max_dev(&a, &b) < 1e-15);
        // Composite equals the explicit product CRZ * CRY.
        let (ty, tz) = (0.7, -1.9);
        let prod = matrix_of(GateKind::CRZ, &[tz]).unwrap() * matrix_of(GateKind::CRY, &[ty]).unwrap();
        assert!(max_dev(&matrix_of(GateKind::CYZ, &[ty, tz]).unwrap(), &prod) < 1e-12);
    }

    #[test]
    fn hadamard_is_involution() {
        let h = matrix_of(GateKind::H, &[]).unwrap();
        assert!(max_dev(&(&h * &h), &DMatrix::identity(2, 2)) < 1e-12);
    }

    #[test]
    fn gate_op_validation() {
        assert!(matches!(GateOp::cnot(2, 2), Err(Error::SameControlTarget(2))));
        assert!(GateOp::new(GateKind::RY, vec![0, 1], vec![ParamSlot::Fixed(0.0)]).is_err());
        assert!(GateOp::new(GateKind::R3, vec![0], vec![ParamSlot::Fixed(0.0)]).is_err());
    }

    #[test]
    fn embedded_slot_maps_unit_interval() {
        let slot = ParamSlot::embedded(1, (0.0, PI));
        assert_eq!(slot.resolve(&[], &[0.0, 0.5]).unwrap(), PI / 2.0);
        assert!(slot.resolve(&[], &[0.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn constructed_matrices_are_unitary(a in -10.0f64..10.0, b in -10.0f64..10.0, d in -10.0f64..10.0) {
            let pool = [a, b, d];
            for kind in GateKind::ALL {
                let m = matrix_of(kind, &pool[..kind.n_params()]).unwrap();
                let n = m.nrows();
                let defect = max_dev(&(m.adjoint() * &m), &DMatrix::identity(n, n));
                prop_assert!(defect < 1e-12, "{:?}: {}", kind, defect);
            }
        }

        #[test]
        fn r3_reduces_to_ry(theta in -10.0f64..10.0) {
            let r3 = matrix_of(GateKind::R3, &[theta, 0.0, 0.0]).unwrap();
            let ry = matrix_of(GateKind::RY, &[theta]).unwrap();
            prop_assert!(max_dev(&r3, &ry) < 1e-12);
        }
    }
}
