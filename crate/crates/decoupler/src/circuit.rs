//! Parameterized circuit IR.
//!
//! Circuits are flat gate lists over a register of at most
//! [`MAX_QUBITS`](crate::statekit::MAX_QUBITS) qubits. Rotations follow the
//! convention `R(theta) = exp(-i theta sigma / 2)`, and every parameter index
//! feeds at most one gate; the four-term shift rule for the doubled register
//! depends on both facts. Daggered parameterized rotations are represented by
//! a `negated` flag rather than a bound angle, so circuits like
//! `V1^dag U V0^dag` stay differentiable in the original angles.
//!
//! Serialization: a circuit is JSON `{num_qubits, num_params, gates}` where
//! each gate is `{kind, targets, axis?, param_index?, negated?, matrix?}` and
//! matrices are row-major lists of `[re, im]` pairs.

use ndarray::Array2;
use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::statekit::{bit_pos, C64, DensityOperator, PureState, UnitaryMatrix, MAX_QUBITS};

/// Rotation axis of a parameterized Pauli rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        }
    }
}

/// A vector of rotation angles feeding a circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector {
    angles: Vec<f64>,
}

impl ParamVector {
    pub fn new(angles: Vec<f64>) -> Self {
        Self { angles }
    }

    pub fn zeros(len: usize) -> Self {
        Self { angles: vec![0.0; len] }
    }

    /// Uniform angles on `[-pi, pi)`, one per parameter.
    pub fn random_uniform<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let angles = (0..len)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * std::f64::consts::PI)
            .collect();
        Self { angles }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn angles_mut(&mut self) -> &mut [f64] {
        &mut self.angles
    }

    /// Copy with `angles[index] += delta`.
    pub fn shifted(&self, index: usize, delta: f64) -> Self {
        let mut out = self.clone();
        out.angles[index] += delta;
        out
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut angles = self.angles.clone();
        angles.extend_from_slice(&other.angles);
        Self { angles }
    }
}

/// Gate payloads. `ConstantUnitary` embeds an arbitrary fixed unitary on the
/// listed targets; `PauliRotation` reads its angle from a parameter vector,
/// with `negated` flipping the sign (the daggered rotation).
#[derive(Debug, Clone, PartialEq)]
pub enum GateKind {
    H,
    X,
    Z,
    Cnot,
    Swap,
    ConstantUnitary(UnitaryMatrix),
    PauliRotation { axis: Axis, param_index: usize, negated: bool },
}

/// A gate applied to an ordered list of targets. For `Cnot` the targets are
/// `[control, target]`; for `ConstantUnitary` the first target is the most
/// significant qubit of the embedded matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GateOp {
    pub kind: GateKind,
    pub targets: Vec<usize>,
}

impl GateOp {
    pub fn h(q: usize) -> Self {
        Self { kind: GateKind::H, targets: vec![q] }
    }

    pub fn x(q: usize) -> Self {
        Self { kind: GateKind::X, targets: vec![q] }
    }

    pub fn z(q: usize) -> Self {
        Self { kind: GateKind::Z, targets: vec![q] }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self { kind: GateKind::Cnot, targets: vec![control, target] }
    }

    pub fn swap(a: usize, b: usize) -> Self {
        Self { kind: GateKind::Swap, targets: vec![a, b] }
    }

    pub fn unitary(u: UnitaryMatrix, targets: Vec<usize>) -> Self {
        Self { kind: GateKind::ConstantUnitary(u), targets }
    }

    pub fn rotation(axis: Axis, qubit: usize, param_index: usize) -> Self {
        Self {
            kind: GateKind::PauliRotation { axis, param_index, negated: false },
            targets: vec![qubit],
        }
    }

    fn arity(&self) -> Option<usize> {
        match &self.kind {
            GateKind::H | GateKind::X | GateKind::Z | GateKind::PauliRotation { .. } => Some(1),
            GateKind::Cnot | GateKind::Swap => Some(2),
            GateKind::ConstantUnitary(u) => Some(u.num_qubits()),
        }
    }
}

/// A parameterized circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    num_qubits: usize,
    num_params: usize,
    gates: Vec<GateOp>,
}

impl Circuit {
    /// An empty circuit (the identity) with no parameters.
    pub fn empty(num_qubits: usize) -> Result<Self> {
        Self::from_gates(num_qubits, 0, Vec::new())
    }

    /// Validates targets, arities, and the one-gate-per-parameter rule.
    pub fn from_gates(num_qubits: usize, num_params: usize, gates: Vec<GateOp>) -> Result<Self> {
        if num_qubits == 0 || num_qubits > MAX_QUBITS {
            return Err(Error::InvalidArgument(format!(
                "circuit register must have between 1 and {MAX_QUBITS} qubits, got {num_qubits}",
            )));
        }
        let mut param_seen = vec![false; num_params];
        for (i, gate) in gates.iter().enumerate() {
            let arity = gate.arity().expect("every kind has an arity");
            if gate.targets.len() != arity {
                return Err(Error::InvalidArgument(format!(
                    "gate {i} expects {arity} targets, got {}",
                    gate.targets.len()
                )));
            }
            for &t in &gate.targets {
                if t >= num_qubits {
                    return Err(Error::InvalidIndex(format!(
                        "gate {i} targets qubit {t} outside a {num_qubits} qubit register",
                    )));
                }
            }
            for (a, &t) in gate.targets.iter().enumerate() {
                if gate.targets[..a].contains(&t) {
                    return Err(Error::InvalidArgument(format!(
                        "gate {i} repeats target qubit {t}",
                    )));
                }
            }
            if let GateKind::PauliRotation { param_index, .. } = gate.kind {
                if param_index >= num_params {
                    return Err(Error::InvalidIndex(format!(
                        "gate {i} reads parameter {param_index} but the circuit has {num_params}",
                    )));
                }
                if param_seen[param_index] {
                    return Err(Error::InvalidArgument(format!(
                        "parameter {param_index} feeds more than one gate",
                    )));
                }
                param_seen[param_index] = true;
            }
        }
        Ok(Self { num_qubits, num_params, gates })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn gates(&self) -> &[GateOp] {
        &self.gates
    }

    pub fn dim(&self) -> usize {
        1 << self.num_qubits
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.num_params {
            return Err(Error::DimensionMismatch(format!(
                "circuit has {} parameters, got {}",
                self.num_params,
                params.len()
            )));
        }
        Ok(())
    }

    /// Applies the circuit to a pure state.
    pub fn apply(&self, params: &ParamVector, state: &PureState) -> Result<PureState> {
        self.check_params(params)?;
        if state.num_qubits() != self.num_qubits {
            return Err(Error::DimensionMismatch(format!(
                "applying a {} qubit circuit to a {} qubit state",
                self.num_qubits,
                state.num_qubits()
            )));
        }
        let mut out = state.clone();
        {
            let buf = out
                .amplitudes_mut()
                .as_slice_mut()
                .expect("state amplitudes are contiguous");
            for gate in &self.gates {
                apply_gate(buf, self.num_qubits, gate, params, 0, false);
            }
        }
        Ok(out)
    }

    /// Conjugates a density operator by the circuit: `rho -> C rho C^dag`.
    pub fn apply_density(&self, params: &ParamVector, rho: &DensityOperator) -> Result<DensityOperator> {
        self.check_params(params)?;
        if rho.num_qubits() != self.num_qubits {
            return Err(Error::DimensionMismatch(format!(
                "applying a {} qubit circuit to a {} qubit density operator",
                self.num_qubits,
                rho.num_qubits()
            )));
        }
        let n = self.num_qubits;
        let mut matrix = rho.matrix().clone();
        {
            // Row-major (r, c) lives at flat index r*d + c, so rows are the
            // leading n "qubits" of a 2n-qubit buffer and columns the trailing n.
            let buf = matrix.as_slice_mut().expect("density matrix is contiguous");
            for gate in &self.gates {
                // left multiplication acts on row indices
                apply_gate(buf, 2 * n, gate, params, 0, false);
                // right multiplication by the adjoint acts on column indices
                // with the elementwise conjugate of the gate matrix
                apply_gate(buf, 2 * n, gate, params, n, true);
            }
        }
        Ok(DensityOperator::from_raw(n, matrix))
    }

    /// The circuit's unitary matrix at the given parameters.
    pub fn to_unitary(&self, params: &ParamVector) -> Result<UnitaryMatrix> {
        self.check_params(params)?;
        let n = self.num_qubits;
        let d = 1usize << n;
        let mut matrix = Array2::<C64>::eye(d);
        {
            let buf = matrix.as_slice_mut().expect("matrix is contiguous");
            for gate in &self.gates {
                // U -> G U is column-wise application, i.e. the row qubits
                apply_gate(buf, 2 * n, gate, params, 0, false);
            }
        }
        Ok(UnitaryMatrix::from_raw(n, matrix))
    }

    /// Copy with every rotation bound at the given parameters: same gate
    /// order, rotations replaced by constant unitaries, no parameters left.
    pub fn bind(&self, params: &ParamVector) -> Result<Circuit> {
        self.check_params(params)?;
        let gates = self
            .gates
            .iter()
            .map(|gate| match &gate.kind {
                GateKind::PauliRotation { axis, param_index, negated } => {
                    let sign = if *negated { -1.0 } else { 1.0 };
                    let matrix = rotation_array(*axis, sign * params.angles()[*param_index]);
                    GateOp::unitary(UnitaryMatrix::from_raw(1, matrix), gate.targets.clone())
                }
                _ => gate.clone(),
            })
            .collect();
        Ok(Circuit { num_qubits: self.num_qubits, num_params: 0, gates })
    }

    /// The inverse circuit with every gate bound at the given parameters.
    /// Rotations become constant single-qubit unitaries; the result has no
    /// parameters.
    pub fn dagger(&self, params: &ParamVector) -> Result<Circuit> {
        self.check_params(params)?;
        let gates = self
            .gates
            .iter()
            .rev()
            .map(|gate| match &gate.kind {
                GateKind::H | GateKind::X | GateKind::Z | GateKind::Cnot | GateKind::Swap => {
                    gate.clone()
                }
                GateKind::ConstantUnitary(u) => GateOp::unitary(u.adjoint(), gate.targets.clone()),
                GateKind::PauliRotation { axis, param_index, negated } => {
                    let sign = if *negated { -1.0 } else { 1.0 };
                    let matrix = rotation_array(*axis, -sign * params.angles()[*param_index]);
                    GateOp::unitary(UnitaryMatrix::from_raw(1, matrix), gate.targets.clone())
                }
            })
            .collect();
        Ok(Circuit { num_qubits: self.num_qubits, num_params: 0, gates })
    }

    /// The inverse circuit keeping rotations parameterized: gate order is
    /// reversed, constants are adjointed, and each rotation's `negated` flag
    /// flips. Parameter indices are untouched.
    pub fn dagger_parameterized(&self) -> Circuit {
        let gates = self
            .gates
            .iter()
            .rev()
            .map(|gate| match &gate.kind {
                GateKind::H | GateKind::X | GateKind::Z | GateKind::Cnot | GateKind::Swap => {
                    gate.clone()
                }
                GateKind::ConstantUnitary(u) => GateOp::unitary(u.adjoint(), gate.targets.clone()),
                GateKind::PauliRotation { axis, param_index, negated } => GateOp {
                    kind: GateKind::PauliRotation {
                        axis: *axis,
                        param_index: *param_index,
                        negated: !negated,
                    },
                    targets: gate.targets.clone(),
                },
            })
            .collect();
        Circuit { num_qubits: self.num_qubits, num_params: self.num_params, gates }
    }

    /// Concatenation `self` then `other`, with `other`'s parameter indices
    /// shifted past `self`'s.
    pub fn then(&self, other: &Circuit) -> Result<Circuit> {
        if self.num_qubits != other.num_qubits {
            return Err(Error::DimensionMismatch(format!(
                "concatenating {} and {} qubit circuits",
                self.num_qubits, other.num_qubits
            )));
        }
        let mut gates = self.gates.clone();
        gates.extend(other.shift_param_indices(self.num_params).gates);
        Ok(Circuit {
            num_qubits: self.num_qubits,
            num_params: self.num_params + other.num_params,
            gates,
        })
    }

    /// Copy with every parameter index increased by `offset`.
    pub(crate) fn shift_param_indices(&self, offset: usize) -> Circuit {
        let gates = self
            .gates
            .iter()
            .map(|gate| match &gate.kind {
                GateKind::PauliRotation { axis, param_index, negated } => GateOp {
                    kind: GateKind::PauliRotation {
                        axis: *axis,
                        param_index: param_index + offset,
                        negated: *negated,
                    },
                    targets: gate.targets.clone(),
                },
                _ => gate.clone(),
            })
            .collect();
        Circuit {
            num_qubits: self.num_qubits,
            num_params: self.num_params + offset,
            gates,
        }
    }

    /// Copy with every target shifted by `offset` on a wider register.
    pub(crate) fn embed(&self, num_qubits: usize, qubits: &[usize]) -> Result<Circuit> {
        if qubits.len() != self.num_qubits {
            return Err(Error::DimensionMismatch(format!(
                "embedding a {} qubit circuit on {} qubits",
                self.num_qubits,
                qubits.len()
            )));
        }
        let gates = self
            .gates
            .iter()
            .map(|gate| GateOp {
                kind: gate.kind.clone(),
                targets: gate.targets.iter().map(|&t| qubits[t]).collect(),
            })
            .collect();
        Circuit::from_gates(num_qubits, self.num_params, gates)
    }
}

/// The matrix `exp(-i theta sigma / 2)` for the given axis.
pub fn rotation_matrix(axis: Axis, theta: f64) -> UnitaryMatrix {
    UnitaryMatrix::from_raw(1, rotation_array(axis, theta))
}

fn rotation_array(axis: Axis, theta: f64) -> Array2<C64> {
    let half = 0.5 * theta;
    let (c, s) = (half.cos(), half.sin());
    match axis {
        Axis::X => ndarray::array![
            [C64::new(c, 0.0), C64::new(0.0, -s)],
            [C64::new(0.0, -s), C64::new(c, 0.0)]
        ],
        Axis::Y => ndarray::array![
            [C64::new(c, 0.0), C64::new(-s, 0.0)],
            [C64::new(s, 0.0), C64::new(c, 0.0)]
        ],
        Axis::Z => ndarray::array![
            [C64::new(c, -s), C64::ZERO],
            [C64::ZERO, C64::new(c, s)]
        ],
    }
}

const H_MATRIX: [[f64; 2]; 2] = [
    [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
    [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2],
];

/// Applies one gate to a state buffer of `total_qubits` qubits. `offset`
/// shifts every target (used to address the column side of a density matrix
/// or the second copy of a doubled register); `conjugate` applies the
/// elementwise conjugate of the gate matrix.
fn apply_gate(
    buf: &mut [C64],
    total_qubits: usize,
    gate: &GateOp,
    params: &ParamVector,
    offset: usize,
    conjugate: bool,
) {
    match &gate.kind {
        GateKind::H => {
            let m = [
                [C64::new(H_MATRIX[0][0], 0.0), C64::new(H_MATRIX[0][1], 0.0)],
                [C64::new(H_MATRIX[1][0], 0.0), C64::new(H_MATRIX[1][1], 0.0)],
            ];
            apply_single(buf, total_qubits, gate.targets[0] + offset, &m);
        }
        GateKind::X => {
            let m = [[C64::ZERO, C64::ONE], [C64::ONE, C64::ZERO]];
            apply_single(buf, total_qubits, gate.targets[0] + offset, &m);
        }
        GateKind::Z => {
            let m = [[C64::ONE, C64::ZERO], [C64::ZERO, -C64::ONE]];
            apply_single(buf, total_qubits, gate.targets[0] + offset, &m);
        }
        GateKind::Cnot => {
            apply_cnot(buf, total_qubits, gate.targets[0] + offset, gate.targets[1] + offset);
        }
        GateKind::Swap => {
            apply_swap(buf, total_qubits, gate.targets[0] + offset, gate.targets[1] + offset);
        }
        GateKind::ConstantUnitary(u) => {
            let targets: Vec<usize> = gate.targets.iter().map(|&t| t + offset).collect();
            if u.num_qubits() == 1 {
                let m = u.matrix();
                let mut m2 = [[m[[0, 0]], m[[0, 1]]], [m[[1, 0]], m[[1, 1]]]];
                if conjugate {
                    for row in &mut m2 {
                        for v in row {
                            *v = v.conj();
                        }
                    }
                }
                apply_single(buf, total_qubits, targets[0], &m2);
            } else if conjugate {
                let m = u.matrix().mapv(|c| c.conj());
                apply_multi(buf, total_qubits, &targets, &m);
            } else {
                apply_multi(buf, total_qubits, &targets, u.matrix());
            }
        }
        GateKind::PauliRotation { axis, param_index, negated } => {
            let sign = if *negated { -1.0 } else { 1.0 };
            let theta = sign * params.angles()[*param_index];
            let m = rotation_array(*axis, theta);
            let mut m2 = [[m[[0, 0]], m[[0, 1]]], [m[[1, 0]], m[[1, 1]]]];
            if conjugate {
                for row in &mut m2 {
                    for v in row {
                        *v = v.conj();
                    }
                }
            }
            apply_single(buf, total_qubits, gate.targets[0] + offset, &m2);
        }
    }
}

fn apply_single(buf: &mut [C64], total_qubits: usize, qubit: usize, m: &[[C64; 2]; 2]) {
    let mask = 1usize << bit_pos(total_qubits, qubit);
    let dim = buf.len();
    let mut base = 0usize;
    while base < dim {
        for low in base..base + mask {
            let i0 = low;
            let i1 = low | mask;
            let a = buf[i0];
            let b = buf[i1];
            buf[i0] = m[0][0] * a + m[0][1] * b;
            buf[i1] = m[1][0] * a + m[1][1] * b;
        }
        base += mask << 1;
    }
}

fn apply_cnot(buf: &mut [C64], total_qubits: usize, control: usize, target: usize) {
    let cmask = 1usize << bit_pos(total_qubits, control);
    let tmask = 1usize << bit_pos(total_qubits, target);
    for i in 0..buf.len() {
        if i & cmask != 0 && i & tmask == 0 {
            buf.swap(i, i | tmask);
        }
    }
}

fn apply_swap(buf: &mut [C64], total_qubits: usize, a: usize, b: usize) {
    let amask = 1usize << bit_pos(total_qubits, a);
    let bmask = 1usize << bit_pos(total_qubits, b);
    for i in 0..buf.len() {
        if i & amask != 0 && i & bmask == 0 {
            buf.swap(i, i ^ amask ^ bmask);
        }
    }
}

fn apply_multi(buf: &mut [C64], total_qubits: usize, targets: &[usize], m: &Array2<C64>) {
    let k = targets.len();
    let sub_dim = 1usize << k;
    debug_assert_eq!(m.nrows(), sub_dim);
    // offsets[local] spreads the local sub-index over the target bit positions;
    // the first target is the most significant local bit
    let positions: Vec<usize> = targets.iter().map(|&t| bit_pos(total_qubits, t)).collect();
    let mut offsets = vec![0usize; sub_dim];
    for (local, offset) in offsets.iter_mut().enumerate() {
        for (j, &pos) in positions.iter().enumerate() {
            if (local >> (k - 1 - j)) & 1 == 1 {
                *offset |= 1 << pos;
            }
        }
    }
    let target_union: usize = positions.iter().map(|&p| 1usize << p).sum();
    let mut scratch = vec![C64::ZERO; sub_dim];
    let dim = buf.len();
    let mut base = 0usize;
    while base < dim {
        if base & target_union != 0 {
            // not a canonical base point: skip past the lowest set target bit
            base += base & target_union & base.wrapping_neg();
            continue;
        }
        for (local, s) in scratch.iter_mut().enumerate() {
            *s = buf[base | offsets[local]];
        }
        for row in 0..sub_dim {
            let mut acc = C64::ZERO;
            for (col, s) in scratch.iter().enumerate() {
                acc += m[[row, col]] * *s;
            }
            buf[base | offsets[row]] = acc;
        }
        base += 1;
    }
}

/// The universal two-qubit ansatz: a general single-qubit gate (RZ RY RZ) on
/// each qubit, then a three-CNOT core with RZ/RY/RY rotations, then another
/// pair of general single-qubit gates. 15 parameters and 3 CNOTs reach any
/// two-qubit unitary up to global phase.
pub fn universal_two_qubit_ansatz() -> Circuit {
    let mut gates = Vec::with_capacity(18);
    let mut p = 0usize;
    let column = |gates: &mut Vec<GateOp>, p: &mut usize, q: usize| {
        gates.push(GateOp::rotation(Axis::Z, q, *p));
        gates.push(GateOp::rotation(Axis::Y, q, *p + 1));
        gates.push(GateOp::rotation(Axis::Z, q, *p + 2));
        *p += 3;
    };
    column(&mut gates, &mut p, 0);
    column(&mut gates, &mut p, 1);
    gates.push(GateOp::cnot(1, 0));
    gates.push(GateOp::rotation(Axis::Z, 0, p));
    gates.push(GateOp::rotation(Axis::Y, 1, p + 1));
    p += 2;
    gates.push(GateOp::cnot(0, 1));
    gates.push(GateOp::rotation(Axis::Y, 1, p));
    p += 1;
    gates.push(GateOp::cnot(1, 0));
    column(&mut gates, &mut p, 0);
    column(&mut gates, &mut p, 1);
    Circuit::from_gates(2, p, gates).expect("static ansatz is valid")
}

/// Hardware-efficient layered ansatz: each layer is an RZ RY RZ column on
/// every qubit followed by a CNOT ladder `i -> i+1`, with a final rotation
/// column after the last layer. Parameter count is `3 n (layers + 1)`.
pub fn layered_ansatz(num_qubits: usize, layers: usize) -> Result<Circuit> {
    if num_qubits == 0 || num_qubits > MAX_QUBITS {
        return Err(Error::InvalidArgument(format!(
            "layered ansatz register must have between 1 and {MAX_QUBITS} qubits",
        )));
    }
    let mut gates = Vec::new();
    let mut p = 0usize;
    let column = |gates: &mut Vec<GateOp>, p: &mut usize| {
        for q in 0..num_qubits {
            gates.push(GateOp::rotation(Axis::Z, q, *p));
            gates.push(GateOp::rotation(Axis::Y, q, *p + 1));
            gates.push(GateOp::rotation(Axis::Z, q, *p + 2));
            *p += 3;
        }
    };
    for _ in 0..layers {
        column(&mut gates, &mut p);
        for i in 0..num_qubits.saturating_sub(1) {
            gates.push(GateOp::cnot(i, i + 1));
        }
    }
    column(&mut gates, &mut p);
    Circuit::from_gates(num_qubits, p, gates)
}

/// The circuit `V1^dag U V0^dag` with `U` embedded as a constant and the
/// parameters of `v0` and `v1` concatenated (`v0` first).
pub fn sandwich(target: &UnitaryMatrix, v0: &Circuit, v1: &Circuit) -> Result<Circuit> {
    let n = target.num_qubits();
    if v0.num_qubits() != n || v1.num_qubits() != n {
        return Err(Error::DimensionMismatch(format!(
            "sandwich of a {n} qubit target with {} and {} qubit circuits",
            v0.num_qubits(),
            v1.num_qubits()
        )));
    }
    let mut circuit = v0.dagger_parameterized();
    let embedded = Circuit::from_gates(
        n,
        0,
        vec![GateOp::unitary(target.clone(), (0..n).collect())],
    )?;
    circuit = circuit.then(&embedded)?;
    circuit.then(&v1.dagger_parameterized())
}

/// Two copies of `w` side by side: copy alpha on qubits `0..n`, copy beta on
/// `n..2n` with parameter indices shifted by `w.num_params()`. Bind it with
/// [`DoubledBinding::doubled_params`] so both copies read one angle vector.
pub fn doubled_circuit(w: &Circuit) -> Result<Circuit> {
    let n = w.num_qubits();
    if 2 * n > MAX_QUBITS {
        return Err(Error::InvalidArgument(format!(
            "doubling a {n} qubit circuit exceeds the {MAX_QUBITS} qubit register cap",
        )));
    }
    let beta_qubits: Vec<usize> = (n..2 * n).collect();
    let alpha = w.embed(2 * n, &(0..n).collect::<Vec<_>>())?;
    let beta = w.embed(2 * n, &beta_qubits)?;
    alpha.then(&beta)
}

/// Which copy of a doubled circuit receives a parameter shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftCopy {
    None,
    Alpha,
    Beta,
}

/// Parameter binding for a doubled circuit: both copies read `base`, except
/// that at most one copy sees `base[shift_index] + shift_amount`.
#[derive(Debug, Clone)]
pub struct DoubledBinding {
    pub base: ParamVector,
    pub shift_copy: ShiftCopy,
    pub shift_index: usize,
    pub shift_amount: f64,
}

impl DoubledBinding {
    pub fn unshifted(base: ParamVector) -> Self {
        Self { base, shift_copy: ShiftCopy::None, shift_index: 0, shift_amount: 0.0 }
    }

    pub fn shifted(base: ParamVector, copy: ShiftCopy, index: usize, amount: f64) -> Result<Self> {
        if copy != ShiftCopy::None && index >= base.len() {
            return Err(Error::InvalidIndex(format!(
                "shift index {index} out of range for {} parameters",
                base.len()
            )));
        }
        Ok(Self { base, shift_copy: copy, shift_index: index, shift_amount: amount })
    }

    /// Angles seen by copy alpha.
    pub fn alpha_params(&self) -> ParamVector {
        match self.shift_copy {
            ShiftCopy::Alpha => self.base.shifted(self.shift_index, self.shift_amount),
            _ => self.base.clone(),
        }
    }

    /// Angles seen by copy beta.
    pub fn beta_params(&self) -> ParamVector {
        match self.shift_copy {
            ShiftCopy::Beta => self.base.shifted(self.shift_index, self.shift_amount),
            _ => self.base.clone(),
        }
    }

    /// The concatenated angle vector a doubled circuit expects.
    pub fn doubled_params(&self) -> ParamVector {
        self.alpha_params().concat(&self.beta_params())
    }
}

#[derive(Serialize, Deserialize)]
struct GateJson {
    kind: String,
    targets: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    param_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    negated: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct CircuitJson {
    num_qubits: usize,
    num_params: usize,
    gates: Vec<GateJson>,
}

impl Circuit {
    fn to_repr(&self) -> CircuitJson {
        let gates = self
            .gates
            .iter()
            .map(|gate| {
                let mut g = GateJson {
                    kind: String::new(),
                    targets: gate.targets.clone(),
                    axis: None,
                    param_index: None,
                    negated: None,
                    matrix: None,
                };
                match &gate.kind {
                    GateKind::H => g.kind = "H".into(),
                    GateKind::X => g.kind = "X".into(),
                    GateKind::Z => g.kind = "Z".into(),
                    GateKind::Cnot => g.kind = "CNOT".into(),
                    GateKind::Swap => g.kind = "SWAP".into(),
                    GateKind::ConstantUnitary(u) => {
                        g.kind = "ConstantUnitary".into();
                        g.matrix = Some(u.matrix().iter().map(|c| [c.re, c.im]).collect());
                    }
                    GateKind::PauliRotation { axis, param_index, negated } => {
                        g.kind = "PauliRotation".into();
                        g.axis = Some(axis.name().into());
                        g.param_index = Some(*param_index);
                        if *negated {
                            g.negated = Some(true);
                        }
                    }
                }
                g
            })
            .collect();
        CircuitJson { num_qubits: self.num_qubits, num_params: self.num_params, gates }
    }

    fn from_repr(repr: CircuitJson) -> Result<Self> {
        let mut gates = Vec::with_capacity(repr.gates.len());
        for (i, g) in repr.gates.into_iter().enumerate() {
            let kind = match g.kind.as_str() {
                "H" => GateKind::H,
                "X" => GateKind::X,
                "Z" => GateKind::Z,
                "CNOT" => GateKind::Cnot,
                "SWAP" => GateKind::Swap,
                "ConstantUnitary" => {
                    let flat = g.matrix.ok_or_else(|| {
                        Error::Parse(format!("gate {i}: ConstantUnitary without matrix"))
                    })?;
                    let d = 1usize << g.targets.len();
                    if flat.len() != d * d {
                        return Err(Error::Parse(format!(
                            "gate {i}: matrix has {} entries, expected {}",
                            flat.len(),
                            d * d
                        )));
                    }
                    let matrix = Array2::from_shape_vec(
                        (d, d),
                        flat.into_iter().map(|[re, im]| C64::new(re, im)).collect(),
                    )
                    .expect("shape checked above");
                    GateKind::ConstantUnitary(UnitaryMatrix::from_matrix(matrix)?)
                }
                "PauliRotation" => {
                    let axis = match g.axis.as_deref() {
                        Some("X") => Axis::X,
                        Some("Y") => Axis::Y,
                        Some("Z") => Axis::Z,
                        other => {
                            return Err(Error::Parse(format!(
                                "gate {i}: bad rotation axis {other:?}",
                            )))
                        }
                    };
                    let param_index = g.param_index.ok_or_else(|| {
                        Error::Parse(format!("gate {i}: PauliRotation without param_index"))
                    })?;
                    GateKind::PauliRotation {
                        axis,
                        param_index,
                        negated: g.negated.unwrap_or(false),
                    }
                }
                other => return Err(Error::Parse(format!("gate {i}: unknown kind {other:?}"))),
            };
            gates.push(GateOp { kind, targets: g.targets });
        }
        Circuit::from_gates(repr.num_qubits, repr.num_params, gates)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_repr()).expect("circuit serialization is infallible")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let repr: CircuitJson = serde_json::from_str(text)?;
        Self::from_repr(repr)
    }
}

impl Serialize for Circuit {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_repr().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Circuit {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = CircuitJson::deserialize(deserializer)?;
        Circuit::from_repr(repr).map_err(D::Error::custom)
    }
}
