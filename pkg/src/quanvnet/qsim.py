"""Dense statevector simulator for small qubit registers.

Conventions:
    - Qubit 0 is the least-significant bit of the basis index, so basis
      state ``|q3 q2 q1 q0>`` lives at index ``q3*8 + q2*4 + q1*2 + q0``.
    - Bitstrings (shot counts) are written most-significant qubit first,
      i.e. reading a key as a binary number gives the basis index.
    - Multi-qubit gate matrices index their rows/columns with the first
      listed target as the most significant bit (CNOT targets are
      ``[control, target]``).

All operations are pure: they return new values and never mutate their
inputs, so states and circuits are safely shareable across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import cos, sin, sqrt

import numpy as np

from .errors import ConfigError
from .rng import make_rng

MAX_QUBITS = 12

_SQRT2_INV = 1 / sqrt(2)

_FIXED_GATES = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT2_INV,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "CNOT": np.array(
        [[1, 0, 0, 0],
         [0, 1, 0, 0],
         [0, 0, 0, 1],
         [0, 0, 1, 0]], dtype=complex),
    "SWAP": np.array(
        [[1, 0, 0, 0],
         [0, 0, 1, 0],
         [0, 1, 0, 0],
         [0, 0, 0, 1]], dtype=complex),
    "TOFFOLI": np.eye(8, dtype=complex)[[0, 1, 2, 3, 4, 5, 7, 6]],
}

_ROTATION_GATES = {
    "RX": lambda a: np.array(
        [[cos(a / 2), -1j * sin(a / 2)],
         [-1j * sin(a / 2), cos(a / 2)]], dtype=complex),
    "RY": lambda a: np.array(
        [[cos(a / 2), -sin(a / 2)],
         [sin(a / 2), cos(a / 2)]], dtype=complex),
    "RZ": lambda a: np.array(
        [[np.exp(-1j * a / 2), 0],
         [0, np.exp(1j * a / 2)]], dtype=complex),
}

GATE_ARITY = {
    "H": 1, "X": 1, "Y": 1, "Z": 1,
    "RX": 1, "RY": 1, "RZ": 1,
    "CNOT": 2, "SWAP": 2, "TOFFOLI": 3,
}


@dataclass
class Statevector:
    """Complex amplitude vector over ``n_qubits`` qubits (length 2**n)."""

    n_qubits: int
    amplitudes: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class CircuitOp:
    """One gate application: gate id, real parameters, target qubits."""

    gate: str
    params: tuple[float, ...]
    qubits: tuple[int, ...]


@dataclass
class Circuit:
    """Ordered gate sequence on a fixed-size register."""

    n_qubits: int
    ops: list[CircuitOp] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ConfigError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        for op in self.ops:
            self._check_op(op)

    def _check_op(self, op: CircuitOp) -> None:
        if op.gate not in GATE_ARITY:
            raise ConfigError(f"unknown gate {op.gate!r}")
        if len(op.qubits) != GATE_ARITY[op.gate]:
            raise ConfigError(f"{op.gate} acts on {GATE_ARITY[op.gate]} qubits, got {op.qubits}")
        if len(set(op.qubits)) != len(op.qubits):
            raise ConfigError(f"duplicate qubit in {op}")
        for q in op.qubits:
            if not 0 <= q < self.n_qubits:
                raise ConfigError(f"qubit {q} out of range for {self.n_qubits}-qubit circuit")

    def add(self, gate: str, qubits: tuple[int, ...] | list[int], params: tuple[float, ...] = ()) -> "Circuit":
        op = CircuitOp(gate, tuple(float(p) for p in params), tuple(qubits))
        self._check_op(op)
        self.ops.append(op)
        return self


@dataclass
class ShotCounts:
    """Measurement histogram: basis bitstring -> count, summing to total."""

    counts: dict[str, int]
    total: int


def zero_state(n_qubits: int) -> Statevector:
    """|0...0> on ``n_qubits`` qubits."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    amps = np.zeros(2 ** n_qubits, dtype=complex)
    amps[0] = 1.0
    return Statevector(n_qubits, amps)


def standard_gate(name: str, params: tuple[float, ...] | list[float] = ()) -> np.ndarray:
    """Unitary matrix for a named gate.

    Rotation gates (RX/RY/RZ) take exactly one angle in radians; all other
    gates take no parameters.
    """
    if name in _FIXED_GATES:
        if params:
            raise ConfigError(f"{name} takes no parameters, got {list(params)}")
        return _FIXED_GATES[name].copy()
    if name in _ROTATION_GATES:
        if len(params) != 1:
            raise ConfigError(f"{name} takes exactly one angle, got {list(params)}")
        return _ROTATION_GATES[name](float(params[0]))
    raise ConfigError(f"unknown gate {name!r}")


def apply_gate(state: Statevector, gate: np.ndarray, targets: list[int] | tuple[int, ...]) -> Statevector:
    """Apply a 2^k x 2^k unitary to the listed target qubits.

    Works by index arithmetic on the amplitude array (reshape + axis moves),
    never materializing a 2^n x 2^n matrix.
    """
    n = state.n_qubits
    k = len(targets)
    if gate.shape != (2 ** k, 2 ** k):
        raise ConfigError(f"gate of shape {gate.shape} does not match {k} target qubits")
    if len(set(targets)) != k:
        raise ConfigError(f"duplicate target in {targets}")
    for q in targets:
        if not 0 <= q < n:
            raise ConfigError(f"target {q} out of range for {n}-qubit state")

    # Axis i of the reshaped tensor is qubit n-1-i; move targets to the
    # front in listed order so the first target is the gate's MSB.
    axes = [n - 1 - q for q in targets]
    psi = state.amplitudes.reshape([2] * n)
    psi = np.moveaxis(psi, axes, range(k))
    tail = psi.shape[k:]
    psi = gate @ psi.reshape(2 ** k, -1)
    psi = np.moveaxis(psi.reshape((2,) * k + tail), range(k), axes)
    return Statevector(n, np.ascontiguousarray(psi.reshape(-1)))


def run_circuit(circuit: Circuit, initial: Statevector | None = None) -> Statevector:
    """Apply every op of the circuit in order, starting from |0...0> by default."""
    if initial is None:
        initial = zero_state(circuit.n_qubits)
    if initial.n_qubits != circuit.n_qubits:
        raise ConfigError(
            f"circuit has {circuit.n_qubits} qubits but initial state has {initial.n_qubits}")
    state = initial
    for op in circuit.ops:
        state = apply_gate(state, standard_gate(op.gate, op.params), op.qubits)
    return state


def circuit_unitary(circuit: Circuit) -> np.ndarray:
    """Full 2^n x 2^n unitary of a circuit, built column-by-column."""
    n = circuit.n_qubits
    dim = 2 ** n
    cols = np.empty((dim, dim), dtype=complex)
    for b in range(dim):
        amps = np.zeros(dim, dtype=complex)
        amps[b] = 1.0
        cols[:, b] = run_circuit(circuit, Statevector(n, amps)).amplitudes
    return cols


def expectation_z(state: Statevector, qubit: int) -> float:
    """Exact <Z> on one qubit: sum of |amp|^2 weighted +1/-1 by that bit."""
    n = state.n_qubits
    if not 0 <= qubit < n:
        raise ConfigError(f"qubit {qubit} out of range for {n}-qubit state")
    probs = state.probabilities().reshape([2] * n)
    axis = n - 1 - qubit
    other = tuple(i for i in range(n) if i != axis)
    marginal = probs.sum(axis=other) if other else probs
    return float(marginal[0] - marginal[1])


def sample_shots(state: Statevector, shots: int, rng_seed) -> ShotCounts:
    """Multinomial draw of measurement outcomes from |amplitudes|^2.

    ``rng_seed`` may be an int or a tuple of ints; the same seed always
    reproduces the same counts.
    """
    if shots < 1:
        raise ConfigError("shots must be >= 1; use expectation_z for exact values")
    probs = state.probabilities()
    probs = probs / probs.sum()  # guard against 1e-16 norm drift
    rng = make_rng(*rng_seed) if isinstance(rng_seed, tuple) else make_rng(rng_seed)
    draws = rng.multinomial(shots, probs)
    n = state.n_qubits
    counts = {format(b, f"0{n}b"): int(c) for b, c in enumerate(draws) if c > 0}
    return ShotCounts(counts, shots)


def estimate_z_from_shots(counts: ShotCounts, qubit: int) -> float:
    """(n_zero - n_one) / total for one bit position of the counted bitstrings."""
    if not counts.counts:
        raise ConfigError("empty shot counts")
    n_bits = len(next(iter(counts.counts)))
    if not 0 <= qubit < n_bits:
        raise ConfigError(f"qubit {qubit} out of range for {n_bits}-bit counts")
    zeros = 0
    for bits, c in counts.counts.items():
        if bits[n_bits - 1 - qubit] == "0":
            zeros += c
    return (2 * zeros - counts.total) / counts.total


def estimate_p0_from_shots(counts: ShotCounts, qubit: int) -> float:
    """Fraction of shots with the given qubit measured 0."""
    return (1.0 + estimate_z_from_shots(counts, qubit)) / 2.0


def dump_state_csv(state: Statevector) -> str:
    """CSV dump (index, re, im) for the debug CLI."""
    lines = ["index,re,im"]
    for i, a in enumerate(state.amplitudes):
        lines.append(f"{i},{float(a.real)!r},{float(a.imag)!r}")
    return "\n".join(lines) + "\n"
