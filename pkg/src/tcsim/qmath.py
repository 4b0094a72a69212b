"""Dense complex linear algebra for small qubit registers.

Provides density matrices, Kraus channels, standard gates, partial trace,
projective measurement and fidelity helpers for registers of 1 to 4 qubits.

Qubit ordering is little-endian throughout: qubit 0 is the least significant
bit of the computational basis index, so for a two-qubit register the basis
order is |q1 q0> = |00>, |01>, |10>, |11> with q0 varying fastest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_QUBITS = 4

HERMITICITY_TOL = 1e-12
TRACE_TOL = 1e-12
EIGENVALUE_FLOOR = -1e-10
CP_TOL = 1e-10


class DimensionError(ValueError):
    """Operator or register dimensions do not match."""


class NonPhysicalError(ValueError):
    """A state or channel violates a physicality constraint."""


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def num_qubits(dim: int) -> int:
    if not _is_power_of_two(dim) or dim > 2**MAX_QUBITS:
        raise DimensionError(f"dimension {dim} is not a power of 2 <= {2**MAX_QUBITS}")
    return dim.bit_length() - 1


@dataclass(frozen=True)
class DensityMatrix:
    """Immutable density operator on a register of 1-4 qubits.

    Physicality (hermiticity, unit trace, positivity) is asserted at
    construction; a violating matrix is treated as a bug, not as data.
    """

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=np.complex128)
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"density matrix must be square, got {m.shape}")
        num_qubits(m.shape[0])
        if np.max(np.abs(m - m.conj().T)) > 1e-9:
            raise NonPhysicalError("density matrix is not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1.0) > 1e-9:
            raise NonPhysicalError(f"trace is {tr}, expected 1")
        evals = np.linalg.eigvalsh(m)
        if evals.min() < EIGENVALUE_FLOOR:
            raise NonPhysicalError(f"negative eigenvalue {evals.min()}")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def n_qubits(self) -> int:
        return num_qubits(self.dim)

    @classmethod
    def from_statevector(cls, psi: np.ndarray) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=np.complex128).reshape(-1)
        norm = np.linalg.norm(psi)
        if norm == 0:
            raise NonPhysicalError("zero state vector")
        psi = psi / norm
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        d = 2**n_qubits
        return cls(np.eye(d) / d)

    def purity(self) -> float:
        return float(np.trace(self.entries @ self.entries).real)


@dataclass(frozen=True)
class KrausChannel:
    """A completely positive map given by its Kraus operators.

    trace_preserving channels must satisfy sum K^d K = I; trace-decreasing
    ones (heralded branches) only sum K^d K <= I.
    """

    operators: tuple
    trace_preserving: bool = True

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=np.complex128) for k in self.operators)
        if not ops:
            raise NonPhysicalError("channel needs at least one Kraus operator")
        d = ops[0].shape[0]
        for k in ops:
            if k.shape != (d, d):
                raise DimensionError("Kraus operators must share one square shape")
        s = sum(k.conj().T @ k for k in ops)
        eye = np.eye(d)
        if self.trace_preserving:
            if np.max(np.abs(s - eye)) > CP_TOL:
                raise NonPhysicalError("Kraus operators do not sum to identity")
        else:
            # sum K^d K <= I: largest eigenvalue of (s - I) must be <= tol
            if np.linalg.eigvalsh(s - eye).max() > CP_TOL:
                raise NonPhysicalError("channel is not trace non-increasing")
        object.__setattr__(self, "operators", ops)

    @property
    def dim(self) -> int:
        return self.operators[0].shape[0]


# ---------------------------------------------------------------------------
# gates

_SQ2 = 1.0 / np.sqrt(2.0)

I2 = np.eye(2, dtype=np.complex128)
X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
H = np.array([[1, 1], [1, -1]], dtype=np.complex128) * _SQ2


def rx(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)


def ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


CNOT = np.array(
    [[1, 0, 0, 0],
     [0, 1, 0, 0],
     [0, 0, 0, 1],
     [0, 0, 1, 0]], dtype=np.complex128)  # control = qubit 1, target = qubit 0 (little-endian)

SWAP = np.array(
    [[1, 0, 0, 0],
     [0, 0, 1, 0],
     [0, 1, 0, 0],
     [0, 0, 0, 1]], dtype=np.complex128)


def selective_x(control_value: int) -> np.ndarray:
    """X on the target qubit applied only when the control is |control_value>.

    Two-qubit operator with control = qubit 1, target = qubit 0. This is the
    spin-selective pi rotation realizing a controlled-NOT between a nuclear
    and an electron spin in either direction.
    """
    if control_value not in (0, 1):
        raise ValueError("control_value must be 0 or 1")
    u = np.eye(4, dtype=np.complex128)
    base = 2 * control_value
    u[base:base + 2, base:base + 2] = X
    return u


@dataclass(frozen=True)
class GateSpec:
    """A named gate with target qubits, validated unitary."""

    name: str
    targets: tuple
    angle: float | None = None
    control_value: int = 1

    _TABLE = {"X", "H", "Rx", "Ry", "CNOT", "SWAP", "selective-X"}

    def __post_init__(self):
        if self.name not in self._TABLE:
            raise ValueError(f"unknown gate {self.name!r}")
        object.__setattr__(self, "targets", tuple(self.targets))

    def matrix(self) -> np.ndarray:
        if self.name == "X":
            return X
        if self.name == "H":
            return H
        if self.name == "Rx":
            return rx(self.angle)
        if self.name == "Ry":
            return ry(self.angle)
        if self.name == "CNOT":
            return CNOT
        if self.name == "SWAP":
            return SWAP
        return selective_x(self.control_value)


# ---------------------------------------------------------------------------
# operator embedding

def expand_operator(op: np.ndarray, targets, n_qubits: int) -> np.ndarray:
    """Embed an operator acting on `targets` into the full register.

    targets are listed least-significant first: for a two-qubit op the first
    target is the op's qubit 0. Remaining qubits get the identity.
    """
    op = np.asarray(op, dtype=np.complex128)
    targets = list(targets)
    k = num_qubits(op.shape[0])
    if len(targets) != k:
        raise DimensionError(f"operator acts on {k} qubits, got {len(targets)} targets")
    if len(set(targets)) != len(targets):
        raise DimensionError("duplicate target qubits")
    for t in targets:
        if not 0 <= t < n_qubits:
            raise DimensionError(f"target {t} outside register of {n_qubits} qubits")
    dim = 2**n_qubits
    full = np.zeros((dim, dim), dtype=np.complex128)
    rest = [q for q in range(n_qubits) if q not in targets]
    for i in range(dim):
        i_t = sum(((i >> t) & 1) << b for b, t in enumerate(targets))
        i_r = tuple((i >> q) & 1 for q in rest)
        for j_t in range(2**k):
            if op[j_t, i_t] == 0:
                continue
            j = sum(((j_t >> b) & 1) << t for b, t in enumerate(targets))
            j += sum(bit << q for bit, q in zip(i_r, rest))
            full[j, i] += op[j_t, i_t]
    return full


def apply_unitary(rho: DensityMatrix, u: np.ndarray, targets) -> DensityMatrix:
    uf = expand_operator(u, targets, rho.n_qubits)
    return DensityMatrix(uf @ rho.entries @ uf.conj().T)


def apply_gate(rho: DensityMatrix, gate: GateSpec) -> DensityMatrix:
    return apply_unitary(rho, gate.matrix(), gate.targets)


def apply_channel(rho: DensityMatrix, ch: KrausChannel, targets,
                  renormalize: bool = False) -> DensityMatrix:
    """Apply a Kraus channel to the given target qubits.

    Trace-preserving channels return a valid state directly. A
    trace-decreasing channel represents a heralded branch and must be applied
    with renormalize=True (the herald) to obtain a conditional state.
    """
    k = num_qubits(ch.dim)
    if len(tuple(targets)) != k:
        raise DimensionError("channel dimension does not match target count")
    ops = [expand_operator(op, targets, rho.n_qubits) for op in ch.operators]
    out = np.zeros_like(rho.entries)
    for op in ops:
        out = out + op @ rho.entries @ op.conj().T
    if not ch.trace_preserving:
        if not renormalize:
            raise NonPhysicalError(
                "trace-decreasing channel requires renormalize=True (herald)")
        tr = np.trace(out).real
        if tr <= 0:
            raise NonPhysicalError("heralded branch has zero probability")
        out = out / tr
    return DensityMatrix(out)


def partial_trace(rho: DensityMatrix, keep) -> DensityMatrix:
    """Reduced state over the kept qubits (little-endian order preserved)."""
    keep = sorted(set(keep))
    n = rho.n_qubits
    if not keep:
        raise DimensionError("keep must be nonempty")
    for q in keep:
        if not 0 <= q < n:
            raise DimensionError(f"qubit {q} outside register")
    if len(keep) == n:
        return rho
    # reshape into per-qubit axes; axis i (row side) holds qubit n-1-i, the
    # column axes follow in the same order.
    t = rho.entries.reshape((2,) * (2 * n))
    row = {q: i for i, q in enumerate(reversed(range(n)))}
    labels = {}
    nxt = 0
    in_sub = [""] * (2 * n)
    for q in range(n):
        if q in keep:
            a, b = chr(97 + nxt), chr(97 + nxt + 1)
            nxt += 2
            in_sub[row[q]] = a
            in_sub[n + row[q]] = b
            labels[q] = (a, b)
        else:
            c = chr(97 + nxt)
            nxt += 1
            in_sub[row[q]] = c
            in_sub[n + row[q]] = c
    out_rows = "".join(labels[q][0] for q in reversed(keep))
    out_cols = "".join(labels[q][1] for q in reversed(keep))
    reduced = np.einsum("".join(in_sub) + "->" + out_rows + out_cols, t)
    d = 2 ** len(keep)
    return DensityMatrix(reduced.reshape(d, d))


def fidelity_to_pure(rho: DensityMatrix, psi: np.ndarray) -> float:
    """<psi|rho|psi> for a normalized pure target state."""
    psi = np.asarray(psi, dtype=np.complex128).reshape(-1)
    if psi.shape[0] != rho.dim:
        raise DimensionError("state vector dimension mismatch")
    n = np.linalg.norm(psi)
    if abs(n - 1.0) > 1e-9:
        psi = psi / n
    val = float(np.real(psi.conj() @ rho.entries @ psi))
    return min(max(val, 0.0), 1.0)


def measure(rho: DensityMatrix, qubit: int, basis: str = "Z"):
    """Projective measurement of one qubit.

    Returns a list of (outcome, probability, post_state) with outcomes 0/1
    labelling the +1/-1 eigenstates of the chosen basis; zero-probability
    branches are omitted. Probabilities sum to 1.
    """
    if not 0 <= qubit < rho.n_qubits:
        raise DimensionError(f"qubit {qubit} outside register")
    if basis == "Z":
        vecs = [np.array([1, 0], dtype=np.complex128),
                np.array([0, 1], dtype=np.complex128)]
    elif basis == "X":
        vecs = [np.array([_SQ2, _SQ2], dtype=np.complex128),
                np.array([_SQ2, -_SQ2], dtype=np.complex128)]
    else:
        raise ValueError(f"unsupported basis {basis!r}")
    results = []
    for outcome, v in enumerate(vecs):
        proj = expand_operator(np.outer(v, v.conj()), [qubit], rho.n_qubits)
        sub = proj @ rho.entries @ proj
        p = float(np.trace(sub).real)
        if p > 1e-15:
            results.append((outcome, p, DensityMatrix(sub / p)))
    return results


# ---------------------------------------------------------------------------
# standard channels and states

def depolarizing_channel(p: float) -> KrausChannel:
    """Single-qubit depolarizing channel: rho -> (1-p) rho + p I/2."""
    if not 0 <= p <= 1:
        raise ValueError("p must be in [0, 1]")
    return KrausChannel((
        np.sqrt(1 - 3 * p / 4) * I2,
        np.sqrt(p / 4) * X,
        np.sqrt(p / 4) * Y,
        np.sqrt(p / 4) * Z,
    ))


def bit_flip_channel(p: float) -> KrausChannel:
    return KrausChannel((np.sqrt(1 - p) * I2, np.sqrt(p) * X))


def dephasing_channel(p: float) -> KrausChannel:
    return KrausChannel((np.sqrt(1 - p) * I2, np.sqrt(p) * Z))


def depolarizing_from_average_gate_fidelity(f_avg: float) -> KrausChannel:
    """Depolarizing residue with the given single-qubit average gate fidelity.

    For the channel rho -> (1-p) rho + p I/2 the average fidelity over pure
    states is 1 - p/2, so p = 2 (1 - f_avg).
    """
    if not 0.5 <= f_avg <= 1.0:
        raise ValueError("average gate fidelity must be in [0.5, 1]")
    return depolarizing_channel(2.0 * (1.0 - f_avg))


def basis_state(n_qubits: int, index: int) -> np.ndarray:
    v = np.zeros(2**n_qubits, dtype=np.complex128)
    v[index] = 1.0
    return v


def bell_state(kind: str) -> np.ndarray:
    """Bell states in little-endian two-qubit basis |q1 q0>."""
    v = np.zeros(4, dtype=np.complex128)
    if kind == "phi+":
        v[0b00] = v[0b11] = _SQ2
    elif kind == "phi-":
        v[0b00], v[0b11] = _SQ2, -_SQ2
    elif kind == "psi+":
        v[0b01] = v[0b10] = _SQ2
    elif kind == "psi-":
        v[0b01], v[0b10] = _SQ2, -_SQ2
    else:
        raise ValueError(f"unknown Bell state {kind!r}")
    return v


def werner_state(w: float, kind: str = "psi-") -> DensityMatrix:
    """w |B><B| + (1-w) I/4 for the chosen Bell state."""
    psi = bell_state(kind)
    return DensityMatrix(w * np.outer(psi, psi.conj()) + (1 - w) * np.eye(4) / 4)
