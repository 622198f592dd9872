"""Trotterized transverse-field Ising circuits with Pauli-Lindblad noise.

Covers the noise tables, the mapping of the noise inverse onto a
quasiprobability decomposition, a batched statevector trajectory simulator
and the averaged weight-``kappa`` observables.

Qubit ``q`` (zero-based) is bit ``Q - 1 - q`` of a basis-state index, so
``state.reshape([2] * Q)`` has qubit ``q`` on axis ``q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .numerics import elementary_symmetric
from .qpd import QpdModel

PAULI_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
LAYER_TYPES = (1, 1, 2, 2)  # layer type of each noisy layer within one Trotter step
NOISY_LAYERS_PER_STEP = len(LAYER_TYPES)
DENSE_MAX_QUBITS = 6  # up to here, layers of identical 1-qubit gates use one dense matrix


# --- circuit and noise description ----------------------------------------------


@dataclass(frozen=True)
class IsingCircuitSpec:
    q: int
    n_trot: int
    h: float
    j: float
    dt: float

    def __post_init__(self):
        if self.q < 2:
            raise ValueError("need at least two qubits")
        if self.n_trot < 1:
            raise ValueError("n_trot must be at least 1")

    @property
    def theta_x(self) -> float:
        return 2.0 * self.h * self.dt

    @property
    def theta_z(self) -> float:
        return -2.0 * self.j * self.dt


@dataclass(frozen=True)
class PauliTerm:
    pauli: str
    layer_type: int
    epsilon: float

    def __post_init__(self):
        if self.layer_type not in (1, 2):
            raise ValueError(f"layer type must be 1 or 2, got {self.layer_type}")
        if not 0.0 <= self.epsilon < 0.5:
            raise ValueError(f"{self.pauli}: error rate {self.epsilon} outside [0, 0.5)")
        support_of(self.pauli)

    @property
    def support(self) -> tuple[int, ...]:
        return support_of(self.pauli)

    def masks(self) -> tuple[int, int]:
        return pauli_masks(self.pauli)


def support_of(pauli: str) -> tuple[int, ...]:
    bad = set(pauli) - set(PAULI_BITS)
    if bad:
        raise ValueError(f"unknown Pauli letter(s) {sorted(bad)} in {pauli!r}")
    sup = tuple(i for i, c in enumerate(pauli) if c != "I")
    if len(sup) == 1 or (len(sup) == 2 and sup[1] == sup[0] + 1):
        return sup
    raise ValueError(f"{pauli!r} must act on one qubit or two neighbouring qubits")


def pauli_masks(pauli: str) -> tuple[int, int]:
    """``(x_mask, z_mask)`` of a Pauli string; ``Y`` sets both bits."""
    n = len(pauli)
    x = z = 0
    for qb, c in enumerate(pauli):
        bx, bz = PAULI_BITS[c]
        x |= bx << (n - 1 - qb)
        z |= bz << (n - 1 - qb)
    return x, z


def epsilon_from_table_value(v: float) -> float:
    """Invert ``v = -ln(1 - 2 eps) / 2``."""
    return -math.expm1(-2.0 * v) / 2.0


@dataclass(frozen=True)
class NoiseModel:
    """Noise terms for layer types 1 and 2 (same Pauli list, separate rates)."""

    paulis: tuple[str, ...]
    epsilons: np.ndarray  # shape (2, N_Paulis); row t is layer type t + 1

    def __post_init__(self):
        eps = np.asarray(self.epsilons, dtype=float)
        if eps.shape != (2, len(self.paulis)):
            raise ValueError("epsilons must have shape (2, n_paulis)")
        lengths = {len(p) for p in self.paulis}
        if len(lengths) != 1:
            raise ValueError("all Pauli strings must have the same length")
        eps.setflags(write=False)
        object.__setattr__(self, "epsilons", eps)
        for t in (1, 2):
            for p, e in zip(self.paulis, eps[t - 1]):
                PauliTerm(p, t, float(e))

    @property
    def n_paulis(self) -> int:
        return len(self.paulis)

    @property
    def n_qubits(self) -> int:
        return len(self.paulis[0])

    def terms(self, layer_type: int) -> list[PauliTerm]:
        return [PauliTerm(p, layer_type, float(e)) for p, e in zip(self.paulis, self.epsilons[layer_type - 1])]

    @property
    def terms_by_layer_type(self) -> tuple[list[PauliTerm], list[PauliTerm]]:
        return self.terms(1), self.terms(2)

    def masks(self) -> tuple[np.ndarray, np.ndarray]:
        xs, zs = zip(*(pauli_masks(p) for p in self.paulis))
        return np.array(xs, dtype=np.int64), np.array(zs, dtype=np.int64)

    def scaled(self, factor: float) -> NoiseModel:
        return NoiseModel(self.paulis, self.epsilons * factor)


def parse_noise_params(text: str, source: str = "<string>") -> NoiseModel:
    """Parse the plain-text noise table format.

    One term per line, ``PAULI v1 v2``, with ``v = -ln(1 - 2 eps) / 2`` for
    layer types 1 and 2. Blank lines and ``#`` comments are skipped.
    """
    paulis, rows = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{source}:{lineno}: expected 'PAULI v1 v2', got {raw!r}")
        try:
            v = [float(parts[1]), float(parts[2])]
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: non-numeric rate in {raw!r}") from exc
        if any(x < 0 or not math.isfinite(x) for x in v):
            raise ValueError(f"{source}:{lineno}: rates must be finite and non-negative")
        try:
            support_of(parts[0])
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from exc
        paulis.append(parts[0])
        rows.append([epsilon_from_table_value(x) for x in v])
    if not paulis:
        raise ValueError(f"{source}: no noise terms found")
    eps = np.array(rows).T
    if np.any(eps >= 0.5):
        raise ValueError(f"{source}: error rate >= 0.5")
    try:
        return NoiseModel(tuple(paulis), eps)
    except ValueError as exc:
        raise ValueError(f"{source}: {exc}") from exc


def load_noise_params(path) -> NoiseModel:
    path = Path(path)
    return parse_noise_params(path.read_text(), str(path))


def shipped_noise(q: int) -> NoiseModel:
    """Noise parameters bundled with the package (``q`` is 4 or 10)."""
    name = f"noise_q{q}.txt"
    res = resources.files("qpdcv") / "data" / name
    if not res.is_file():
        raise ValueError(f"no bundled noise table for {q} qubits")
    return parse_noise_params(res.read_text(), name)


def resolve_noise(spec: str) -> NoiseModel:
    """``"builtin:q4"`` / ``"builtin:q10"`` or a filesystem path."""
    if spec.startswith("builtin:q"):
        return shipped_noise(int(spec[len("builtin:q"):]))
    return load_noise_params(spec)


# --- quasiprobability decomposition of the noise inverse -----------------------


@dataclass(frozen=True)
class PositionInfo:
    step: int
    occurrence: int  # noisy layer within the step, 0..3
    layer_type: int
    term: int

    @property
    def layer(self) -> int:
        """Global noisy-layer index."""
        return self.step * NOISY_LAYERS_PER_STEP + self.occurrence


@dataclass(frozen=True)
class PecDecomposition:
    """QPD of the inverse noise together with its circuit bookkeeping.

    ``m_total`` counts every (step, layer, term) slot; slots with zero error
    rate have no position in ``model``.
    """

    model: QpdModel
    positions: tuple[PositionInfo, ...]
    grouping: tuple[tuple[str, int], ...]
    m_total: int
    n_layers: int


def pec_coefficients(eps: float) -> np.ndarray:
    """``q`` for (not inserting, inserting) the Pauli that inverts one noise term."""
    d = 1.0 - 2.0 * eps
    return np.array([(1.0 - eps) / d, -eps / d])


def build_qpd(noise: NoiseModel, spec: IsingCircuitSpec) -> PecDecomposition:
    if noise.n_qubits != spec.q:
        raise ValueError(f"noise model is for {noise.n_qubits} qubits, circuit has {spec.q}")
    q_tables, infos, groups = [], [], []
    for step in range(spec.n_trot):
        for occ, lt in enumerate(LAYER_TYPES):
            for i, (pauli, eps) in enumerate(zip(noise.paulis, noise.epsilons[lt - 1])):
                if eps == 0.0:
                    continue
                q_tables.append(pec_coefficients(float(eps)))
                infos.append(PositionInfo(step, occ, lt, i))
                sup = support_of(pauli)
                groups.append(("single" if len(sup) == 1 else "pair", sup[0]))
    model = QpdModel.proportional(q_tables)
    n_layers = NOISY_LAYERS_PER_STEP * spec.n_trot
    return PecDecomposition(model, tuple(infos), tuple(groups), n_layers * noise.n_paulis, n_layers)


# --- circuit -------------------------------------------------------------------


@dataclass(frozen=True)
class Layer:
    kind: str  # "rx", "rz" or "cnot"
    qubits: tuple  # qubits for rx / rz, (control, target) pairs for cnot
    angle: float = 0.0
    layer_type: int = 0
    noisy_index: int = -1  # global noisy-layer index for cnot layers


def coupling_pairs(q: int, layer_type: int) -> tuple[tuple[int, int], ...]:
    """Even pairs ``(0,1), (2,3), ...`` for type 1, odd pairs ``(1,2), ...`` for type 2."""
    start = 0 if layer_type == 1 else 1
    return tuple((a, a + 1) for a in range(start, q - 1, 2))


def build_circuit(spec: IsingCircuitSpec) -> list[Layer]:
    layers = []
    noisy = 0
    for _ in range(spec.n_trot):
        layers.append(Layer("rx", tuple(range(spec.q)), spec.theta_x))
        for lt in (1, 2):
            pairs = coupling_pairs(spec.q, lt)
            targets = tuple(t for _, t in pairs)
            layers.append(Layer("cnot", pairs, layer_type=lt, noisy_index=noisy))
            layers.append(Layer("rz", targets, spec.theta_z))
            layers.append(Layer("cnot", pairs, layer_type=lt, noisy_index=noisy + 1))
            noisy += 2
    return layers


# --- batched statevector simulator ---------------------------------------------


class Simulator:
    """Applies a circuit to a batch of statevectors, shape ``(S, 2**Q)``.

    Pauli frames (one per batch row and noisy layer) are applied immediately
    before each noisy two-qubit layer.
    """

    def __init__(self, spec: IsingCircuitSpec):
        self.spec = spec
        self.q = spec.q
        self.dim = 1 << spec.q
        self.layers = build_circuit(spec)
        self.index = np.arange(self.dim, dtype=np.int64)
        self.parity = np.array([bin(i).count("1") & 1 for i in range(self.dim)], dtype=np.int8)
        self._perm = {}
        self._diag = {}
        self._dense = {}
        for layer in self.layers:
            if layer.kind == "cnot" and layer.qubits not in self._perm:
                self._perm[layer.qubits] = self._cnot_perm(layer.qubits)
            elif layer.kind == "rz" and (layer.qubits, layer.angle) not in self._diag:
                self._diag[layer.qubits, layer.angle] = self._rz_diag(layer.qubits, layer.angle)

    def bit(self, qubit: int) -> int:
        return self.q - 1 - qubit

    def _cnot_perm(self, pairs) -> np.ndarray:
        idx = self.index.copy()
        for c, t in pairs:
            cbit = (idx >> self.bit(c)) & 1
            idx = idx ^ (cbit << self.bit(t))
        return idx  # CNOT layer is an involution, so gather and scatter agree

    def _rz_diag(self, targets, angle) -> np.ndarray:
        phase = np.zeros(self.dim)
        for t in targets:
            b = (self.index >> self.bit(t)) & 1
            phase += np.where(b == 1, angle / 2.0, -angle / 2.0)
        return np.exp(1j * phase)

    def initial_state(self, batch: int = 1) -> np.ndarray:
        psi = np.zeros((batch, self.dim), dtype=complex)
        psi[:, 0] = 1.0
        return psi

    def apply_single(self, psi: np.ndarray, qubit: int, u: np.ndarray) -> np.ndarray:
        s = psi.shape[0]
        v = psi.reshape(s, 1 << qubit, 2, self.dim >> (qubit + 1))
        a0, a1 = v[:, :, 0, :], v[:, :, 1, :]
        out = np.empty_like(v)
        out[:, :, 0, :] = u[0, 0] * a0 + u[0, 1] * a1
        out[:, :, 1, :] = u[1, 0] * a0 + u[1, 1] * a1
        return out.reshape(s, self.dim)

    def apply_pauli(self, psi: np.ndarray, x, z) -> np.ndarray:
        """Apply ``X^x Z^z`` per row (global phases dropped)."""
        x = np.asarray(x, dtype=np.int64).reshape(-1, 1)
        z = np.asarray(z, dtype=np.int64).reshape(-1, 1)
        src = self.index[None, :] ^ x
        sign = 1 - 2 * self.parity[src & z]
        rows = np.arange(psi.shape[0])[:, None]
        return psi[rows, src] * sign

    def apply_all(self, psi: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Apply the same single-qubit gate to every qubit."""
        if self.q <= DENSE_MAX_QUBITS:
            key = u.tobytes()
            full = self._dense.get(key)
            if full is None:
                full = u
                for _ in range(self.q - 1):
                    full = np.kron(full, u)
                self._dense[key] = full
            return psi @ full.T
        for qb in range(self.q):
            psi = self.apply_single(psi, qb, u)
        return psi

    def run(self, psi: np.ndarray, frames=None) -> np.ndarray:
        """Evolve ``psi``; ``frames`` is ``(x, z)`` with shape ``(S, n_noisy_layers)``."""
        for layer in self.layers:
            if layer.kind == "rx":
                psi = self.apply_all(psi, rx_matrix(layer.angle))
            elif layer.kind == "rz":
                psi = psi * self._diag[layer.qubits, layer.angle]
            else:
                if frames is not None:
                    x, z = frames[0][:, layer.noisy_index], frames[1][:, layer.noisy_index]
                    if np.any(x) or np.any(z):
                        psi = self.apply_pauli(psi, x, z)
                psi = psi[:, self._perm[layer.qubits]]
        return psi

    def rotate_to_basis(self, psi: np.ndarray, basis: str) -> np.ndarray:
        if basis == "Z":
            return psi
        if basis != "Y":
            raise ValueError(f"unknown measurement basis {basis!r}")
        r = 1 / math.sqrt(2)
        u = np.array([[r, -1j * r], [r, 1j * r]])  # H . S^dagger
        return self.apply_all(psi, u)

    def final_state(self, basis: str = "Z", frames=None, batch: int = 1) -> np.ndarray:
        return self.rotate_to_basis(self.run(self.initial_state(batch), frames), basis)

    def exact_probabilities(self, basis: str = "Z") -> np.ndarray:
        return np.abs(self.final_state(basis)[0]) ** 2

    def bits_of(self, outcomes) -> np.ndarray:
        """Basis-state indices to ``(..., Q)`` arrays of +1/-1 outcomes."""
        outcomes = np.asarray(outcomes, dtype=np.int64)
        shifts = self.q - 1 - np.arange(self.q)
        return 1 - 2 * ((outcomes[..., None] >> shifts) & 1)


def rx_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def sample_outcomes(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling, one outcome per row of ``probs``."""
    cdf = np.cumsum(probs, axis=-1)
    cdf /= cdf[..., -1:]
    return np.minimum((cdf < u[..., None]).sum(axis=-1), probs.shape[-1] - 1)


# --- observables ---------------------------------------------------------------


def observable_names(q: int) -> list[str]:
    return [f"w{k}" for k in range(1, q + 1)] + ["nn"]


def observable_value(bits, kind) -> np.ndarray:
    """Averaged weight-``kappa`` value (``kind`` an int or ``"wK"``) or ``"nn"``.

    ``bits`` has shape ``(..., Q)`` with entries +1/-1.
    """
    bits = np.asarray(bits, dtype=float)
    q = bits.shape[-1]
    if kind in ("nn", "two_nearest"):
        return np.mean(bits[..., 1:] * bits[..., :-1], axis=-1)
    kappa = int(kind[1:]) if isinstance(kind, str) else int(kind)
    if not 1 <= kappa <= q:
        raise ValueError(f"weight {kappa} out of range 1..{q}")
    return elementary_symmetric(bits)[..., kappa] / math.comb(q, kappa)


def all_observables(bits) -> np.ndarray:
    """Every observable of :func:`observable_names`, shape ``(..., Q + 1)``."""
    bits = np.asarray(bits, dtype=float)
    q = bits.shape[-1]
    e = elementary_symmetric(bits)[..., 1:]
    norm = np.array([math.comb(q, k) for k in range(1, q + 1)], dtype=float)
    nn = np.mean(bits[..., 1:] * bits[..., :-1], axis=-1)
    return np.concatenate([e / norm, nn[..., None]], axis=-1)


# --- PEC trajectories ------------------------------------------------------------


@dataclass(frozen=True)
class ShotRecord:
    """Per-basis shot means and sample variances of every observable."""

    mean: dict
    var: dict
    n_shots: int


class PecRunner:
    """Runs sampled mitigation instances of one circuit under trajectory noise."""

    def __init__(self, spec: IsingCircuitSpec, noise: NoiseModel, pec: PecDecomposition | None = None):
        self.spec = spec
        self.noise = noise
        self.pec = pec if pec is not None else build_qpd(noise, spec)
        self.sim = Simulator(spec)
        self.term_x, self.term_z = noise.masks()
        shifts = np.arange(spec.q)
        self._term_bits = np.concatenate(
            [(self.term_x[:, None] >> shifts) & 1, (self.term_z[:, None] >> shifts) & 1], axis=1
        ).astype(np.float32)
        self._bit_values = np.zeros((2 * spec.q, 2), dtype=np.int64)
        self._bit_values[: spec.q, 0] = 1 << shifts
        self._bit_values[spec.q :, 1] = 1 << shifts
        types = np.array([LAYER_TYPES[i % NOISY_LAYERS_PER_STEP] for i in range(self.pec.n_layers)])
        self.layer_eps = noise.epsilons[types - 1]  # (n_layers, n_paulis)
        self._pos_layer = np.array([p.layer for p in self.pec.positions], dtype=np.int64)
        self._pos_term = np.array([p.term for p in self.pec.positions], dtype=np.int64)
        values = all_observables(self.sim.bits_of(self.sim.index))
        self.outcome_values = values  # (2**Q, n_obs)

    def insertion_frames(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """Per-layer Pauli masks inserted by one instance (index 1 = insert)."""
        x = np.zeros(self.pec.n_layers, dtype=np.int64)
        z = np.zeros(self.pec.n_layers, dtype=np.int64)
        hit = np.flatnonzero(np.asarray(indices) == 1)
        np.bitwise_xor.at(x, self._pos_layer[hit], self.term_x[self._pos_term[hit]])
        np.bitwise_xor.at(z, self._pos_layer[hit], self.term_z[self._pos_term[hit]])
        return x, z

    def noise_frames(self, rng: np.random.Generator, n_shots: int) -> tuple[np.ndarray, np.ndarray]:
        """One Bernoulli draw per term, noisy layer and shot, folded per layer."""
        fire = rng.random((n_shots,) + self.layer_eps.shape) < self.layer_eps
        # XOR of the fired masks = per-bit parity of fired terms
        parity = (fire.astype(np.float32) @ self._term_bits).astype(np.int64) & 1
        folded = parity @ self._bit_values
        return folded[..., 0], folded[..., 1]

    def shot_observables(self, indices, basis: str, n_shots: int, rng: np.random.Generator,
                         noisy: bool = True) -> np.ndarray:
        """Observable values of ``n_shots`` single shots, shape ``(n_shots, n_obs)``."""
        if noisy:
            x, z = self.noise_frames(rng, n_shots)
        else:
            x = np.zeros((n_shots, self.pec.n_layers), dtype=np.int64)
            z = np.zeros_like(x)
        if indices is not None:
            px, pz = self.insertion_frames(indices)
            x, z = x ^ px, z ^ pz
        psi = self.sim.final_state(basis, (x, z), batch=n_shots)
        outcomes = sample_outcomes(np.abs(psi) ** 2, rng.random(n_shots))
        return self.outcome_values[outcomes]

    def run_instance(self, indices, n_shots: int, bases, rng: np.random.Generator) -> ShotRecord:
        if n_shots < 2:
            raise ValueError("n_shots must be at least 2")
        mean, var = {}, {}
        for basis in bases:
            vals = self.shot_observables(indices, basis, n_shots, rng)
            mean[basis] = vals.mean(axis=0)
            var[basis] = vals.var(axis=0, ddof=1)
        return ShotRecord(mean, var, n_shots)

    def exact_expectations(self, basis: str) -> np.ndarray:
        """Noiseless expectation of every observable."""
        return self.sim.exact_probabilities(basis) @ self.outcome_values


def simulate_shot(runner: PecRunner, indices, basis: str, rng: np.random.Generator) -> np.ndarray:
    """One trajectory shot; returns the +1/-1 outcome of each qubit."""
    x, z = runner.noise_frames(rng, 1)
    if indices is not None:
        px, pz = runner.insertion_frames(indices)
        x, z = x ^ px, z ^ pz
    psi = runner.sim.final_state(basis, (x, z))
    out = sample_outcomes(np.abs(psi) ** 2, rng.random(1))
    return runner.sim.bits_of(out)[0]
