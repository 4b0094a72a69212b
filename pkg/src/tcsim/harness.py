"""Discrete-event simulation of the two-module optical apparatus.

Generates time-tag streams from pulse sequences: optical pumping, microwave
pulses, pulsed excitation, emission with branching, lossy collection,
beamsplitter routing with amplitude-level two-photon interference, detector
gating, dark counts and dead time.

Randomness is reproducible per shot: every shot uses its own Philox stream
keyed by (seed, shot index), so results are byte-identical no matter how
shots are partitioned across workers.
"""

from __future__ import annotations

import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .emitter import MHZ_NS, TWO_PI, EmitterParams

D1 = 1
D2 = 2

MODULE_1 = "m1"
MODULE_2 = "m2"

PS_PER_NS = 1000

DEFAULT_DEAD_TIME_NS = 30.0
HOM_DISTINGUISHABLE_DELAY_NS = 500.0
BK_EARLY_LATE_SEPARATION_NS = 1910.0

KIND_PUMP = "optical_pump"
KIND_EXCITE = "optical_excite"
KIND_MW = "mw_pulse"
KIND_RF = "rf_pulse"
KIND_GATE = "detect_gate"
KIND_DELAY = "delay"
KIND_READOUT = "readout"

_KINDS = {KIND_PUMP, KIND_EXCITE, KIND_MW, KIND_RF, KIND_GATE, KIND_DELAY,
          KIND_READOUT}

_CHANNELS = {KIND_PUMP: "optical", KIND_EXCITE: "optical", KIND_MW: "mw",
             KIND_RF: "rf", KIND_GATE: "detect", KIND_READOUT: "optical"}


class SequenceError(ValueError):
    """A pulse sequence violates its invariants."""


@dataclass(frozen=True)
class OpticalPath:
    """Loss chain, detector properties and gating for one module's photons.

    Loss elements are stored as non-positive dB values. The per-pulse
    excitation probability is a drive property, not an optical transmission,
    and is kept separate from the chain.
    """

    elements: tuple = ()
    detector_efficiency: float = 1.0
    dark_rate_hz: float = 0.0
    excitation_probability: float = 1.0
    apply_detector_efficiency: bool = True
    dead_time_ns: float = DEFAULT_DEAD_TIME_NS
    latency_ns: float = 0.0

    def __post_init__(self):
        elems = tuple((str(label), float(db)) for label, db in self.elements)
        for label, db in elems:
            if db > 0:
                raise ValueError(f"loss element {label!r} must be <= 0 dB")
        object.__setattr__(self, "elements", elems)
        if not 0 < self.detector_efficiency <= 1:
            raise ValueError("detector efficiency must be in (0, 1]")
        if not 0 <= self.excitation_probability <= 1:
            raise ValueError("excitation probability must be in [0, 1]")
        if self.dark_rate_hz < 0 or self.dead_time_ns < 0:
            raise ValueError("rates and dead time must be non-negative")
        if not 0 < self.transmission() <= 1:
            raise ValueError("total transmission must lie in (0, 1]")

    def transmission(self) -> float:
        return float(10.0 ** (sum(db for _, db in self.elements) / 10.0))

    def detection_probability(self) -> float:
        """Probability that an emitted photon produces a detector click."""
        eta = self.transmission()
        if self.apply_detector_efficiency:
            eta *= self.detector_efficiency
        return eta

    @classmethod
    def from_db_table(cls, losses, excitation_db: float, **kwargs) -> "OpticalPath":
        return cls(elements=tuple(losses),
                   excitation_probability=10.0 ** (excitation_db / 10.0),
                   **kwargs)


@dataclass(frozen=True)
class PulseElement:
    kind: str
    start_ns: float
    duration_ns: float
    module: str | None = None
    angle: float | None = None
    selective: bool = False

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SequenceError(f"unknown element kind {self.kind!r}")
        if self.start_ns < 0 or self.duration_ns < 0:
            raise SequenceError("element times must be non-negative")

    @property
    def end_ns(self) -> float:
        return self.start_ns + self.duration_ns


@dataclass(frozen=True)
class PulseSequence:
    """Ordered timed elements; non-overlapping per physical channel."""

    elements: tuple

    def __post_init__(self):
        elems = tuple(sorted(self.elements, key=lambda e: (e.start_ns, e.kind)))
        object.__setattr__(self, "elements", elems)
        by_channel = {}
        for e in elems:
            if e.kind == KIND_DELAY:
                continue
            key = (_CHANNELS[e.kind], e.module)
            by_channel.setdefault(key, []).append(e)
        for (channel, module), group in by_channel.items():
            for a, b in zip(group, group[1:]):
                if b.start_ns < a.end_ns - 1e-9:
                    raise SequenceError(
                        f"overlapping {channel} elements on module {module}: "
                        f"{a.start_ns}-{a.end_ns} and {b.start_ns}-{b.end_ns}")

    @property
    def duration_ns(self) -> float:
        return max((e.end_ns for e in self.elements), default=0.0)

    def gates(self):
        return [e for e in self.elements if e.kind == KIND_GATE]

    def excitations(self, module=None):
        return [e for e in self.elements if e.kind == KIND_EXCITE and
                (module is None or e.module == module)]


@dataclass(frozen=True)
class TagStream:
    """Columnar timestamped detector clicks.

    Timestamps are integer picoseconds from experiment start; the exported
    CSV representation is nanoseconds.
    """

    shots: np.ndarray
    detectors: np.ndarray
    timestamps_ps: np.ndarray
    n_shots: int = 0
    shot_period_ns: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.shots, dtype=np.uint32)
        d = np.asarray(self.detectors, dtype=np.uint8)
        t = np.asarray(self.timestamps_ps, dtype=np.uint64)
        if not (s.shape == d.shape == t.shape):
            raise ValueError("column lengths differ")
        for arr in (s, d, t):
            arr.setflags(write=False)
        object.__setattr__(self, "shots", s)
        object.__setattr__(self, "detectors", d)
        object.__setattr__(self, "timestamps_ps", t)

    @property
    def size(self) -> int:
        return int(self.shots.size)

    def timestamps_ns(self) -> np.ndarray:
        return self.timestamps_ps.astype(np.float64) / PS_PER_NS

    def in_shot_times_ns(self) -> np.ndarray:
        period_ps = np.uint64(round(self.shot_period_ns * PS_PER_NS))
        return (self.timestamps_ps - self.shots.astype(np.uint64) * period_ps) \
            .astype(np.float64) / PS_PER_NS

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("shot,detector,timestamp_ns\n")
            ns = self.timestamps_ns()
            for s, d, t in zip(self.shots, self.detectors, ns):
                fh.write(f"{s},{d},{t:.3f}\n")

    @classmethod
    def from_csv(cls, path, n_shots=0, shot_period_ns=0.0) -> "TagStream":
        data = np.genfromtxt(path, delimiter=",", skip_header=1,
                             dtype=float, ndmin=2)
        if data.size == 0:
            data = data.reshape(0, 3)
        return cls(data[:, 0].astype(np.uint32), data[:, 1].astype(np.uint8),
                   np.round(data[:, 2] * PS_PER_NS).astype(np.uint64),
                   n_shots, shot_period_ns)

    def to_binary(self, path) -> None:
        rec = struct.Struct("<IBQ")
        with open(path, "wb") as fh:
            for s, d, t in zip(self.shots, self.detectors, self.timestamps_ps):
                fh.write(rec.pack(int(s), int(d), int(t)))

    @classmethod
    def from_binary(cls, path, n_shots=0, shot_period_ns=0.0) -> "TagStream":
        rec = struct.Struct("<IBQ")
        shots, dets, ts = [], [], []
        with open(path, "rb") as fh:
            blob = fh.read()
        for off in range(0, len(blob), rec.size):
            s, d, t = rec.unpack_from(blob, off)
            shots.append(s)
            dets.append(d)
            ts.append(t)
        return cls(np.array(shots, dtype=np.uint32),
                   np.array(dets, dtype=np.uint8),
                   np.array(ts, dtype=np.uint64), n_shots, shot_period_ns)

    @classmethod
    def concatenate(cls, parts, n_shots, shot_period_ns) -> "TagStream":
        shots = np.concatenate([p.shots for p in parts]) if parts else np.empty(0)
        dets = np.concatenate([p.detectors for p in parts]) if parts else np.empty(0)
        ts = np.concatenate([p.timestamps_ps for p in parts]) if parts else np.empty(0)
        return cls(shots, dets, ts, n_shots, shot_period_ns)


# ---------------------------------------------------------------------------
# sequence builders

def build_hom_sequence(indistinguishable: bool,
                       delay_ns: float = HOM_DISTINGUISHABLE_DELAY_NS,
                       gate_ns: float = 130.0,
                       pump_ns: float = 2000.0,
                       pi_pulse_ns: float = 50.0) -> PulseSequence:
    """Two-photon interference sequence.

    Both modules are pumped, flipped back into resonance by a pi pulse and
    excited. The distinguishable variant delays module 2's excitation so the
    photons arrive in separate windows; analysis realigns them afterwards.
    """
    t_pi = pump_ns + 50.0
    t_exc = t_pi + pi_pulse_ns + 50.0
    elements = [
        PulseElement(KIND_PUMP, 0.0, pump_ns, MODULE_1),
        PulseElement(KIND_PUMP, 0.0, pump_ns, MODULE_2),
        PulseElement(KIND_MW, t_pi, pi_pulse_ns, MODULE_1, angle=np.pi),
        PulseElement(KIND_MW, t_pi, pi_pulse_ns, MODULE_2, angle=np.pi),
        PulseElement(KIND_EXCITE, t_exc, 2.0, MODULE_1),
    ]
    if indistinguishable:
        elements.append(PulseElement(KIND_EXCITE, t_exc, 2.0, MODULE_2))
        elements.append(PulseElement(KIND_GATE, t_exc, gate_ns))
    else:
        elements.append(PulseElement(KIND_EXCITE, t_exc + delay_ns, 2.0, MODULE_2))
        elements.append(PulseElement(KIND_GATE, t_exc, gate_ns))
        elements.append(PulseElement(KIND_GATE, t_exc + delay_ns, gate_ns))
    return PulseSequence(tuple(elements))


def build_bk_sequence(early_late_separation_ns: float = BK_EARLY_LATE_SEPARATION_NS,
                      gate_ns: float = 130.0,
                      pump_ns: float = 2000.0,
                      pi_pulse_ns: float = 50.0,
                      basis_angle: float | None = None) -> PulseSequence:
    """Two-round heralded entanglement sequence.

    Initialization pumping, pi/2 preparation, early excitation plus gate, a
    pi pulse, then the late excitation exactly the configured separation
    after the early one, its gate, an optional basis-selection pulse and the
    readout block. The herald requires at least one click in each gate.
    """
    t_half = pump_ns + 50.0
    t_early = t_half + pi_pulse_ns / 2.0 + 50.0
    t_late = t_early + early_late_separation_ns
    t_pi = t_early + gate_ns + 50.0
    if t_pi + pi_pulse_ns > t_late:
        raise SequenceError("gate and pi pulse do not fit between rounds")
    elements = [
        PulseElement(KIND_PUMP, 0.0, pump_ns, MODULE_1),
        PulseElement(KIND_PUMP, 0.0, pump_ns, MODULE_2),
        PulseElement(KIND_MW, t_half, pi_pulse_ns / 2.0, MODULE_1, angle=np.pi / 2),
        PulseElement(KIND_MW, t_half, pi_pulse_ns / 2.0, MODULE_2, angle=np.pi / 2),
        PulseElement(KIND_EXCITE, t_early, 1.0, MODULE_1),
        PulseElement(KIND_EXCITE, t_early, 1.0, MODULE_2),
        PulseElement(KIND_GATE, t_early, gate_ns),
        PulseElement(KIND_MW, t_pi, pi_pulse_ns, MODULE_1, angle=np.pi),
        PulseElement(KIND_MW, t_pi, pi_pulse_ns, MODULE_2, angle=np.pi),
        PulseElement(KIND_EXCITE, t_late, 1.0, MODULE_1),
        PulseElement(KIND_EXCITE, t_late, 1.0, MODULE_2),
        PulseElement(KIND_GATE, t_late, gate_ns),
    ]
    t_readout = t_late + gate_ns + 50.0
    if basis_angle is not None:
        elements.append(PulseElement(KIND_MW, t_readout, pi_pulse_ns,
                                     MODULE_1, angle=basis_angle))
        elements.append(PulseElement(KIND_MW, t_readout, pi_pulse_ns,
                                     MODULE_2, angle=basis_angle))
        t_readout += pi_pulse_ns + 50.0
    elements.append(PulseElement(KIND_READOUT, t_readout, 1000.0))
    return PulseSequence(tuple(elements))


# ---------------------------------------------------------------------------
# simulation core

_STREAM_EMISSION = 0
_STREAM_SURVIVAL = 1
_STREAM_ROUTING = 2
_STREAM_DARKS = 3
_N_STREAMS = 4


def _shot_rng(seed: int, shot: int, stream: int) -> np.random.Generator:
    key = [seed & 0xFFFFFFFFFFFFFFFF, shot * _N_STREAMS + stream]
    return np.random.Generator(np.random.Philox(key=key))


def _poisson_small(rng, lam: float) -> int:
    """Inverse-CDF Poisson draw; intended for lam well below 1."""
    u = rng.random()
    k, p, cum = 0, np.exp(-lam), np.exp(-lam)
    while u > cum and k < 100:
        k += 1
        p *= lam / k
        cum += p
    return k


def _pair_coherence(m1: EmitterParams, m2: EmitterParams, dt_ns: float,
                    df_mhz: float) -> float:
    """Instantaneous interference contrast for two photons dt apart."""
    pol = np.cos(np.radians(m1.polarization_mismatch_deg)) * \
        np.cos(np.radians(m2.polarization_mismatch_deg))
    deph = np.exp(-TWO_PI * (m1.pure_dephasing_mhz + m2.pure_dephasing_mhz)
                  * MHZ_NS * abs(dt_ns))
    beat = np.cos(TWO_PI * df_mhz * MHZ_NS * dt_ns)
    return float(pol * deph * beat)


def _simulate_range(seq: PulseSequence, paths: dict, emitters: dict,
                    shot_lo: int, shot_hi: int, seed: int):
    modules = sorted(emitters)
    gates = seq.gates()
    if any(e.kind == KIND_EXCITE for e in seq.elements) and not gates:
        raise SequenceError("sequence excites but has no detection gate")
    period_ns = float(np.ceil(seq.duration_ns + 100.0))
    dark_rate = max(paths[m].dark_rate_hz for m in modules)
    dead = max(paths[m].dead_time_ns for m in modules)

    out_shot, out_det, out_ts = [], [], []
    for shot in range(shot_lo, shot_hi):
        rng_e = _shot_rng(seed, shot, _STREAM_EMISSION)
        spin = {m: True for m in modules}
        detuning = {}
        for m in modules:
            detuning[m] = float(emitters[m].sample_detuning_mhz(
                rng_e.random(), ndtri(min(max(rng_e.random(), 1e-16),
                                          1 - 1e-16))))
        photons = []  # (arrival_ns, module, photon_index)
        for e in seq.elements:
            if e.kind == KIND_PUMP:
                spin[e.module] = False
            elif e.kind == KIND_MW:
                if e.angle is not None and abs(e.angle - np.pi / 2) < 1e-9:
                    spin[e.module] = bool(rng_e.random() < 0.5)
                else:
                    spin[e.module] = not spin[e.module]
            elif e.kind == KIND_EXCITE:
                m = e.module
                em = emitters[m]
                if not spin[m]:
                    continue
                if rng_e.random() >= paths[m].excitation_probability:
                    continue
                if rng_e.random() < em.br_radiative + em.br_nonradiative:
                    spin[m] = False  # decay into the other spin branch
                    continue
                t0 = e.start_ns + em.desync_ns + paths[m].latency_ns
                photons.append((t0 - em.lifetime_ns * np.log(rng_e.random()),
                                m, len(photons)))
                if rng_e.random() < em.pair_emission_probability:
                    photons.append(
                        (t0 - em.lifetime_ns * np.log(rng_e.random()),
                         m, len(photons)))
        # per-photon uniforms from dedicated streams keep draws aligned when
        # only losses change between runs
        rng_s = _shot_rng(seed, shot, _STREAM_SURVIVAL)
        rng_r = _shot_rng(seed, shot, _STREAM_ROUTING)
        rng_d = _shot_rng(seed, shot, _STREAM_DARKS)
        n_ph = len(photons)
        survival_u = rng_s.random(n_ph) if n_ph else np.empty(0)
        routing_u = rng_r.random((n_ph, 2)) if n_ph else np.empty((0, 2))

        clicks = {D1: [], D2: []}
        for gate in gates:
            in_gate = [(t, m, i) for (t, m, i) in photons
                       if gate.start_ns <= t < gate.end_ns and
                       survival_u[i] < paths[m].detection_probability()]
            in_gate.sort()
            if len(in_gate) == 2 and in_gate[0][1] != in_gate[1][1]:
                (ta, ma, ia), (tb, mb, _ib) = in_gate
                coh = _pair_coherence(emitters[ma], emitters[mb],
                                      tb - ta, detuning[ma] - detuning[mb])
                p_diff = 0.5 * (1.0 - coh)
                if routing_u[ia, 0] < p_diff:
                    first = D1 if routing_u[ia, 1] < 0.5 else D2
                    clicks[first].append(ta)
                    clicks[D2 if first == D1 else D1].append(tb)
                else:
                    det = D1 if routing_u[ia, 1] < 0.5 else D2
                    clicks[det].append(ta)
                    clicks[det].append(tb)
            else:
                for (t, m, i) in in_gate:
                    det = D1 if routing_u[i, 0] < 0.5 else D2
                    clicks[det].append(t)
            lam = dark_rate * gate.duration_ns * 1e-9
            for det in (D1, D2):
                for _ in range(_poisson_small(rng_d, lam)):
                    clicks[det].append(gate.start_ns +
                                       rng_d.random() * gate.duration_ns)
        base_ps = shot * int(round(period_ns * PS_PER_NS))
        for det in (D1, D2):
            last = -np.inf
            for t in sorted(clicks[det]):
                if t - last < dead:
                    continue
                last = t
                out_shot.append(shot)
                out_det.append(det)
                out_ts.append(base_ps + int(round(t * PS_PER_NS)))
    return (np.array(out_shot, dtype=np.uint32),
            np.array(out_det, dtype=np.uint8),
            np.array(out_ts, dtype=np.uint64), period_ns)


def _worker(args):
    seq, paths, emitters, lo, hi, seed = args
    return _simulate_range(seq, paths, emitters, lo, hi, seed)


def run_sequence(seq: PulseSequence, paths: dict, emitters: dict,
                 shots: int, seed: int, workers: int = 1) -> TagStream:
    """Simulate the sequence for the given number of shots.

    Deterministic for fixed (seq, paths, emitters, shots, seed) and
    independent of the worker count: each shot has its own keyed random
    stream and results merge in shot order.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if set(paths) != set(emitters):
        raise SequenceError("paths and emitters must cover the same modules")
    if workers <= 1 or shots < 4 * workers:
        s, d, t, period = _simulate_range(seq, paths, emitters, 0, shots, seed)
        return TagStream(s, d, t, shots, period)
    bounds = np.linspace(0, shots, workers + 1).astype(int)
    jobs = [(seq, paths, emitters, int(lo), int(hi), seed)
            for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_worker, jobs))
    parts = [TagStream(s, d, t) for (s, d, t, _) in results]
    period = results[0][3]
    return TagStream.concatenate(parts, shots, period)


# ---------------------------------------------------------------------------
# herald extraction

@dataclass(frozen=True)
class HeraldCounts:
    """Per-pattern herald tallies extracted from a BK tag stream."""

    n_shots: int
    heralds: int
    pattern_counts: dict
    ambiguous: int

    @property
    def herald_probability(self) -> float:
        return self.heralds / self.n_shots if self.n_shots else 0.0


def bk_heralds(stream: TagStream, seq: PulseSequence) -> HeraldCounts:
    """Herald statistics: at least one click in each of the two gates.

    Shots where a gate fired on both detectors are counted as heralds but
    tallied as ambiguous rather than under a two-detector pattern.
    """
    gates = seq.gates()
    if len(gates) != 2:
        raise SequenceError("expected exactly two detection gates")
    early, late = gates
    t = stream.in_shot_times_ns()
    in_early = (t >= early.start_ns) & (t < early.end_ns)
    in_late = (t >= late.start_ns) & (t < late.end_ns)
    patterns = {}
    heralds = 0
    ambiguous = 0
    for shot in range(stream.n_shots):
        m = stream.shots == shot
        d_early = set(stream.detectors[m & in_early].tolist())
        d_late = set(stream.detectors[m & in_late].tolist())
        if d_early and d_late:
            heralds += 1
            if len(d_early) == 1 and len(d_late) == 1:
                key = (d_early.pop(), d_late.pop())
                patterns[key] = patterns.get(key, 0) + 1
            else:
                ambiguous += 1
    return HeraldCounts(stream.n_shots, heralds, patterns, ambiguous)
