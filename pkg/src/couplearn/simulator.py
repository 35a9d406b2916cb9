"""Seeded single-trajectory rollouts, distance streams and the empirical distance law."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import (CouplingDomainError, CouplingFunction, NetworkSpec, contractivity,
                      neighbor_displacements, relative_displacements, spectral_deviation)

log = logging.getLogger(__name__)

DEFAULT_BINS = 100
DEFAULT_BURN_IN = 1000
KL_SMOOTHING = 1e-12
_NOISE_CHUNK = 4096
_DIVERGED = 1e100


class SimulationDomainError(CouplingDomainError):
    """Coupling singularity hit during a rollout; carries the offending step and pair."""

    def __init__(self, t: int, i: int, j: int, r: float, cause: Exception):
        self.t, self.i, self.j, self.r = t, i, j, r
        super().__init__(f"step {t}: pair ({i}, {j}) at distance {r:.6g}: {cause}")


class SimulationDiverged(ArithmeticError):
    """The state left the finite range (e.g. a learned coupling that is not stabilizing)."""

    def __init__(self, t: int):
        self.t = t
        super().__init__(f"state diverged at step {t}")



def fingerprint(spec: NetworkSpec, phi: CouplingFunction, seed: int, burn_in: int = 0) -> str:
    payload = json.dumps({"spec": spec.to_dict(), "phi": phi.to_dict(), "seed": int(seed),
                          "burn_in": int(burn_in)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(eq=False)
class Trajectory:
    states: np.ndarray          # (T // thin + 1, n*d)
    T: int
    seed: int
    h: float
    n: int
    d: int
    spec_fingerprint: str = ""
    thin: int = 1
    burn_in: int = 0
    contractive: bool = True
    hist: "DistanceHistogram | None" = None   # full-rate distance counts when requested

    def __len__(self):
        return len(self.states)

    def prefix(self, T: int) -> "Trajectory":
        """The first T steps (T + 1 states) of this trajectory."""
        if self.thin != 1:
            raise ValueError("prefixes of thinned trajectories are not supported")
        if not 1 <= T <= self.T:
            raise ValueError(f"prefix length {T} not in [1, {self.T}]")
        return Trajectory(self.states[: T + 1], T, self.seed, self.h, self.n, self.d,
                          self.spec_fingerprint, 1, self.burn_in, self.contractive)


def initial_state(spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    """Offset plus i.i.d. uniform agent states in the cube inscribed in the R0 ball."""
    half = spec.R0 / math.sqrt(spec.d)
    y0 = rng.uniform(-half, half, size=spec.n * spec.d) if half > 0 else np.zeros(spec.n * spec.d)
    return spec.equilibrium_offset + y0


def _locate_domain_error(Y, spec, phi, t, err):
    diff, r = neighbor_displacements(Y, spec)
    for i in range(spec.n):
        for m in range(spec.neighbors.shape[1]):
            if spec.neighbor_weights[i, m] == 0:
                continue
            try:
                phi(r[i, m])
            except CouplingDomainError:
                return SimulationDomainError(t, i, int(spec.neighbors[i, m]), float(r[i, m]), err)
    return SimulationDomainError(t, -1, -1, float("nan"), err)


def simulate(spec: NetworkSpec, phi: CouplingFunction, T: int, seed: int,
             burn_in: int = DEFAULT_BURN_IN, thin: int = 1, x0=None,
             hist_R: float | None = None, hist_bins: int = DEFAULT_BINS) -> Trajectory:
    """Roll the network forward T steps after ``burn_in`` discarded steps.

    The generator draws x0 first (unless given), then the noise in order, so
    the first T steps of a longer run with the same seed coincide with a
    shorter one.  With ``hist_R`` set, pair distances of every step are
    binned at full rate regardless of ``thin``.
    """
    if T < 1:
        raise ValueError("T must be positive")
    if burn_in < 0 or thin < 1:
        raise ValueError("burn_in must be >= 0 and thin >= 1")
    c = contractivity(spec, phi)
    if not c.contractive:
        log.warning("step size h=%g exceeds the contractivity bound %g; proceeding", spec.h, c.h_max)

    rng = np.random.default_rng(seed)
    x = initial_state(spec, rng) if x0 is None else np.array(x0, dtype=float).ravel()
    if x.shape != (spec.n * spec.d,):
        raise ValueError("x0 has the wrong length")
    b = spec.equilibrium_offset
    Y = (x - b).reshape(spec.n, spec.d).copy()
    h = spec.h
    W = spec.neighbor_weights
    nbr = spec.neighbors
    a = spec.noise.component_amplitude(spec.d)
    total = burn_in + T
    out = np.empty((T // thin + 1, spec.n * spec.d))
    counts = np.zeros(hist_bins, dtype=np.int64) if hist_R is not None else None
    overflow = 0
    ei, ej = spec.edges[:, 0], spec.edges[:, 1]
    noff = spec.neighbor_offsets
    raw = spec.distance_from == "state"

    def bin_step(Yc):
        nonlocal overflow
        r = np.sqrt(((Yc[ej] - Yc[ei] + spec.edge_offsets) ** 2).sum(-1))
        idx = np.minimum(r * (hist_bins / hist_R), hist_bins - 1).astype(np.int64)
        overflow += int(np.count_nonzero(r > hist_R))
        np.add.at(counts, idx, 1)

    noise = None
    for t in range(total):
        k = t % _NOISE_CHUNK
        if k == 0:
            size = min(_NOISE_CHUNK, total - t)
            noise = rng.uniform(-a, a, size=(size, spec.n, spec.d)) if a > 0 else \
                np.zeros((size, spec.n, spec.d))
        s = t - burn_in
        if s >= 0:
            if s % thin == 0:
                out[s // thin] = (Y.ravel() + b)
            if counts is not None:
                bin_step(Y)
        diff = Y[nbr] - Y[:, None, :]
        dr = diff + noff if raw else diff
        r = np.sqrt((dr * dr).sum(-1))
        try:
            wr = W * phi(r)
        except CouplingDomainError as err:
            raise _locate_domain_error(Y, spec, phi, t - burn_in, err) from None
        Y += h * (np.einsum("im,imk->ik", wr, diff) + noise[k])
        if not np.abs(Y).max() < _DIVERGED:
            raise SimulationDiverged(t - burn_in)
    if T % thin == 0:
        out[-1] = Y.ravel() + b

    traj = Trajectory(out, T, int(seed), h, spec.n, spec.d,
                      fingerprint(spec, phi, seed, burn_in), thin, burn_in, c.contractive)
    if counts is not None:
        traj.hist = DistanceHistogram.from_counts(counts, hist_R, overflow)
    return traj


def empirical_zeta(traj: Trajectory, spec: NetworkSpec, phi: CouplingFunction,
                   stride: int = 1) -> float:
    """Largest observed max(|1 - h lambda_2|, |1 - h lambda_max|) along the trajectory."""
    return max(spectral_deviation(x, spec, phi) for x in traj.states[::stride])


# ---------------------------------------------------------------------------
# distance streams and histograms
# ---------------------------------------------------------------------------

def distance_stream(traj: Trajectory, spec: NetworkSpec):
    """Yield (t, i, j, r_vec, r) for every edge at every stored step t < T."""
    for s in range(len(traj.states) - 1 if traj.thin == 1 else len(traj.states)):
        t = s * traj.thin
        if t >= traj.T:
            break
        for i, j, rv, r in relative_displacements(traj.states[s], spec):
            yield t, i, j, rv, r


def pair_distances(states: np.ndarray, spec: NetworkSpec) -> np.ndarray:
    """Edge distances for a batch of states, shape (len(states), N_e)."""
    Y = (np.atleast_2d(states) - spec.equilibrium_offset).reshape(-1, spec.n, spec.d)
    i, j = spec.edges[:, 0], spec.edges[:, 1]
    return np.linalg.norm(Y[:, j] - Y[:, i] + spec.edge_offsets, axis=-1)


@dataclass(eq=False)
class DistanceHistogram:
    edges: np.ndarray
    counts: np.ndarray
    R: float
    overflow: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, counts, R, overflow=0):
        counts = np.asarray(counts)
        return cls(np.linspace(0.0, R, len(counts) + 1), counts, float(R), int(overflow))

    @property
    def B(self) -> int:
        return len(self.counts)

    @property
    def samples(self) -> int:
        return int(self.counts.sum())

    @property
    def mass(self) -> np.ndarray:
        total = self.counts.sum()
        if total == 0:
            raise ValueError("empty histogram has no mass")
        return self.counts / total

    @property
    def centers(self) -> np.ndarray:
        return (self.edges[:-1] + self.edges[1:]) / 2

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def density(self) -> np.ndarray:
        return self.mass / self.widths

    def same_grid(self, other: "DistanceHistogram") -> bool:
        return self.B == other.B and np.allclose(self.edges, other.edges, rtol=0, atol=1e-15)

    def __add__(self, other: "DistanceHistogram") -> "DistanceHistogram":
        if not self.same_grid(other):
            raise ValueError("cannot merge histograms on different grids")
        return DistanceHistogram(self.edges.copy(), self.counts + other.counts, self.R,
                                 self.overflow + other.overflow)

    def to_csv(self, header_comments: dict | None = None) -> str:
        buf = io.StringIO()
        for k, v in (header_comments or {}).items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "mass"])
        for lo, hi, m in zip(self.edges[:-1], self.edges[1:], self.mass):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(m))])
        return buf.getvalue()

    @classmethod
    def read_csv(cls, path) -> "DistanceHistogram":
        rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
        data = list(csv.DictReader(rows))
        lo = np.array([float(r["bin_left"]) for r in data])
        hi = np.array([float(r["bin_right"]) for r in data])
        mass = np.array([float(r["mass"]) for r in data])
        return cls(np.append(lo, hi[-1]), mass, float(hi[-1]))


def histogram_from_distances(r, R: float, B: int = DEFAULT_BINS) -> DistanceHistogram:
    """Bin distances on B uniform bins over [0, R]; values above R go to the last bin
    and are tallied in ``overflow``."""
    if B < 1:
        raise ValueError("bin count must be at least 1")
    r = np.asarray(r, dtype=float).ravel()
    if np.any(r < 0) or np.isnan(r).any():
        raise ValueError("distances must be nonnegative numbers")
    idx = np.minimum(r * (B / R), B - 1).astype(np.int64)
    counts = np.bincount(idx, minlength=B)
    return DistanceHistogram.from_counts(counts, R, int(np.count_nonzero(r > R)))


def histogram(stream, R: float, B: int = DEFAULT_BINS) -> DistanceHistogram:
    """Histogram of a distance stream (tuples ending in r, or plain numbers)."""
    if B < 1:
        raise ValueError("bin count must be at least 1")
    if isinstance(stream, np.ndarray):
        return histogram_from_distances(stream, R, B)
    rs = [item[-1] if isinstance(item, tuple) else item for item in stream]
    return histogram_from_distances(np.array(rs, dtype=float), R, B)


def trajectory_histogram(traj: Trajectory, spec: NetworkSpec, R: float,
                         B: int = DEFAULT_BINS, chunk: int = 8192) -> DistanceHistogram:
    """rho_T over steps t = 0..T-1 (uses the full-rate tally when the states are thinned)."""
    if traj.thin != 1:
        if traj.hist is None:
            raise ValueError("thinned trajectory without a full-rate histogram")
        return traj.hist
    counts = np.zeros(B, dtype=np.int64)
    overflow = 0
    states = traj.states[: traj.T]
    for s in range(0, len(states), chunk):
        r = pair_distances(states[s:s + chunk], spec)
        hst = histogram_from_distances(r, R, B)
        counts += hst.counts
        overflow += hst.overflow
    return DistanceHistogram.from_counts(counts, R, overflow)


def weighted_l2_distance(psi1, psi2, hist: DistanceHistogram) -> float:
    """(sum_b mass_b |(psi1 - psi2)(c_b) c_b|^2)^(1/2) over bin centres c_b."""
    c = hist.centers
    diff = (np.asarray(psi1(c)) - np.asarray(psi2(c))) * c
    return float(np.sqrt(np.sum(hist.mass * diff * diff)))


def kl_divergence(p: DistanceHistogram, q: DistanceHistogram,
                  smoothing: float = KL_SMOOTHING) -> float:
    """sum_b p_b log(p_b / q_b) after adding ``smoothing`` to both and renormalizing."""
    if not p.same_grid(q):
        raise ValueError("KL divergence needs identical bin grids")
    pm = p.mass + smoothing
    qm = q.mass + smoothing
    pm /= pm.sum()
    qm /= qm.sum()
    return float(np.sum(pm * np.log(pm / qm)))


def resimulate_distribution(spec: NetworkSpec, phi_hat: CouplingFunction, T: int, seed: int,
                            R: float, B: int = DEFAULT_BINS,
                            burn_in: int = DEFAULT_BURN_IN, x0=None) -> DistanceHistogram:
    """rho_hat_T: the distance histogram of a rollout driven by ``phi_hat``."""
    traj = simulate(spec, phi_hat, T, seed, burn_in=burn_in, x0=x0)
    return trajectory_histogram(traj, spec, R, B)


# ---------------------------------------------------------------------------
# trajectory files
# ---------------------------------------------------------------------------

MAGIC = b"CPLT"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQQdI32s")


def write_trajectory(path, traj: Trajectory) -> None:
    """Little-endian: magic, version, n, d, T, seed, h, thin, fingerprint, then frames."""
    fp = bytes.fromhex(traj.spec_fingerprint) if traj.spec_fingerprint else bytes(32)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, traj.n, traj.d, traj.T,
                             traj.seed & 0xFFFFFFFFFFFFFFFF, traj.h, traj.thin, fp))
        f.write(np.ascontiguousarray(traj.states, dtype="<f8").tobytes())


def read_trajectory(path) -> Trajectory:
    raw = Path(path).read_bytes()
    magic, version, n, d, T, seed, h, thin, fp = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a trajectory file")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    states = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(-1, n * d).copy()
    return Trajectory(states, T, seed, h, n, d, fp.hex(), thin)
