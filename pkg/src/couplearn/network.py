"""Networked agent model: topology, noise, coupling functions and one-step dynamics.

Agents i = 1..n carry states x^i in R^d and evolve as

    x^i_{t+1} = x^i_t + h * sum_j k_ij phi(|y^j - y^i|) (y^j - y^i) + h w^i_t,

where y = x - b is the state measured from the equilibrium offset b.  By
default the coupling is evaluated at |y^j - y^i|; ``distance_from="state"``
evaluates it at the raw distance |x^j - x^i| instead (formation networks whose
coupling vanishes at the target spacing).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np


class CouplingDomainError(ValueError):
    """A coupling was evaluated outside its admissible range."""


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Bounded zero-mean i.i.d. noise with a diagonal covariance.

    ``uniform``: every scalar component is uniform on [-omega/sqrt(d), omega/sqrt(d)],
    so each agent block satisfies |w^i| <= omega and E[w^i.T w^i] = omega**2 / 3.

    ``custom-bounded``: every scalar component is uniform on [-amplitude, amplitude].
    """

    omega: float
    kind: str = "uniform"
    amplitude: float | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "custom-bounded"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")
        if self.kind == "custom-bounded" and (self.amplitude is None or self.amplitude < 0):
            raise ValueError("custom-bounded noise needs a nonnegative amplitude")

    def component_amplitude(self, d: int) -> float:
        if self.kind == "uniform":
            return self.omega / math.sqrt(d)
        return float(self.amplitude)

    def component_variance(self, d: int) -> float:
        return self.component_amplitude(d) ** 2 / 3.0

    def agent_bound(self, d: int) -> float:
        """Almost-sure bound on the norm of one agent's noise block."""
        return self.component_amplitude(d) * math.sqrt(d)

    def sigma2(self, n: int, d: int) -> float:
        """n * Tr(Sigma), the total noise power per step."""
        return n * d * self.component_variance(d)

    def sample(self, rng: np.random.Generator, n: int, d: int, size: int | None = None) -> np.ndarray:
        a = self.component_amplitude(d)
        shape = (n * d,) if size is None else (size, n * d)
        if a == 0.0:
            return np.zeros(shape)
        return rng.uniform(-a, a, size=shape)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

def _is_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(adj[i]):
            if j not in seen:
                seen.add(int(j))
                queue.append(int(j))
    return len(seen) == n


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    n: int
    d: int
    h: float
    weights: np.ndarray
    noise: NoiseModel
    equilibrium_offset: np.ndarray | None = None
    R0: float = 0.0
    distance_from: str = "offset"

    # derived, filled in __post_init__
    edges: np.ndarray = field(init=False, repr=False)
    neighbors: np.ndarray = field(init=False, repr=False)
    neighbor_weights: np.ndarray = field(init=False, repr=False)
    neighbor_offsets: np.ndarray = field(init=False, repr=False)
    edge_offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.distance_from not in ("offset", "state"):
            raise ValueError("distance_from must be 'offset' or 'state'")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if not self.h > 0:
            raise ValueError("step size h must be positive")
        if self.R0 < 0:
            raise ValueError("R0 must be nonnegative")
        k = np.array(self.weights, dtype=float)
        if k.shape != (self.n, self.n):
            raise ValueError(f"weights must be {self.n}x{self.n}, got {k.shape}")
        if np.any(k < 0):
            raise ValueError("weights must be nonnegative")
        if np.any(np.diag(k) != 0):
            raise ValueError("weights must have a zero diagonal")
        if not np.array_equal(k, k.T):
            raise ValueError("weights must be symmetric")
        if not _is_connected(k > 0):
            raise ValueError("graph induced by the weights is not connected")
        k.setflags(write=False)
        object.__setattr__(self, "weights", k)

        b = np.zeros(self.n * self.d) if self.equilibrium_offset is None else \
            np.array(self.equilibrium_offset, dtype=float).ravel()
        if b.shape != (self.n * self.d,):
            raise ValueError("equilibrium_offset must have length n*d")
        b.setflags(write=False)
        object.__setattr__(self, "equilibrium_offset", b)

        iu, ju = np.nonzero(np.triu(k, 1))
        edges = np.stack([iu, ju], axis=1)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

        # padded neighbour lists; padding points back at the agent itself with weight 0
        deg = (k > 0).sum(axis=1)
        width = int(deg.max()) if self.n > 1 else 1
        nbr = np.tile(np.arange(self.n)[:, None], (1, width))
        wts = np.zeros((self.n, width))
        for i in range(self.n):
            js = np.flatnonzero(k[i])
            nbr[i, : len(js)] = js
            wts[i, : len(js)] = k[i, js]
        nbr.setflags(write=False)
        wts.setflags(write=False)
        object.__setattr__(self, "neighbors", nbr)
        object.__setattr__(self, "neighbor_weights", wts)

        # b^j - b^i, added to offset displacements when distances are taken on raw states
        B = b.reshape(self.n, self.d)
        if self.distance_from == "state":
            noff = B[nbr] - B[:, None, :]
            eoff = B[edges[:, 1]] - B[edges[:, 0]]
        else:
            noff = np.zeros(nbr.shape + (self.d,))
            eoff = np.zeros((len(edges), self.d))
        noff.setflags(write=False)
        eoff.setflags(write=False)
        object.__setattr__(self, "neighbor_offsets", noff)
        object.__setattr__(self, "edge_offsets", eoff)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def K(self) -> float:
        return float(self.weights.max())

    @property
    def K_tilde(self) -> float:
        return float(self.weights.sum(axis=1).max())

    def to_dict(self) -> dict:
        return {
            "n": self.n, "d": self.d, "h": self.h, "R0": self.R0,
            "distance_from": self.distance_from,
            "weights": self.weights.tolist(),
            "equilibrium_offset": self.equilibrium_offset.tolist(),
            "noise": {"kind": self.noise.kind, "omega": self.noise.omega,
                      "amplitude": self.noise.amplitude},
        }


def complete_graph(n: int, K: float = 1.0) -> np.ndarray:
    return K * (np.ones((n, n)) - np.eye(n))


def path_graph(n: int, K: float = 1.0) -> np.ndarray:
    k = np.zeros((n, n))
    idx = np.arange(n - 1)
    k[idx, idx + 1] = K
    k[idx + 1, idx] = K
    return k


def formation_offset(n: int, d: int, spacing: float) -> np.ndarray:
    """Offsets b = [0, s, 2s, ...] along the first coordinate."""
    b = np.zeros((n, d))
    b[:, 0] = spacing * np.arange(n)
    return b.ravel()


# ---------------------------------------------------------------------------
# coupling functions
# ---------------------------------------------------------------------------

_SCAN_POINTS = 20001


class CouplingFunction:
    """Scalar map r -> phi(r) on [0, R], vectorised over numpy arrays.

    Subclasses implement ``_eval``; ``S0`` is a cached upper bound of phi on
    [0, R] found by a dense grid scan.
    """

    R: float

    def __call__(self, r):
        return self._eval(np.asarray(r, dtype=float))

    def _eval(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _scan_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.R, _SCAN_POINTS)

    @property
    def S0(self) -> float:
        cached = self.__dict__.get("_S0")
        if cached is None:
            cached = float(np.max(self(self._scan_grid())))
            self.__dict__["_S0"] = cached
        return cached

    def to_dict(self) -> dict:
        raise NotImplementedError


class CuckerSmale(CouplingFunction):
    """phi(r) = gamma / (1 + r^2)^eta."""

    def __init__(self, gamma: float, eta: float, R: float = 1.0):
        if gamma <= 0 or eta < 0:
            raise ValueError("Cucker-Smale coupling needs gamma > 0, eta >= 0")
        self.gamma, self.eta, self.R = float(gamma), float(eta), float(R)

    def _eval(self, r):
        return self.gamma / (1.0 + r * r) ** self.eta

    @property
    def S0(self) -> float:
        return self.gamma  # attained at r = 0, monotone decreasing

    def to_dict(self):
        return {"kind": "cucker-smale", "gamma": self.gamma, "eta": self.eta, "R": self.R}

    def __repr__(self):
        return f"CuckerSmale(gamma={self.gamma}, eta={self.eta}, R={self.R})"


class FormationRepulsive(CouplingFunction):
    """phi(r) = gamma (r - r0)^2 / (a - (r - r0)^3)^eta.

    Singular at r = r0 + a**(1/3); evaluation within ``margin`` of (or beyond)
    that point raises CouplingDomainError instead of clamping.
    """

    margin = 1e-6

    def __init__(self, gamma: float, eta: float, r0: float, a: float, R: float | None = None):
        if gamma <= 0 or eta < 0 or a <= 0:
            raise ValueError("formation coupling needs gamma > 0, eta >= 0, a > 0")
        self.gamma, self.eta, self.r0, self.a = float(gamma), float(eta), float(r0), float(a)
        self.singularity = self.r0 + self.a ** (1.0 / 3.0)
        R = self.singularity - 2 * self.margin if R is None else float(R)
        if R >= self.singularity - self.margin:
            raise CouplingDomainError(
                f"domain [0, {R}] reaches the singularity at r = {self.singularity:.6f}")
        self.R = R

    def _eval(self, r):
        bad = r >= self.singularity - self.margin
        if np.any(bad):
            worst = float(np.max(r[bad])) if np.ndim(r) else float(r)
            raise CouplingDomainError(
                f"distance {worst:.6g} is within {self.margin:g} of the singularity "
                f"r = {self.singularity:.6f}")
        s = r - self.r0
        return self.gamma * s * s / (self.a - s ** 3) ** self.eta

    def to_dict(self):
        return {"kind": "formation-repulsive", "gamma": self.gamma, "eta": self.eta,
                "r0": self.r0, "a": self.a, "R": self.R}

    def __repr__(self):
        return (f"FormationRepulsive(gamma={self.gamma}, eta={self.eta}, r0={self.r0}, "
                f"a={self.a}, R={self.R})")


class ZeroCoupling(CouplingFunction):
    def __init__(self, R: float = 1.0):
        self.R = float(R)

    def _eval(self, r):
        return np.zeros_like(r)

    def to_dict(self):
        return {"kind": "zero", "R": self.R}


class ConstantCoupling(CouplingFunction):
    def __init__(self, value: float, R: float = 1.0):
        self.value, self.R = float(value), float(R)

    def _eval(self, r):
        return np.full_like(r, self.value)

    def to_dict(self):
        return {"kind": "constant", "value": self.value, "R": self.R}


# ---------------------------------------------------------------------------
# states and operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NetworkState:
    x: np.ndarray
    t: int = 0

    def __post_init__(self):
        x = np.array(self.x, dtype=float).ravel()
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if self.t < 0:
            raise ValueError("step index must be nonnegative")

    def check(self, spec: NetworkSpec) -> None:
        if self.x.shape != (spec.n * spec.d,):
            raise ValueError(f"state has length {self.x.size}, expected {spec.n * spec.d}")


def _as_x(state) -> np.ndarray:
    return state.x if isinstance(state, NetworkState) else np.asarray(state, dtype=float).ravel()


def relative_displacements(state, spec: NetworkSpec):
    """Per undirected edge (i < j): (i, j, y^j - y^i, r) with y = x - b.

    r = |y^j - y^i| by default; with ``distance_from="state"`` r = |x^j - x^i|.
    """
    y = (_as_x(state) - spec.equilibrium_offset).reshape(spec.n, spec.d)
    i, j = spec.edges[:, 0], spec.edges[:, 1]
    rv = y[j] - y[i]
    r = np.linalg.norm(rv + spec.edge_offsets, axis=1)
    return [(int(a), int(b), rv[e], float(r[e])) for e, (a, b) in enumerate(spec.edges)]


def neighbor_displacements(Y: np.ndarray, spec: NetworkSpec):
    """Displacements y^j - y^i over padded neighbour lists.

    ``Y`` has shape (..., n, d); returns (diff, r) with shapes (..., n, m, d)
    and (..., n, m), m the padded maximum degree.
    """
    diff = Y[..., spec.neighbors, :] - Y[..., :, None, :]
    dr = diff + spec.neighbor_offsets
    r = np.sqrt(np.einsum("...k,...k->...", dr, dr))
    return diff, r


def force(state, spec: NetworkSpec, phi: CouplingFunction) -> np.ndarray:
    """F_i = sum_j k_ij phi(r^{ij}) (y^j - y^i), flattened to length n*d."""
    x = _as_x(state)
    Y = (x - spec.equilibrium_offset).reshape(spec.n, spec.d)
    diff, r = neighbor_displacements(Y, spec)
    w = spec.neighbor_weights * phi(r)
    return np.einsum("im,imk->ik", w, diff).ravel()


def step(state, spec: NetworkSpec, phi: CouplingFunction, w) -> NetworkState:
    x = _as_x(state)
    t = state.t if isinstance(state, NetworkState) else 0
    w = np.asarray(w, dtype=float).ravel()
    return NetworkState(x + spec.h * force(x, spec, phi) + spec.h * w, t + 1)


def laplacian(state, spec: NetworkSpec, phi: CouplingFunction) -> np.ndarray:
    """Scalar n x n state-dependent Laplacian (the full one is this kron I_d)."""
    x = _as_x(state)
    Y = (x - spec.equilibrium_offset).reshape(spec.n, spec.d)
    i, j = spec.edges[:, 0], spec.edges[:, 1]
    r = np.linalg.norm(Y[j] - Y[i] + spec.edge_offsets, axis=1)
    wt = spec.weights[i, j] * phi(r)
    L = np.zeros((spec.n, spec.n))
    L[i, j] = -wt
    L[j, i] = -wt
    L[np.diag_indices(spec.n)] = -L.sum(axis=1)
    return L


def spectral_deviation(state, spec: NetworkSpec, phi: CouplingFunction) -> float:
    """max(|1 - h lambda_2|, |1 - h lambda_max|) of the Laplacian at this state."""
    ev = np.linalg.eigvalsh(laplacian(state, spec, phi))
    if spec.n == 1:
        return 0.0
    return float(max(abs(1 - spec.h * ev[1]), abs(1 - spec.h * ev[-1])))


@dataclass(frozen=True)
class Contractivity:
    zeta_bound: float
    contractive: bool
    h_max: float


def contractivity(spec: NetworkSpec, phi: CouplingFunction) -> Contractivity:
    """Step-size condition h <= 1/(K~ S0) and a Gershgorin bound on zeta.

    With phi ranging over [0, S0] every Laplacian eigenvalue lies in
    [0, 2 K~ S0]; lambda_2 has no positive a-priori lower bound from this
    range alone, so the bound is max(1, |1 - 2 h K~ S0|) unless the coupling
    is bounded away from zero on [0, R].
    """
    S0 = phi.S0
    Kt = spec.K_tilde
    h_max = math.inf if S0 * Kt == 0 else 1.0 / (Kt * S0)
    lam_hi = 2.0 * Kt * S0
    phi_min = float(np.min(phi(phi._scan_grid())))
    # lower bound on lambda_2: Fiedler value of the weight graph times the coupling floor
    if spec.n > 1 and phi_min > 0:
        ev = np.linalg.eigvalsh(np.diag(spec.weights.sum(1)) - spec.weights)
        lam_lo = phi_min * ev[1]
    else:
        lam_lo = 0.0
    zeta = max(abs(1 - spec.h * lam_lo), abs(1 - spec.h * lam_hi))
    return Contractivity(zeta_bound=float(zeta), contractive=bool(spec.h <= h_max), h_max=h_max)


def state_bound(spec: NetworkSpec, zeta: float) -> float:
    """R = 2 (R0 + h omega / (1 - zeta)), the almost-sure bound on pair distances."""
    if not 0 <= zeta < 1:
        raise ValueError(f"zeta = {zeta} is not in [0, 1); the network has no bound")
    return 2.0 * (spec.R0 + spec.h * spec.noise.omega / (1.0 - zeta))


def project_diagonal(x, n: int | None = None, d: int | None = None):
    """Split x into its mean-agent component (in Delta) and the orthogonal rest.

    ``x`` may be flat (pass n, d) or shaped (..., n, d).
    """
    x = np.asarray(x, dtype=float)
    if n is not None:
        X = x.reshape(*x.shape[:-1], n, d)
    else:
        X = x
    xbar = np.broadcast_to(X.mean(axis=-2, keepdims=True), X.shape)
    xperp = X - xbar
    return xbar.reshape(x.shape).copy(), xperp.reshape(x.shape)
