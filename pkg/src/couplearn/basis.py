"""Finite hypothesis spaces spanned by basis functions on [0, R], and coercivity.

Two families are supported: piecewise-constant indicators on Q uniform bins
and raw monomials r, r^2, ..., r^Q.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .network import CouplingFunction, NetworkSpec, neighbor_displacements


class BasisDomainError(ValueError):
    """A basis function was evaluated outside [0, R]."""


class NoInformativeSamples(ValueError):
    """The data carry no information about any basis direction."""


_ROUND = 1e-12


@dataclass(frozen=True)
class BasisFamily:
    kind: str
    Q: int
    R: float

    def __post_init__(self):
        if self.kind not in ("indicator", "monomial"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.Q < 1:
            raise ValueError("basis size Q must be positive")
        if not self.R > 0:
            raise ValueError("domain bound R must be positive")

    def __call__(self, r, clamp: bool = False) -> np.ndarray:
        """Evaluate all Q functions; output shape is r.shape + (Q,).

        Indicator bins are half-open [R(q-1)/Q, Rq/Q) except the last, which is
        closed at R.
        """
        r = np.asarray(r, dtype=float)
        if clamp:
            r = np.clip(r, 0.0, self.R)
        elif r.size and (np.min(r) < 0 or np.max(r) > self.R * (1 + _ROUND)):
            bad = r[(r < 0) | (r > self.R * (1 + _ROUND))]
            raise BasisDomainError(f"r = {bad.flat[0]:.6g} outside [0, {self.R}]")
        if self.kind == "indicator":
            idx = np.minimum((r * (self.Q / self.R)).astype(np.int64), self.Q - 1)
            out = np.zeros(r.shape + (self.Q,))
            np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
            return out
        return r[..., None] ** np.arange(1, self.Q + 1)

    def index(self, r) -> np.ndarray:
        """Bin index of each r (indicator family only)."""
        r = np.asarray(r, dtype=float)
        return np.minimum((r * (self.Q / self.R)).astype(np.int64), self.Q - 1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "Q": self.Q, "R": self.R}


def eval_basis(basis: BasisFamily, r: float) -> np.ndarray:
    return basis(r)


class BasisExpansion(CouplingFunction):
    """psi(r) = sum_q coeffs[q] psi_q(r).

    With ``clamp`` set, distances beyond ``clamp`` (or beyond R when
    ``clamp=True``) are evaluated at that edge, which lets a learned coupling
    drive a re-simulation whose distances overshoot the sampled range.  A
    ``(lo, hi)`` pair clamps from below as well.
    """

    def __init__(self, basis: BasisFamily, coeffs, clamp=False):
        self.basis = basis
        self.coeffs = np.array(coeffs, dtype=float)
        if self.coeffs.shape != (basis.Q,):
            raise ValueError(f"expected {basis.Q} coefficients, got {self.coeffs.shape}")
        self.clamp = clamp
        self.R = basis.R
        if clamp is True:
            self._lo, self._edge = 0.0, basis.R
        elif clamp is False or clamp is None:
            self._lo, self._edge = 0.0, None
        elif np.ndim(clamp) == 1:
            lo, hi = map(float, clamp)
            self._lo, self._edge = max(lo, 0.0), min(hi, basis.R)
        else:
            self._lo, self._edge = 0.0, min(float(clamp), basis.R)

    def _eval(self, r):
        r = np.asarray(r, dtype=float)
        if self._edge is not None:
            r = np.clip(r, self._lo, self._edge)
        elif r.size and (r.min() < 0 or r.max() > self.R * (1 + _ROUND)):
            self.basis(r)  # raises BasisDomainError
        if self.basis.kind == "indicator":
            return self.coeffs[self.basis.index(np.clip(r, 0.0, self.R))]
        return self.basis(np.clip(r, 0.0, self.R)) @ self.coeffs

    def with_clamp(self, clamp=True) -> "BasisExpansion":
        return BasisExpansion(self.basis, self.coeffs, clamp=clamp)

    def to_dict(self):
        return {"kind": "basis-expansion", "basis": self.basis.to_dict(),
                "coeffs": self.coeffs.tolist(), "clamp": [self._lo, self._edge]}

    def __repr__(self):
        return f"BasisExpansion({self.basis}, coeffs={np.array2string(self.coeffs, precision=4)})"


# ---------------------------------------------------------------------------
# coercivity
# ---------------------------------------------------------------------------

def _state_chunks(states: np.ndarray, chunk: int):
    for s in range(0, len(states), chunk):
        yield states[s:s + chunk]


def design_blocks(Y: np.ndarray, spec: NetworkSpec, basis: BasisFamily, clamp: bool = False):
    """Per-step design blocks A_t with {A_t}_{(i,k), q} = sum_j k_ij psi_q(r^{ij}) (y^j - y^i)_k.

    ``Y`` has shape (C, n, d); returns (C, n*d, Q) and the neighbour distances.
    """
    diff, r = neighbor_displacements(Y, spec)              # (C,n,m,d), (C,n,m)
    psi = basis(r, clamp=clamp) * spec.neighbor_weights[..., None]   # (C,n,m,Q)
    A = np.matmul(np.swapaxes(psi, -1, -2), diff)          # (C,n,Q,d)
    C = Y.shape[0]
    return np.swapaxes(A, -1, -2).reshape(C, spec.n * spec.d, basis.Q), r


def coercivity_matrices(basis: BasisFamily, traj, spec: NetworkSpec, chunk: int = 512,
                        clamp: bool = False):
    """Time-averaged estimates of Upsilon_H and Xi_H over states t = 0..T-1.

    Upsilon_H[q, q'] = (1/(T N_e)) sum_t sum_i (sum_j k_ij psi_q r^{ij})^T (sum_j' k_ij' psi_q' r^{ij'})
    Xi_H[q, q']      = (1/(T N_e)) sum_t sum_{i<j, k_ij>0} psi_q(r) psi_q'(r) r^2

    The 1/N_e in Upsilon makes the generalized Rayleigh quotient equal to the
    per-edge coercivity ratio.  Both are symmetrized.
    """
    states = traj.states if hasattr(traj, "states") else np.asarray(traj)
    states = np.atleast_2d(states)
    T = len(states) - 1 if hasattr(traj, "states") else len(states)
    if T < 1:
        raise ValueError("trajectory has no usable states")
    states = states[:T]
    Q = basis.Q
    ups = np.zeros((Q, Q))
    xi = np.zeros((Q, Q))
    i, j = spec.edges[:, 0], spec.edges[:, 1]
    for blk in _state_chunks(states, chunk):
        Y = (blk - spec.equilibrium_offset).reshape(len(blk), spec.n, spec.d)
        A, _ = design_blocks(Y, spec, basis, clamp=clamp)
        ups += np.einsum("cmq,cmp->qp", A, A)
        re = np.linalg.norm(Y[:, j] - Y[:, i] + spec.edge_offsets, axis=-1)   # (C, N_e)
        P = basis(re, clamp=clamp) * re[..., None]          # (C, N_e, Q)
        xi += np.einsum("ceq,cep->qp", P, P)
    norm = T * spec.n_edges
    ups /= norm
    xi /= norm
    return (ups + ups.T) / 2, (xi + xi.T) / 2


@dataclass
class CoercivityReport:
    upsilon: np.ndarray
    xi: np.ndarray
    c_H: float
    kernel_dim: int
    excluded_directions: np.ndarray
    basis: BasisFamily | None = None
    metadata: dict = field(default_factory=lambda: {
        "expectation": "trajectory time average in place of the stationary law"})

    def to_dict(self) -> dict:
        Q = self.upsilon.shape[0]
        return {
            "Q": Q,
            "kind": self.basis.kind if self.basis else None,
            "c_H": self.c_H,
            "kernel_dim": self.kernel_dim,
            "upsilon": self.upsilon.ravel().tolist(),
            "xi": self.xi.ravel().tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def coercivity_constant(upsilon, xi, rank_tol: float = 1e-10,
                        basis: BasisFamily | None = None) -> CoercivityReport:
    """Smallest generalized Rayleigh quotient rho^T U rho / rho^T Xi rho off ker(Xi).

    Both forms are first rescaled by D = diag(Xi)^(-1/2) (the quotient is
    invariant), then restricted to the eigenvectors of Xi above
    rank_tol * lambda_max, whitened by a Cholesky factor and eigendecomposed.
    """
    U = np.asarray(upsilon, dtype=float)
    X = np.asarray(xi, dtype=float)
    if not np.any(X):
        raise NoInformativeSamples("Xi_H is identically zero")
    dg = np.diag(X).copy()
    scale = np.where(dg > 0, 1.0 / np.sqrt(np.where(dg > 0, dg, 1.0)), 1.0)
    Xs = X * scale[:, None] * scale[None, :]
    Us = U * scale[:, None] * scale[None, :]
    ev, V = np.linalg.eigh(Xs)
    keep = ev > rank_tol * ev[-1]
    Vk = V[:, keep]
    Xr = Vk.T @ Xs @ Vk
    Ur = Vk.T @ Us @ Vk
    L = np.linalg.cholesky((Xr + Xr.T) / 2)
    Linv_U = np.linalg.solve(L, Ur)
    W = np.linalg.solve(L, Linv_U.T).T     # L^-1 U L^-T
    c_H = float(np.linalg.eigvalsh((W + W.T) / 2)[0])
    excluded = scale[:, None] * V[:, ~keep]
    if excluded.size:
        excluded = excluded / np.linalg.norm(excluded, axis=0)
    return CoercivityReport(upsilon=U, xi=X, c_H=c_H, kernel_dim=int((~keep).sum()),
                            excluded_directions=excluded, basis=basis)
