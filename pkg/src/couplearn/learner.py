"""Least-squares identification of the coupling from one trajectory, plus error metrics."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .basis import BasisExpansion, BasisFamily, NoInformativeSamples, design_blocks
from .network import CouplingFunction, NetworkSpec, neighbor_displacements, project_diagonal
from .simulator import (DEFAULT_BINS, DEFAULT_BURN_IN, DistanceHistogram, SimulationDiverged,
                        Trajectory, kl_divergence, resimulate_distribution,
                        trajectory_histogram,
                        weighted_l2_distance)

COND_LIMIT = 1e12
RANK_TOL = 1e-10
_CHUNK = 512

log = logging.getLogger(__name__)


@dataclass(eq=False)
class LearnProblem:
    """Accumulated normal equations of min |A rho - b|^2 (A optional, for testing)."""

    gram: np.ndarray        # A^T A
    moment: np.ndarray      # A^T b
    bb: float               # b^T b
    T: int
    n_edges: int
    basis: BasisFamily
    r_max: float = float("inf")   # distance range seen in the data
    r_min: float = 0.0
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    rfac: np.ndarray | None = None   # triangular factor of A (streamed QR)
    qtb: np.ndarray | None = None    # the matching rotated target

    @property
    def Q(self) -> int:
        return self.basis.Q


class _Normal:
    """Running A^T A, A^T b, b^T b and a QR factor of A, fed one chunk of rows at a time.

    The factor keeps solves accurate to cond(A) rather than cond(A)^2.
    """

    def __init__(self, Q: int):
        self.gram = np.zeros((Q, Q))
        self.moment = np.zeros(Q)
        self.bb = 0.0
        self.R = np.zeros((0, Q))
        self.z = np.zeros(0)

    def add(self, A: np.ndarray, v: np.ndarray) -> None:
        Q = self.gram.shape[0]
        self.gram += np.einsum("cmq,cmp->qp", A, A)
        self.moment += np.einsum("cmq,cm->q", A, v)
        self.bb += float(np.einsum("cm,cm->", v, v))
        q, self.R = np.linalg.qr(np.vstack([self.R, A.reshape(-1, Q)]))
        self.z = q.T @ np.concatenate([self.z, v.ravel()])

    def problem(self, T: int, n_edges: int, basis: BasisFamily, **kw) -> "LearnProblem":
        return LearnProblem((self.gram + self.gram.T) / 2, self.moment, self.bb, T, n_edges,
                            basis, rfac=self.R, qtb=self.z, **kw)


def _targets(states: np.ndarray, h: float) -> np.ndarray:
    return (states[1:] - states[:-1]) / h


def assemble(traj: Trajectory, spec: NetworkSpec, basis: BasisFamily, dense: bool = False,
             project: bool = False, clamp: bool = False, chunk: int = _CHUNK) -> LearnProblem:
    """Stream A^T A, A^T b and a QR factor of A over steps t = 0..T-1.

    Row block t of A is the design block at x_t; the matching slice of b is
    v_t = (x_{t+1} - x_t) / h.  ``project`` removes the agent mean from the
    states first.
    """
    states = traj.states
    if traj.thin != 1:
        raise ValueError("learning needs consecutive states (thin = 1)")
    if len(states) < 2:
        raise ValueError("need at least two states to form a difference")
    if project:
        Y = (states - spec.equilibrium_offset).reshape(len(states), spec.n, spec.d)
        states = project_diagonal(Y)[1].reshape(len(states), -1) + spec.equilibrium_offset
    T = len(states) - 1
    Q = basis.Q
    acc = _Normal(Q)
    r_max, r_min = 0.0, float("inf")
    live = spec.neighbor_weights > 0
    As, bs = [], []
    for s in range(0, T, chunk):
        e = min(s + chunk, T)
        blk = states[s:e + 1]
        v = _targets(blk, spec.h)                              # (C, n*d)
        Y = (blk[:-1] - spec.equilibrium_offset).reshape(e - s, spec.n, spec.d)
        A, r = design_blocks(Y, spec, basis, clamp=clamp)      # (C, n*d, Q)
        r_max = max(r_max, float(np.max(r, where=live, initial=0.0)))
        r_min = min(r_min, float(np.min(r, where=live, initial=np.inf)))
        acc.add(A, v)
        if dense:
            As.append(A.reshape(-1, Q))
            bs.append(v.ravel())
    prob = acc.problem(T, spec.n_edges, basis, r_max=r_max, r_min=r_min)
    if dense:
        prob.A = np.concatenate(As)
        prob.b = np.concatenate(bs)
    return prob


@dataclass(eq=False)
class LearnResult:
    coeffs: np.ndarray
    phi_hat: BasisExpansion
    empirical_error: float
    residual_norm: float
    rank_deficient: bool
    solve_method: str
    stationarity: float = 0.0
    r_max: float = float("inf")
    r_min: float = 0.0

    def to_dict(self) -> dict:
        return {
            "basis": self.phi_hat.basis.kind,
            "Q": self.phi_hat.basis.Q,
            "R": self.phi_hat.basis.R,
            "coeffs": self.coeffs.tolist(),
            "empirical_error": self.empirical_error,
            "rank_deficient": self.rank_deficient,
            "solve_method": self.solve_method,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "LearnResult":
        basis = BasisFamily(d["basis"], int(d["Q"]), float(d["R"]))
        coeffs = np.array(d["coeffs"], dtype=float)
        return cls(coeffs, BasisExpansion(basis, coeffs), d["empirical_error"], float("nan"),
                   d["rank_deficient"], d["solve_method"])


def _min_norm(problem: LearnProblem, rank_tol: float) -> np.ndarray:
    """Minimum-norm solution over directions with eigenvalue of A^T A above rank_tol * max."""
    if problem.rfac is not None:
        U, sv, Vt = np.linalg.svd(problem.rfac, full_matrices=False)
        keep = sv * sv > rank_tol * sv[0] ** 2
        return Vt[keep].T @ ((U[:, keep].T @ problem.qtb) / sv[keep])
    ev, V = np.linalg.eigh(problem.gram)
    keep = ev > rank_tol * ev[-1]
    return V[:, keep] @ ((V[:, keep].T @ problem.moment) / ev[keep])


def solve(problem: LearnProblem, rank_tol: float = RANK_TOL) -> LearnResult:
    """Least-squares coefficients.

    Columns are equilibrated by diag(A^T A)^(-1/2).  When the scaled A^T A has
    condition number at most 1e12 the exact minimizer is returned, from the
    streamed QR factor if present (tag "qr") or by Cholesky on the normal
    equations.  Otherwise the minimum-norm solution restricted to eigenvalues
    of A^T A above rank_tol * lambda_max is used ("eigh-pinv").
    """
    G, m = problem.gram, problem.moment
    if not np.any(G):
        raise NoInformativeSamples("A^T A is identically zero: no informative samples")
    dg = np.diag(G)
    live = dg > 0
    rank_deficient = not live.all()
    coeffs = np.zeros(problem.Q)
    s = 1.0 / np.sqrt(dg[live])
    if problem.rfac is not None:
        Rs = problem.rfac[:, live] * s
        sv = np.linalg.svd(Rs, compute_uv=False)
        ok = len(sv) == s.size and sv[-1] > 0 and (sv[0] / sv[-1]) ** 2 <= COND_LIMIT
        if ok:
            coeffs[live] = s * np.linalg.lstsq(Rs, problem.qtb, rcond=None)[0]
        method = "qr"
    else:
        Gs = G[np.ix_(live, live)] * s[:, None] * s[None, :]
        ev = np.linalg.eigvalsh(Gs)
        ok = ev[0] > 0 and ev[-1] / ev[0] <= COND_LIMIT
        if ok:
            coeffs[live] = s * scipy.linalg.cho_solve(scipy.linalg.cho_factor(Gs), m[live] * s)
        method = "cholesky"
    if not ok:
        coeffs = _min_norm(problem, rank_tol)
        method = "eigh-pinv"
        rank_deficient = True
    # |A rho - b|^2 = b^T b - 2 rho^T A^T b + rho^T A^T A rho
    resid2 = max(problem.bb - 2 * coeffs @ m + coeffs @ G @ coeffs, 0.0)
    err = resid2 / (problem.T * problem.n_edges)
    stationarity = float(np.linalg.norm(G @ coeffs - m))
    phi_hat = BasisExpansion(problem.basis, coeffs)
    return LearnResult(coeffs, phi_hat, float(err), float(np.sqrt(resid2)), bool(rank_deficient),
                       method, stationarity, problem.r_max, problem.r_min)


def learn(traj: Trajectory, spec: NetworkSpec, basis: BasisFamily, **kw) -> LearnResult:
    return solve(assemble(traj, spec, basis, **kw))


def best_approximation(traj: Trajectory, spec: NetworkSpec, basis: BasisFamily,
                       phi: CouplingFunction, clamp: bool = False) -> LearnResult:
    """Least-squares projection of phi onto span(basis) using noise-free targets F_phi(x_t)."""
    states = traj.states[: traj.T]
    acc = _Normal(basis.Q)
    for s in range(0, len(states), _CHUNK):
        blk = states[s:s + _CHUNK]
        Y = (blk - spec.equilibrium_offset).reshape(len(blk), spec.n, spec.d)
        A, r = design_blocks(Y, spec, basis, clamp=clamp)
        diff, _ = neighbor_displacements(Y, spec)
        F = np.einsum("cim,cimk->cik", spec.neighbor_weights * phi(r), diff).reshape(len(blk), -1)
        acc.add(A, F)
    return solve(acc.problem(len(states), spec.n_edges, basis))


# ---------------------------------------------------------------------------
# error metrics
# ---------------------------------------------------------------------------

def empirical_error(traj: Trajectory, spec: NetworkSpec, psi: CouplingFunction,
                    chunk: int = _CHUNK) -> float:
    """E_T(psi) = (1/(T N_e)) sum_{t<T} |(x_{t+1} - x_t)/h - F_psi(x_t)|^2."""
    states = traj.states
    T = len(states) - 1
    total = 0.0
    for s in range(0, T, chunk):
        e = min(s + chunk, T)
        blk = states[s:e + 1]
        v = _targets(blk, spec.h)
        Y = (blk[:-1] - spec.equilibrium_offset).reshape(e - s, spec.n, spec.d)
        diff, r = neighbor_displacements(Y, spec)
        F = np.einsum("cim,cimk->cik", spec.neighbor_weights * psi(r), diff).reshape(e - s, -1)
        res = v - F
        total += float(np.einsum("cm,cm->", res, res))
    return total / (T * spec.n_edges)


def noise_floor(spec: NetworkSpec) -> float:
    """sigma^2 / N_e, the limit of E_T(phi) along a stationary trajectory."""
    return spec.noise.sigma2(spec.n, spec.d) / spec.n_edges


def pointwise_weighted_error(phi, phi_hat, hist: DistanceHistogram) -> np.ndarray:
    """nu(c_b) = |(phi - phi_hat)(c_b) c_b|^2 rho(c_b) on bin centres, rho as a density.

    sum_b nu_b * width_b equals weighted_l2_distance(phi, phi_hat, hist)^2.
    """
    c = hist.centers
    diff = (np.asarray(phi(c)) - np.asarray(phi_hat(c))) * c
    return diff * diff * hist.density()


@dataclass
class EvaluationReport:
    T: int
    seed: int
    E_T: float
    E_T_excess: float
    l2_rho_error: float
    kl: float
    centers: np.ndarray
    nu: np.ndarray
    rho: DistanceHistogram
    rho_hat: DistanceHistogram | None

    def row(self) -> dict:
        return {"T": self.T, "seed": self.seed, "E_T": self.E_T, "E_T_excess": self.E_T_excess,
                "l2_rho_error": self.l2_rho_error, "kl": self.kl}


def evaluate(traj: Trajectory, spec: NetworkSpec, phi_true: CouplingFunction,
             result: LearnResult, resim_seed: int | None = None, R: float | None = None,
             B: int = DEFAULT_BINS, burn_in: int | None = None, resimulate: bool = True,
             hist: DistanceHistogram | None = None) -> EvaluationReport:
    """One table row: E_T(phi_hat), |phi - phi_hat| in L2*(rho_T), KL(rho_T || rho_hat_T), nu."""
    R = result.phi_hat.basis.R if R is None else R
    rho = trajectory_histogram(traj, spec, R, B) if hist is None else hist
    E_T = empirical_error(traj, spec, result.phi_hat)
    l2 = weighted_l2_distance(phi_true, result.phi_hat, rho)
    nu = pointwise_weighted_error(phi_true, result.phi_hat, rho)
    if not np.isclose(np.sum(nu * rho.widths), l2 * l2, rtol=1e-10, atol=1e-300):
        raise AssertionError("nu table does not integrate to the squared weighted L2 distance")
    rho_hat = None
    kl = float("nan")
    if resimulate:
        seed = traj.seed if resim_seed is None else resim_seed
        try:
            phi_hat = result.phi_hat.with_clamp((result.r_min, min(result.r_max, R)))
            rho_hat = resimulate_distribution(
                spec, phi_hat, traj.T, seed, R, B,
                burn_in=traj.burn_in if burn_in is None else burn_in)
            kl = kl_divergence(rho, rho_hat)
        except SimulationDiverged as err:
            # an unstable estimate has no stationary distance law to compare against
            log.warning("re-simulation with the estimate diverged (%s); KL reported as inf", err)
            kl = float("inf")
    return EvaluationReport(traj.T, traj.seed, E_T, E_T - noise_floor(spec), l2, kl,
                            rho.centers, nu, rho, rho_hat)
