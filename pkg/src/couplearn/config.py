"""Experiment configs (JSON) and the built-in preset library."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .basis import BasisFamily
from .network import (ConstantCoupling, CouplingFunction, CuckerSmale, FormationRepulsive,
                      NetworkSpec, NoiseModel, ZeroCoupling, complete_graph, formation_offset,
                      path_graph)
from .simulator import DEFAULT_BINS, DEFAULT_BURN_IN


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    network: dict
    coupling: dict
    basis: dict
    R: float
    T_list: list = field(default_factory=lambda: [100, 1000, 10000])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    bins: int = DEFAULT_BINS
    burn_in: int = DEFAULT_BURN_IN
    out: str = "runs"
    thin: int = 1
    sweep: list = field(default_factory=list)   # distribution sweeps: [{"param", "values"}]
    resimulate: bool = True

    # -- building blocks -------------------------------------------------

    def build_spec(self, **override) -> NetworkSpec:
        net = {**self.network, **override}
        n, d = int(net["n"]), int(net.get("d", 1))
        K = float(net.get("K", 1.0))
        graph = net.get("graph", "complete")
        if graph == "complete":
            weights = complete_graph(n, K)
        elif graph in ("path", "chain"):
            weights = path_graph(n, K)
        elif isinstance(graph, list):
            weights = np.array(graph, dtype=float)
        else:
            raise ConfigError(f"unknown graph {graph!r}")
        off = net.get("offset")
        if off is None:
            offset = None
        elif isinstance(off, dict):
            offset = formation_offset(n, d, float(off["spacing"]))
        else:
            offset = np.array(off, dtype=float)
        nz = net.get("noise", {})
        noise = NoiseModel(float(nz.get("omega", 0.0)), nz.get("kind", "uniform"),
                           nz.get("amplitude"))
        return NetworkSpec(n, d, float(net["h"]), weights, noise, offset,
                           float(net.get("R0", 0.0)), net.get("distance_from", "offset"))

    def build_coupling(self, **override) -> CouplingFunction:
        c = {**self.coupling, **override}
        kind = c.get("kind")
        if kind == "cucker-smale":
            return CuckerSmale(c["gamma"], c["eta"], R=self.R)
        if kind == "formation-repulsive":
            return FormationRepulsive(c["gamma"], c["eta"], c["r0"], c["a"], R=c.get("R"))
        if kind == "zero":
            return ZeroCoupling(self.R)
        if kind == "constant":
            return ConstantCoupling(c["value"], self.R)
        raise ConfigError(f"unknown coupling kind {kind!r}")

    def build_basis(self) -> BasisFamily:
        return BasisFamily(self.basis["kind"], int(self.basis["Q"]), float(self.R))

    # -- validation and identity ----------------------------------------

    def validate(self) -> None:
        """Build every object once so bad parameters fail before any simulation."""
        try:
            spec = self.build_spec()
            self.build_coupling()
            if self.basis:
                self.build_basis()
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError) as err:
            raise ConfigError(f"invalid config {self.name!r}: {err}") from err
        if not self.T_list or any(int(T) < 1 for T in self.T_list):
            raise ConfigError("T_list must hold positive lengths")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.bins < 1:
            raise ConfigError("bins must be at least 1")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be nonnegative")
        if not self.R > 0:
            raise ConfigError("domain bound R must be positive")
        if self.thin != 1 and max(self.T_list) <= 10 ** 6:
            raise ConfigError("thinning is only used for T above 10^6")
        if max(self.T_list) > 10 ** 6 and self.thin == 1:
            raise ConfigError("full state storage above T = 10^6 needs thin > 1")
        for panel in self.sweep:
            if "param" not in panel or "values" not in panel:
                raise ConfigError("sweep panels need 'param' and 'values'")
        del spec

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = {k: v for k, v in d.items() if k != "config_hash"}
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**copy.deepcopy(d))
        except TypeError as err:
            raise ConfigError(str(err)) from err

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        return cls.from_dict(d)

    def save(self, path) -> None:
        """Write the config (minus the output directory) with its hash; ``load`` reads it back."""
        d = self.to_dict()
        d.pop("out", None)
        d["config_hash"] = self.config_hash()
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

_CS_A = dict(
    name="cucker-smale-a",
    network=dict(n=25, d=2, h=0.01, graph="complete", K=1.0, R0=0.0,
                 noise=dict(kind="uniform", omega=10.0)),
    coupling=dict(kind="cucker-smale", gamma=1.0, eta=0.4),
    basis=dict(kind="indicator", Q=20),
    R=0.6,
    T_list=[100, 1000, 10000],
    seeds=[0, 1, 2, 3, 4],
)

# Raw-distance coupling, noise level and initial spread are choices made here;
# see README for why.
_FORM_B = dict(
    name="formation-b",
    network=dict(n=20, d=1, h=0.01, graph="path", K=1.0, R0=0.5,
                 offset=dict(spacing=1.0), distance_from="state",
                 noise=dict(kind="uniform", omega=10.0)),
    coupling=dict(kind="formation-repulsive", gamma=10.0, eta=0.4, r0=1.0, a=1.01),
    basis=dict(kind="monomial", Q=10),
    R=1.01 ** (1 / 3) + 1.0 - 2e-6,
    T_list=[100, 1000, 10000],
    seeds=[0, 1, 2, 3, 4],
)

_SWEEP = dict(
    name="distribution-sweep",
    network=dict(n=50, d=2, h=0.01, graph="complete", K=1.0, R0=0.0,
                 noise=dict(kind="uniform", omega=1.0)),
    coupling=dict(kind="cucker-smale", gamma=0.4, eta=1.0),
    basis={},
    R=1.0,
    T_list=[10000],
    seeds=[0],
    sweep=[
        dict(param="eta", values=[0.5, 1.0, 2.0, 4.0]),
        dict(param="omega", values=[0.5, 1.0, 2.0, 4.0]),
        dict(param="n", values=[10, 25, 50, 100]),
        dict(param="T", values=[1000, 10000, 100000, 1000000]),
    ],
    resimulate=False,
)

PRESETS = {
    "cucker-smale-a": _CS_A,
    "formation-b": _FORM_B,
    "distribution-sweep": _SWEEP,
    "table1": {**_CS_A, "name": "table1", "T_list": [100, 1000, 10000, 100000, 1000000]},
    "table2": {**_FORM_B, "name": "table2", "T_list": [100, 1000, 10000, 100000]},
}

PRESET_NOTES = {
    "cucker-smale-a": "Cucker-Smale flocking, n=25 complete graph, d=2, indicator basis Q=20 on [0, 0.6]",
    "formation-b": "chain formation n=20, d=1, repulsive/attractive coupling, monomials Q=10",
    "distribution-sweep": "rho_T under eta / omega / n / T sweeps, Gamma=0.4, n=50",
    "table1": "cucker-smale-a sweeping T up to 10^6 (long run)",
    "table2": "formation-b sweeping T up to 10^5",
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig.from_dict(PRESETS[name])
