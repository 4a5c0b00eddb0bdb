"""Declarative run configuration, validation and the builtin presets.

A scenario bundles the site network, one bath per coupling operator, the
initial condition, integrator settings and hierarchy truncation.  Two builtin
site-energy layouts are shipped, ``up_and_down`` and ``downhill``, each in
four regimes (a-d) of the bridge-site off-diagonal bath strength:

    a: 0.0 (no conversion bath)   b: 1e-4    c: 1e-3    d: 1e-2

All energies are multiples of the unit frequency; ``unit_anchor`` records
that frequency in 1/cm for presentation-only conversion to picoseconds.
Configs serialize losslessly to a single JSON document.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bath import BathError, BathSpec, expand
from .hierarchy import HierarchyError, TruncationPolicy, enumerate_indices
from .model import (
    DiagonalCoupling,
    ModelError,
    OffDiagonalCoupling,
    SystemSpec,
    build_coupling_operators,
    build_hamiltonian,
)
from .propagator import ADOState, HeomOperator

__all__ = [
    "ScenarioConfig",
    "BathAttachment",
    "InitialCondition",
    "RunSettings",
    "ConfigError",
    "builtin_scenario",
    "builtin_names",
    "load_config",
    "loads_config",
    "config_to_dict",
    "config_from_dict",
    "dump_config",
    "assemble_operator",
    "initial_state",
    "site_labels",
    "reference_truncation",
    "time_unit_ps",
]

SPEED_OF_LIGHT_CM_S = 2.99792458e10

BUILTIN_MODELS = ("up_and_down", "downhill")
BUILTIN_REGIMES = ("a", "b", "c", "d")
REGIME_BRIDGE_LAMBDA = {"a": 0.0, "b": 1e-4, "c": 1e-3, "d": 1e-2}


class ConfigError(ValueError):
    """Raised for unparseable or inconsistent scenario configurations."""


@dataclass(frozen=True)
class BathAttachment:
    """One bath plus the system operator it couples through."""

    spec: BathSpec
    coupling: "DiagonalCoupling | OffDiagonalCoupling"


@dataclass(frozen=True)
class InitialCondition:
    """``mode="site"`` puts all population on one site (1-based);
    ``mode="boltzmann_xt"`` distributes thermally over the XT block diagonal."""

    mode: str = "site"
    site: int | None = 1

    def __post_init__(self):
        if self.mode not in ("site", "boltzmann_xt"):
            raise ConfigError(f"initial.mode must be site|boltzmann_xt, got {self.mode!r}")
        if self.mode == "site" and (self.site is None or self.site < 1):
            raise ConfigError(f"initial.site must be a 1-based index, got {self.site}")


@dataclass(frozen=True)
class RunSettings:
    dt: float = 0.01
    t_max: float = 2000.0
    record_every: int = 10

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ConfigError(f"run.dt must be > 0, got {self.dt}")
        if not (self.t_max > 0 and np.isfinite(self.t_max)):
            raise ConfigError(f"run.t_max must be > 0, got {self.t_max}")
        if self.record_every < 1:
            raise ConfigError(f"run.record_every must be >= 1, got {self.record_every}")


@dataclass(frozen=True)
class ScenarioConfig:
    system: SystemSpec
    baths: tuple[BathAttachment, ...]
    beta: float
    initial: InitialCondition
    run: RunSettings
    truncation: TruncationPolicy
    unit_anchor: float = 500.0
    label: str = ""

    def __post_init__(self):
        if not (self.beta > 0 and np.isfinite(self.beta)):
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if not (self.unit_anchor > 0 and np.isfinite(self.unit_anchor)):
            raise ConfigError(f"unit_anchor must be > 0, got {self.unit_anchor}")
        n = self.system.n_total
        for i, att in enumerate(self.baths):
            if abs(att.spec.beta - self.beta) > 1e-12 * max(1.0, self.beta):
                raise ConfigError(
                    f"baths[{i}].beta={att.spec.beta} differs from global beta={self.beta}"
                )
            c = att.coupling
            sites = (c.site,) if isinstance(c, DiagonalCoupling) else (c.site_a, c.site_b)
            for s in sites:
                if not (1 <= s <= n):
                    raise ConfigError(
                        f"baths[{i}].coupling site {s} outside 1..{n}"
                    )
        if self.initial.mode == "site" and self.initial.site > n:
            raise ConfigError(
                f"initial.site={self.initial.site} outside 1..{n}"
            )
        if self.truncation.mode == "per_bath" and len(self.truncation.caps) != len(self.baths):
            raise ConfigError(
                f"truncation.caps has {len(self.truncation.caps)} entries for "
                f"{len(self.baths)} baths"
            )


def reference_truncation() -> TruncationPolicy:
    """Deep per-bath policy for converged production runs: caps 5 per
    overdamped bath and 8 per resonance bath, total level capped at 18.
    Far beyond desk scale for the six-site presets."""
    return TruncationPolicy(
        mode="per_bath", caps=(5, 5, 5, 5, 8, 8, 5), global_cap=18
    )


def builtin_names():
    return [(m, r) for m in BUILTIN_MODELS for r in BUILTIN_REGIMES]


def builtin_scenario(name: str, regime: str, depth: int = 3) -> ScenarioConfig:
    """The two shipped six-site presets at one of the four bridge-bath regimes.

    Site energies (unit frequency): XT block (0.6, 0.6, 0.2, 0.0) in both
    models; ET block (1.0, 0.0) for ``up_and_down`` and (-0.6, -1.2) for
    ``downhill``.  XT couplings 0.5/0.5/0.01, ET hopping 0.1.  Baths 1-4 are
    overdamped on the XT sites, 5-6 resonant on the ET sites, 7 overdamped on
    the symmetric (3,4) bridge operator with regime-dependent strength.
    """
    if name not in BUILTIN_MODELS:
        raise ConfigError(f"unknown builtin scenario {name!r}; choose from {BUILTIN_MODELS}")
    if regime not in BUILTIN_REGIMES:
        raise ConfigError(f"unknown regime {regime!r}; choose from {BUILTIN_REGIMES}")

    beta = 2.4
    eps_et = (1.0, 0.0) if name == "up_and_down" else (-0.6, -1.2)
    et_omega = 1.0 if name == "up_and_down" else 0.6
    system = SystemSpec(
        n_xt=4,
        n_total=6,
        eps_xt=(0.6, 0.6, 0.2, 0.0),
        eps_et=eps_et,
        j_couplings=((1, 2, 0.5), (2, 3, 0.5), (3, 4, 0.01)),
        t_e=0.1,
    )
    lam7 = REGIME_BRIDGE_LAMBDA[regime]
    baths = []
    for site, lam in zip((1, 2, 3, 4), (0.2, 0.2, 0.2, 0.1)):
        baths.append(
            BathAttachment(
                spec=BathSpec(family="drude", lam=lam, gamma=0.1, beta=beta, n_pade=2),
                coupling=DiagonalCoupling(site=site),
            )
        )
    for site in (5, 6):
        baths.append(
            BathAttachment(
                spec=BathSpec(
                    family="brownian", lam=2.5, gamma=et_omega, beta=beta,
                    n_pade=3, omega0=et_omega,
                ),
                coupling=DiagonalCoupling(site=site),
            )
        )
    baths.append(
        BathAttachment(
            spec=BathSpec(family="drude", lam=lam7, gamma=0.5, beta=beta, n_pade=3),
            coupling=OffDiagonalCoupling(site_a=3, site_b=4),
        )
    )
    return ScenarioConfig(
        system=system,
        baths=tuple(baths),
        beta=beta,
        initial=InitialCondition(mode="site", site=1),
        run=RunSettings(dt=0.01, t_max=2000.0, record_every=10),
        truncation=TruncationPolicy(mode="total_depth", depth=depth),
        unit_anchor=500.0,
        label=f"{name}_{regime}",
    )


# ---------------------------------------------------------------------------
# serialization


def _coupling_to_dict(c):
    if isinstance(c, DiagonalCoupling):
        return {"kind": "diagonal", "site": c.site}
    return {"kind": "off_diagonal", "sites": [c.site_a, c.site_b]}


def _coupling_from_dict(d, path):
    try:
        kind = d["kind"]
    except (KeyError, TypeError):
        raise ConfigError(f"{path}.kind missing")
    if kind == "diagonal":
        if "site" not in d:
            raise ConfigError(f"{path}.site missing")
        return DiagonalCoupling(site=int(d["site"]))
    if kind == "off_diagonal":
        sites = d.get("sites")
        if not isinstance(sites, (list, tuple)) or len(sites) != 2:
            raise ConfigError(f"{path}.sites must be a pair of site indices")
        return OffDiagonalCoupling(site_a=int(sites[0]), site_b=int(sites[1]))
    raise ConfigError(f"{path}.kind must be diagonal|off_diagonal, got {kind!r}")


def config_to_dict(cfg: ScenarioConfig) -> dict:
    baths = []
    for att in cfg.baths:
        b = {
            "family": att.spec.family,
            "lambda": att.spec.lam,
            "gamma": att.spec.gamma,
            "n_pade": att.spec.n_pade,
            "coupling": _coupling_to_dict(att.coupling),
        }
        if att.spec.family == "brownian":
            b["omega0"] = att.spec.omega0
        baths.append(b)
    trunc = {"mode": cfg.truncation.mode}
    if cfg.truncation.mode == "total_depth":
        trunc["depth"] = cfg.truncation.depth
    else:
        trunc["caps"] = list(cfg.truncation.caps)
        if cfg.truncation.global_cap is not None:
            trunc["global_cap"] = cfg.truncation.global_cap
    initial = {"mode": cfg.initial.mode}
    if cfg.initial.mode == "site":
        initial["site"] = cfg.initial.site
    return {
        "system": {
            "n_xt": cfg.system.n_xt,
            "n_total": cfg.system.n_total,
            "eps_xt": list(cfg.system.eps_xt),
            "eps_et": list(cfg.system.eps_et),
            "j_couplings": [[i, j, v] for i, j, v in cfg.system.j_couplings],
            "t_e": cfg.system.t_e,
        },
        "baths": baths,
        "beta": cfg.beta,
        "initial": initial,
        "run": {
            "dt": cfg.run.dt,
            "t_max": cfg.run.t_max,
            "record_every": cfg.run.record_every,
        },
        "truncation": trunc,
        "unit_anchor": cfg.unit_anchor,
        "label": cfg.label,
    }


def _require(d: dict, key: str, path: str):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"{path}.{key} missing")
    return d[key]


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a JSON object")
    sysd = _require(data, "system", "config")
    try:
        system = SystemSpec(
            n_xt=int(_require(sysd, "n_xt", "system")),
            n_total=int(_require(sysd, "n_total", "system")),
            eps_xt=tuple(float(x) for x in _require(sysd, "eps_xt", "system")),
            eps_et=tuple(float(x) for x in _require(sysd, "eps_et", "system")),
            j_couplings=tuple(
                (int(i), int(j), float(v))
                for i, j, v in sysd.get("j_couplings", [])
            ),
            t_e=float(sysd.get("t_e", 0.0)),
        )
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc

    beta = float(_require(data, "beta", "config"))
    baths = []
    for i, b in enumerate(_require(data, "baths", "config")):
        path = f"baths[{i}]"
        family = _require(b, "family", path)
        try:
            spec = BathSpec(
                family=family,
                lam=float(_require(b, "lambda", path)),
                gamma=float(_require(b, "gamma", path)),
                beta=beta,
                n_pade=int(_require(b, "n_pade", path)),
                omega0=float(b["omega0"]) if "omega0" in b else None,
            )
        except BathError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        coupling = _coupling_from_dict(_require(b, "coupling", path), f"{path}.coupling")
        baths.append(BathAttachment(spec=spec, coupling=coupling))

    initd = _require(data, "initial", "config")
    initial = InitialCondition(
        mode=_require(initd, "mode", "initial"),
        site=int(initd["site"]) if "site" in initd else None,
    )
    rund = _require(data, "run", "config")
    run = RunSettings(
        dt=float(_require(rund, "dt", "run")),
        t_max=float(_require(rund, "t_max", "run")),
        record_every=int(rund.get("record_every", 1)),
    )
    truncd = _require(data, "truncation", "config")
    mode = _require(truncd, "mode", "truncation")
    try:
        if mode == "total_depth":
            trunc = TruncationPolicy(mode=mode, depth=int(_require(truncd, "depth", "truncation")))
        else:
            trunc = TruncationPolicy(
                mode=mode,
                caps=tuple(int(c) for c in _require(truncd, "caps", "truncation")),
                global_cap=int(truncd["global_cap"]) if "global_cap" in truncd else None,
            )
    except HierarchyError as exc:
        raise ConfigError(f"truncation: {exc}") from exc

    return ScenarioConfig(
        system=system,
        baths=tuple(baths),
        beta=beta,
        initial=initial,
        run=run,
        truncation=trunc,
        unit_anchor=float(data.get("unit_anchor", 500.0)),
        label=str(data.get("label", "")),
    )


def dump_config(cfg: ScenarioConfig, indent: int = 2) -> str:
    return json.dumps(config_to_dict(cfg), indent=indent, sort_keys=False)


def loads_config(text: str) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        text = fh.read()
    return loads_config(text)


# ---------------------------------------------------------------------------
# assembly


def site_labels(system: SystemSpec) -> list[str]:
    labels = [f"e{i}" for i in range(1, system.n_xt + 1)]
    labels += [f"c{j}" for j in range(system.n_xt + 1, system.n_total + 1)]
    return labels


def _series_is_null(series) -> bool:
    return series.delta == 0.0 and all(t.coefficient == 0.0 for t in series.terms)


def assemble_operator(
    cfg: ScenarioConfig,
    engine: str = "auto",
    threads: int = 1,
    scheme: str = "pade",
) -> HeomOperator:
    """Expand every bath, enumerate the hierarchy and build the operator.

    Baths whose expansion is identically zero (zero coupling strength) are
    dropped from the hierarchy, so a regime-(a) preset propagates exactly as
    if its bridge bath were omitted.
    """
    ham = build_hamiltonian(cfg.system)
    ops = build_coupling_operators(cfg.system, [a.coupling for a in cfg.baths])
    expanded = []
    caps = []
    for i, att in enumerate(cfg.baths):
        try:
            series = expand(att.spec, scheme=scheme)
        except BathError as exc:
            raise ConfigError(f"baths[{i}]: {exc}") from exc
        if _series_is_null(series):
            continue
        expanded.append((ops[i], series))
        if cfg.truncation.mode == "per_bath":
            caps.append(cfg.truncation.caps[i])

    if not expanded:
        return _closed_operator(ham, engine, threads)

    n_fields = sum(len(s.terms) for _, s in expanded)
    bath_of_field = np.concatenate(
        [np.full(len(s.terms), k, dtype=np.int64) for k, (_, s) in enumerate(expanded)]
    )
    if cfg.truncation.mode == "per_bath":
        policy = TruncationPolicy(
            mode="per_bath", caps=tuple(caps), global_cap=cfg.truncation.global_cap
        )
    else:
        policy = cfg.truncation
    hier = enumerate_indices(n_fields, policy, bath_of_field=bath_of_field)
    return HeomOperator(ham, expanded, hier, engine=engine, threads=threads)


def _closed_operator(ham, engine, threads):
    # no active baths: single zero-coefficient field at depth 0 keeps the
    # operator machinery uniform while reducing to pure unitary dynamics
    from .bath import ExponentialSeries, ExponentialTerm
    from .model import CouplingOperator

    policy = TruncationPolicy(mode="total_depth", depth=0)
    hier = enumerate_indices(1, policy)
    dummy_op = CouplingOperator(
        kind=DiagonalCoupling(site=1),
        matrix=np.zeros((ham.dim, ham.dim)),
    )
    dummy_series = ExponentialSeries(
        terms=(ExponentialTerm(c_prime=0.0, c_dprime=0.0, rate=1.0 + 0j),), delta=0.0
    )
    return HeomOperator(ham, [(dummy_op, dummy_series)], hier,
                        engine=engine, threads=threads)


def initial_state(cfg: ScenarioConfig, n_ados: int) -> ADOState:
    """Factorized initial stack from the configured initial condition."""
    n = cfg.system.n_total
    rho = np.zeros((n, n), dtype=np.complex128)
    if cfg.initial.mode == "site":
        rho[cfg.initial.site - 1, cfg.initial.site - 1] = 1.0
    else:
        weights = np.exp(-cfg.beta * np.asarray(cfg.system.eps_xt))
        weights /= weights.sum()
        for i, w in enumerate(weights):
            rho[i, i] = w
    return ADOState.from_rho(rho, n_ados)


def time_unit_ps(unit_anchor_cm: float) -> float:
    """Picoseconds per unit of reduced time for a frequency anchor in 1/cm."""
    return 1e12 / (2.0 * math.pi * SPEED_OF_LIGHT_CM_S * unit_anchor_cm)
