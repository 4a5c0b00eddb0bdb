"""Site-basis Hamiltonian and bath coupling operators for XT/ET networks.

The state space is the single-excitation basis
``{|e_1>, ..., |e_nxt>, |c_{nxt+1}>, ..., |c_N>}``: exciton (XT) sites first,
charge-transfer (ET) sites after, both in ascending site order.  All energies
and couplings are dimensionless multiples of the unit frequency (hbar = 1,
time in inverse frequency units).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SystemSpec",
    "SystemHamiltonian",
    "CouplingOperator",
    "DiagonalCoupling",
    "OffDiagonalCoupling",
    "build_hamiltonian",
    "build_coupling_operators",
]


class ModelError(ValueError):
    """Raised for inconsistent system specifications."""


@dataclass(frozen=True)
class SystemSpec:
    """Declarative description of the XT/ET site network.

    Attributes
    ----------
    n_xt : int
        Number of exciton sites (first block of the basis).
    n_total : int
        Total number of sites N; the ET block holds ``n_total - n_xt`` sites.
    eps_xt : tuple of float
        XT site energies, one per XT site.
    eps_et : tuple of float
        ET site energies, one per ET site.
    j_couplings : tuple of (int, int, float)
        Nearest-neighbour XT couplings as 1-based site pairs ``(i, j, J_ij)``.
        Pairs must lie inside the XT block.
    t_e : float
        ET hopping, applied between the last XT site and the first ET site
        (the bridge) and along the ET chain.
    """

    n_xt: int
    n_total: int
    eps_xt: tuple[float, ...]
    eps_et: tuple[float, ...]
    j_couplings: tuple[tuple[int, int, float], ...] = field(default_factory=tuple)
    t_e: float = 0.0

    def __post_init__(self):
        if not (1 <= self.n_xt < self.n_total):
            raise ModelError(
                f"n_xt must satisfy 1 <= n_xt < n_total, got n_xt={self.n_xt}, "
                f"n_total={self.n_total}"
            )
        if len(self.eps_xt) != self.n_xt:
            raise ModelError(
                f"system.eps_xt has length {len(self.eps_xt)}, expected n_xt={self.n_xt}"
            )
        if len(self.eps_et) != self.n_total - self.n_xt:
            raise ModelError(
                f"system.eps_et has length {len(self.eps_et)}, expected "
                f"n_total - n_xt = {self.n_total - self.n_xt}"
            )
        for value, name in ((self.eps_xt, "eps_xt"), (self.eps_et, "eps_et")):
            if not all(np.isfinite(v) for v in value):
                raise ModelError(f"system.{name} contains a non-finite entry")
        if not np.isfinite(self.t_e):
            raise ModelError("system.t_e is not finite")
        for i, j, val in self.j_couplings:
            if not (1 <= i <= self.n_xt and 1 <= j <= self.n_xt):
                raise ModelError(
                    f"system.j_couplings pair ({i},{j}) lies outside the XT block "
                    f"1..{self.n_xt}"
                )
            if i == j:
                raise ModelError(f"system.j_couplings pair ({i},{j}) is diagonal")
            if not np.isfinite(val):
                raise ModelError(f"system.j_couplings value for ({i},{j}) is not finite")


@dataclass(frozen=True)
class SystemHamiltonian:
    """Dense Hermitian system Hamiltonian in the fixed site basis."""

    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.shape != (self.dim, self.dim):
            raise ModelError(f"Hamiltonian shape {m.shape} does not match dim={self.dim}")


@dataclass(frozen=True)
class CouplingOperator:
    """System-side bath coupling operator V_k.

    ``kind`` is either a :class:`DiagonalCoupling` (projector ``|s><s|``) or an
    :class:`OffDiagonalCoupling` (``|a><b| + |b><a|``); ``matrix`` is the dense
    real-symmetric realisation with unit entries.
    """

    kind: "DiagonalCoupling | OffDiagonalCoupling"
    matrix: np.ndarray


@dataclass(frozen=True)
class DiagonalCoupling:
    """Diagonal coupling on one site (1-based)."""

    site: int


@dataclass(frozen=True)
class OffDiagonalCoupling:
    """Symmetric off-diagonal coupling between two sites (1-based)."""

    site_a: int
    site_b: int


def build_hamiltonian(spec: SystemSpec) -> SystemHamiltonian:
    """Assemble the dense Hamiltonian from a system specification.

    Diagonal entries are the XT energies followed by the ET energies in site
    order.  The listed XT couplings fill the XT block, the bridge entry
    ``(n_xt-1, n_xt)`` and the ET chain entries carry ``t_e``.  The matrix is
    filled symmetrically, so the result is Hermitian exactly.
    """
    n = spec.n_total
    h = np.zeros((n, n), dtype=np.complex128)
    for i, e in enumerate(spec.eps_xt):
        h[i, i] = e
    for j, e in enumerate(spec.eps_et):
        h[spec.n_xt + j, spec.n_xt + j] = e
    for i, j, val in spec.j_couplings:
        h[i - 1, j - 1] += val
        h[j - 1, i - 1] += val
    # bridge from the last XT site into the ET chain, then along the chain
    for j in range(spec.n_xt - 1, n - 1):
        h[j, j + 1] += spec.t_e
        h[j + 1, j] += spec.t_e
    return SystemHamiltonian(dim=n, matrix=h)


def build_coupling_operators(
    spec: SystemSpec,
    assignments: "list[DiagonalCoupling | OffDiagonalCoupling]",
) -> list[CouplingOperator]:
    """Build one coupling operator per bath from the assignment list.

    Raises
    ------
    ModelError
        If any referenced site index is outside ``1..n_total``.
    """
    n = spec.n_total
    ops = []
    for pos, kind in enumerate(assignments):
        m = np.zeros((n, n), dtype=np.float64)
        if isinstance(kind, DiagonalCoupling):
            if not (1 <= kind.site <= n):
                raise ModelError(
                    f"bath {pos + 1}: coupling site {kind.site} out of range 1..{n}"
                )
            m[kind.site - 1, kind.site - 1] = 1.0
        elif isinstance(kind, OffDiagonalCoupling):
            for s in (kind.site_a, kind.site_b):
                if not (1 <= s <= n):
                    raise ModelError(
                        f"bath {pos + 1}: coupling site {s} out of range 1..{n}"
                    )
            if kind.site_a == kind.site_b:
                raise ModelError(
                    f"bath {pos + 1}: off-diagonal coupling needs two distinct sites"
                )
            m[kind.site_a - 1, kind.site_b - 1] = 1.0
            m[kind.site_b - 1, kind.site_a - 1] = 1.0
        else:
            raise ModelError(f"bath {pos + 1}: unknown coupling kind {kind!r}")
        ops.append(CouplingOperator(kind=kind, matrix=m))
    return ops
