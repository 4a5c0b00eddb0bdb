"""Hierarchy right-hand side assembly and time propagation.

The equations of motion for the stack of auxiliary density operators are,
with L A = [H, A], Phi_k A = i [V_k, A] and Psi_k A = {V_k, A} (hbar = 1):

    d/dt A_n = -(i L + sum_f n_f rate_f) A_n
               - sum_k delta_k [V_k, [V_k, A_n]]
               - sum_k Phi_k sum_{f in k} A_{n + e_f}
               - sum_{f} n_f (a_f Phi_k - b_f Psi_k) A_{n - e_f}

where a_f and b_f are the commutator/anticommutator channel coefficients of
the bath expansion.  Index vectors outside the truncated set contribute
nothing (see `hierarchy`); the per-bath white-noise strength delta_k closes
the dropped fast tail as the double-commutator dephasing term above.

Propagation uses an integrating-factor (Lawson) classical Runge-Kutta
scheme: the stiff diagonal damping sum_f n_f rate_f is applied as an exact
per-operator exponential between stages, the bounded coupling terms go
through the standard fourth-order tableau.  With no damping the scheme
reduces exactly to classical RK4.

The right-hand side is embarrassingly parallel over hierarchy positions:
each output operator is written by exactly one worker from read-only inputs,
so results are bit-identical for any thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .bath import ExponentialSeries
from .hierarchy import HierarchyIndexSet
from .model import CouplingOperator, DiagonalCoupling, OffDiagonalCoupling, SystemHamiltonian

__all__ = [
    "ADOState",
    "Trajectory",
    "Superoperators",
    "HeomOperator",
    "PropagationError",
    "heom_rhs",
    "propagate",
    "steady_diagnostics",
    "equilibration_time",
    "write_trajectory_csv",
]


class PropagationError(RuntimeError):
    """Raised when propagation leaves the physical regime (NaN, trace loss)."""


@dataclass
class ADOState:
    """Full stack of auxiliary density operators; index 0 is the physical one."""

    ados: np.ndarray  # (n_ados, dim, dim) complex128
    time: float = 0.0

    @classmethod
    def from_rho(cls, rho: np.ndarray, n_ados: int, time: float = 0.0) -> "ADOState":
        """Factorized initial stack: physical matrix set, all others zero."""
        rho = np.asarray(rho, dtype=np.complex128)
        dim = rho.shape[0]
        ados = np.zeros((n_ados, dim, dim), dtype=np.complex128)
        ados[0] = rho
        return cls(ados=ados, time=time)

    @property
    def rho(self) -> np.ndarray:
        return self.ados[0]


@dataclass
class Trajectory:
    """Recorded observables of one propagation."""

    times: np.ndarray                 # (n,)
    populations: np.ndarray           # (n, dim), real
    trace: np.ndarray                 # (n,), complex
    herm_defect: np.ndarray           # (n,), max |rho - rho^dag| of the physical matrix
    coherences: dict = field(default_factory=dict)   # (i, j) 1-based -> (n,) complex
    final_state: ADOState | None = None

    @property
    def dim(self) -> int:
        return self.populations.shape[1]


class Superoperators:
    """Elementary superoperators of one bath coupling, for reference use.

    The propagation kernels apply these sparsely; this class exists so tests
    and small calculations can use the same definitions directly.
    """

    def __init__(self, hamiltonian: np.ndarray, coupling: np.ndarray):
        self.h = np.asarray(hamiltonian, dtype=np.complex128)
        self.v = np.asarray(coupling, dtype=np.complex128)

    def liouvillian(self, rho):
        return self.h @ rho - rho @ self.h

    def phi(self, rho):
        return 1j * (self.v @ rho - rho @ self.v)

    def psi(self, rho):
        return self.v @ rho + rho @ self.v

    def theta(self, rho, c_prime, c_dprime):
        return c_prime * self.phi(rho) - c_dprime * self.psi(rho)


def _encode_coupling(op: CouplingOperator):
    kind = op.kind
    if isinstance(kind, DiagonalCoupling):
        return 0, kind.site - 1, kind.site - 1
    if isinstance(kind, OffDiagonalCoupling):
        return 1, kind.site_a - 1, kind.site_b - 1
    raise ValueError(f"unsupported coupling kind {kind!r}")


class HeomOperator:
    """Precomputed right-hand side over one hierarchy index set.

    Parameters
    ----------
    system : SystemHamiltonian
    baths : list of (CouplingOperator, ExponentialSeries)
        One entry per bath; the series fixes this bath's field group.
    hierarchy : HierarchyIndexSet
        Must have been enumerated with n_fields equal to the total number of
        series terms.
    engine : str
        "numba" (default when available), "numpy", or "auto".
    """

    def __init__(self, system: SystemHamiltonian, baths, hierarchy: HierarchyIndexSet,
                 engine: str = "auto", threads: int = 1):
        counts = [len(series.terms) for _, series in baths]
        if sum(counts) != hierarchy.n_fields:
            raise ValueError(
                f"hierarchy has {hierarchy.n_fields} fields but baths supply "
                f"{sum(counts)} exponential terms"
            )
        self.system = system
        self.baths = list(baths)
        self.hierarchy = hierarchy
        self.dim = system.dim
        self.n_ados = hierarchy.size

        if engine == "auto":
            engine = "numba" if _kernels.HAVE_NUMBA else "numpy"
        if engine == "numba" and not _kernels.HAVE_NUMBA:
            raise ValueError("numba engine requested but numba is unavailable")
        if engine not in ("numba", "numpy"):
            raise ValueError(f"unknown engine {engine!r}")
        self.engine = engine
        self.threads = int(threads)

        h = np.asarray(system.matrix, dtype=np.complex128)
        rows, cols = np.nonzero(h)
        self._h_rows = rows.astype(np.int64)
        self._h_cols = cols.astype(np.int64)
        self._h_vals = h[rows, cols].astype(np.complex128)
        self._h = h

        field_bath, field_a, field_b, rates = [], [], [], []
        v_kind, v_a, v_b, deltas = [], [], [], []
        for k, (op, series) in enumerate(self.baths):
            kk, aa, bb = _encode_coupling(op)
            v_kind.append(kk)
            v_a.append(aa)
            v_b.append(bb)
            deltas.append(float(series.delta))
            for term in series.terms:
                field_bath.append(k)
                field_a.append(complex(term.c_prime))
                field_b.append(complex(term.c_dprime))
                rates.append(complex(term.rate))
        self._field_bath = np.array(field_bath, dtype=np.int64)
        self._field_a = np.array(field_a, dtype=np.complex128)
        self._field_b = np.array(field_b, dtype=np.complex128)
        self._rates = np.array(rates, dtype=np.complex128)
        self._v_kind = np.array(v_kind, dtype=np.int64)
        self._v_a = np.array(v_a, dtype=np.int64)
        self._v_b = np.array(v_b, dtype=np.int64)
        self._deltas = np.array(deltas, dtype=np.float64)

        pad = self.n_ados  # zero-pad position used by the numpy engine
        self._up = np.where(hierarchy.up >= 0, hierarchy.up, pad).astype(np.int64)
        self._down = np.where(hierarchy.down >= 0, hierarchy.down, pad).astype(np.int64)
        self._n_vals = hierarchy.indices.astype(np.float64)
        self._damping = self._n_vals @ self._rates
        self._no_damping = np.zeros_like(self._damping)

        # CSR edge lists over in-set neighbours only (numba engine)
        m = hierarchy.size
        rows, fields = np.nonzero(hierarchy.up >= 0)
        self._up_ptr = np.zeros(m + 1, dtype=np.int64)
        self._up_ptr[1:] = np.cumsum(np.bincount(rows, minlength=m))
        self._up_field = fields.astype(np.int64)
        self._up_tgt = hierarchy.up[rows, fields].astype(np.int64)
        rows, fields = np.nonzero(hierarchy.down >= 0)
        self._dn_ptr = np.zeros(m + 1, dtype=np.int64)
        self._dn_ptr[1:] = np.cumsum(np.bincount(rows, minlength=m))
        self._dn_field = fields.astype(np.int64)
        self._dn_tgt = hierarchy.down[rows, fields].astype(np.int64)
        self._dn_n = hierarchy.indices[rows, fields].astype(np.float64)

        self._pad_buffer = np.zeros((self.n_ados + 1, self.dim, self.dim), dtype=np.complex128)

    def field_labels(self):
        """(bath index, term index) for every hierarchy field, in field order."""
        labels = []
        for k, (_, series) in enumerate(self.baths):
            labels.extend((k, j) for j in range(len(series.terms)))
        return labels

    def rhs(self, stack: np.ndarray, out: np.ndarray | None = None,
            include_damping: bool = True) -> np.ndarray:
        """Time derivative of a full ADO stack.

        ``include_damping=False`` omits the diagonal term -(sum_f n_f rate_f),
        which the Lawson propagator applies exactly through exponential
        factors instead.
        """
        if out is None:
            out = np.empty_like(stack)
        damping = self._damping if include_damping else self._no_damping
        if self.engine == "numba":
            stack = np.ascontiguousarray(stack, dtype=np.complex128)
            _kernels.set_threads(self.threads)
            _kernels.heom_rhs_kernel(
                stack, out, self._h_rows, self._h_cols, self._h_vals, damping,
                self._up_ptr, self._up_field, self._up_tgt,
                self._dn_ptr, self._dn_field, self._dn_tgt, self._dn_n,
                self._field_bath, self._field_a, self._field_b,
                self._v_kind, self._v_a, self._v_b, self._deltas,
            )
        else:
            pad = self._pad_buffer
            pad[: self.n_ados] = stack
            self._rhs_numpy(pad, out, damping)
        return out

    # reference engine: identical mathematics, vectorized over the stack
    def _rhs_numpy(self, pad, out, damping):
        m = self.n_ados
        a = pad[:m]
        np.matmul(self._h, a, out=out)
        out -= np.matmul(a, self._h)
        out *= -1j
        out -= damping[:, None, None] * a

        for k in range(len(self.baths)):
            dl = self._deltas[k]
            if dl == 0.0:
                continue
            ia, ib = self._v_a[k], self._v_b[k]
            if self._v_kind[k] == 0:
                out[:, ia, :] -= dl * a[:, ia, :]
                out[:, :, ia] -= dl * a[:, :, ia]
                out[:, ia, ia] += 2.0 * dl * a[:, ia, ia]
            else:
                out[:, ia, :] -= dl * a[:, ia, :]
                out[:, ib, :] -= dl * a[:, ib, :]
                out[:, :, ia] -= dl * a[:, :, ia]
                out[:, :, ib] -= dl * a[:, :, ib]
                out[:, ia, ia] += 2.0 * dl * a[:, ib, ib]
                out[:, ia, ib] += 2.0 * dl * a[:, ib, ia]
                out[:, ib, ia] += 2.0 * dl * a[:, ia, ib]
                out[:, ib, ib] += 2.0 * dl * a[:, ia, ia]

        for f in range(self.hierarchy.n_fields):
            k = self._field_bath[f]
            ia, ib = self._v_a[k], self._v_b[k]
            xu = pad[self._up[:, f]]
            if self._v_kind[k] == 0:
                out[:, ia, :] -= 1j * xu[:, ia, :]
                out[:, :, ia] += 1j * xu[:, :, ia]
            else:
                out[:, ia, :] -= 1j * xu[:, ib, :]
                out[:, ib, :] -= 1j * xu[:, ia, :]
                out[:, :, ia] += 1j * xu[:, :, ib]
                out[:, :, ib] += 1j * xu[:, :, ia]

            nv = self._n_vals[:, f]
            if not nv.any():
                continue
            xd = pad[self._down[:, f]]
            wa = (1j * self._field_a[f]) * nv
            if self._v_kind[k] == 0:
                out[:, ia, :] -= wa[:, None] * xd[:, ia, :]
                out[:, :, ia] += wa[:, None] * xd[:, :, ia]
            else:
                out[:, ia, :] -= wa[:, None] * xd[:, ib, :]
                out[:, ib, :] -= wa[:, None] * xd[:, ia, :]
                out[:, :, ia] += wa[:, None] * xd[:, :, ib]
                out[:, :, ib] += wa[:, None] * xd[:, :, ia]
            if self._field_b[f] != 0.0:
                wb = self._field_b[f] * nv
                if self._v_kind[k] == 0:
                    out[:, ia, :] += wb[:, None] * xd[:, ia, :]
                    out[:, :, ia] += wb[:, None] * xd[:, :, ia]
                else:
                    out[:, ia, :] += wb[:, None] * xd[:, ib, :]
                    out[:, ib, :] += wb[:, None] * xd[:, ia, :]
                    out[:, :, ia] += wb[:, None] * xd[:, :, ib]
                    out[:, :, ib] += wb[:, None] * xd[:, :, ia]


def heom_rhs(state: ADOState, system: SystemHamiltonian, baths,
             hierarchy: HierarchyIndexSet, engine: str = "numpy") -> ADOState:
    """Functional right-hand side evaluation (builds the operator each call)."""
    op = HeomOperator(system, baths, hierarchy, engine=engine)
    bad = ~np.isfinite(state.ados.view(np.float64))
    if bad.any():
        idx = int(np.nonzero(bad.reshape(state.ados.shape[0], -1).any(axis=1))[0][0])
        raise PropagationError(f"non-finite ADO {idx} at t={state.time}")
    return ADOState(ados=op.rhs(state.ados), time=state.time)


def propagate(
    op: HeomOperator,
    initial: ADOState,
    dt: float,
    t_max: float,
    record_every: int = 1,
    record_coherences=(),
    abort_trace_drift: float = 1e-4,
    abort_negativity: float = 1e-3,
    progress=None,
) -> Trajectory:
    """Fixed-step Lawson RK4 propagation with periodic recording.

    Records at t = 0 and every ``record_every`` steps.  At each record point
    the physical matrix is checked: non-finite entries anywhere in the stack,
    trace drift beyond ``abort_trace_drift`` or populations below
    ``-abort_negativity`` abort with a `PropagationError`.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    n_steps = int(round(t_max / dt))
    if abs(n_steps * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise ValueError(f"t_max={t_max} is not an integer multiple of dt={dt}")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")

    u = np.array(initial.ados, dtype=np.complex128, copy=True)
    if u.shape != (op.n_ados, op.dim, op.dim):
        raise ValueError(
            f"state shape {u.shape} does not match operator "
            f"({op.n_ados}, {op.dim}, {op.dim})"
        )

    half = 0.5 * dt
    e1v = np.exp(-op._damping * half)
    e1 = e1v[:, None, None]
    e2v = e1v * e1v
    e2 = e2v[:, None, None]
    fused = op.engine == "numba"
    k1 = np.empty_like(u)
    k2 = np.empty_like(u)
    k3 = np.empty_like(u)
    k4 = np.empty_like(u)
    stage = np.empty_like(u)

    n_records = n_steps // record_every + 1
    times = np.empty(n_records)
    populations = np.empty((n_records, op.dim))
    trace = np.empty(n_records, dtype=np.complex128)
    herm = np.empty(n_records)
    coh_pairs = [tuple(p) for p in record_coherences]
    coherences = {p: np.empty(n_records, dtype=np.complex128) for p in coh_pairs}

    def record(slot, step):
        t = initial.time + step * dt
        rho = u[0]
        times[slot] = t
        pops = np.real(np.diag(rho))
        populations[slot] = pops
        tr = np.trace(rho)
        trace[slot] = tr
        herm[slot] = float(np.max(np.abs(rho - rho.conj().T)))
        for p in coh_pairs:
            coherences[p][slot] = rho[p[0] - 1, p[1] - 1]
        if not np.all(np.isfinite(u.view(np.float64))):
            flat = np.isfinite(u.view(np.float64)).reshape(u.shape[0], -1).all(axis=1)
            idx = int(np.nonzero(~flat)[0][0])
            raise PropagationError(f"non-finite ADO {idx} at t={t}")
        if abs(tr - 1.0) > abort_trace_drift:
            raise PropagationError(
                f"trace drifted to {tr} at t={t} (limit {abort_trace_drift})"
            )
        if pops.min() < -abort_negativity:
            raise PropagationError(
                f"population {pops.min()} below -{abort_negativity} at t={t}"
            )

    record(0, 0)
    slot = 1
    for step in range(1, n_steps + 1):
        op.rhs(u, out=k1, include_damping=False)
        if fused:
            _kernels.stage_scaled_sum(stage, e1v, u, k1, half)
            op.rhs(stage, out=k2, include_damping=False)
            _kernels.stage_mixed_sum(stage, e1v, u, k2, half)
            op.rhs(stage, out=k3, include_damping=False)
            _kernels.stage_two_scale(stage, e2v, u, e1v, k3, dt)
            op.rhs(stage, out=k4, include_damping=False)
            _kernels.lawson_combine(u, e1v, e2v, k1, k2, k3, k4, dt)
        else:
            # stage 2: E1*(u + h/2 k1)
            np.multiply(k1, half, out=stage)
            stage += u
            stage *= e1
            op.rhs(stage, out=k2, include_damping=False)
            # stage 3: E1*u + h/2 k2
            np.multiply(u, e1, out=stage)
            np.multiply(k2, half, out=k3)   # k3 as scratch before its own fill
            stage += k3
            op.rhs(stage, out=k3, include_damping=False)
            # stage 4: E2*u + h E1*k3
            np.multiply(u, e2, out=stage)
            np.multiply(k3, e1, out=k4)     # k4 as scratch
            k4 *= dt
            stage += k4
            op.rhs(stage, out=k4, include_damping=False)
            # combine: u <- E2*u + h/6 (E2 k1 + 2 E1 (k2 + k3) + k4)
            u *= e2
            k1 *= e2
            k1 *= dt / 6.0
            u += k1
            k2 += k3
            k2 *= e1
            k2 *= dt / 3.0
            u += k2
            k4 *= dt / 6.0
            u += k4
        if step % record_every == 0:
            record(slot, step)
            slot += 1
            if progress is not None:
                progress(step, n_steps)

    return Trajectory(
        times=times,
        populations=populations,
        trace=trace,
        herm_defect=herm,
        coherences=coherences,
        final_state=ADOState(ados=u, time=initial.time + n_steps * dt),
    )


def steady_diagnostics(traj: Trajectory, window: tuple[float, float]):
    """Windowed means and linear drifts of every site population.

    Returns a dict with per-site arrays ``mean`` and ``drift`` (slope per unit
    time from a least-squares fit over the window).
    """
    t0, t1 = window
    if t0 >= t1:
        raise ValueError(f"empty window {window}")
    if t0 < traj.times[0] - 1e-12 or t1 > traj.times[-1] + 1e-12:
        raise ValueError(
            f"window {window} outside trajectory range "
            f"[{traj.times[0]}, {traj.times[-1]}]"
        )
    mask = (traj.times >= t0 - 1e-12) & (traj.times <= t1 + 1e-12)
    if mask.sum() < 2:
        raise ValueError(f"window {window} covers fewer than two samples")
    ts = traj.times[mask]
    pops = traj.populations[mask]
    mean = pops.mean(axis=0)
    tc = ts - ts.mean()
    denom = float(np.dot(tc, tc))
    drift = (tc @ (pops - mean)) / denom if denom > 0 else np.zeros(traj.dim)
    return {"mean": mean, "drift": drift, "window": (float(t0), float(t1))}


def equilibration_time(traj: Trajectory, site: int,
                       plateau_fraction: float = 0.2,
                       level: float = 0.9) -> float:
    """First time the 1-based ``site`` population reaches ``level`` times its
    mean over the trailing ``plateau_fraction`` of the run; NaN if never."""
    t_end = traj.times[-1]
    t0 = t_end - plateau_fraction * (t_end - traj.times[0])
    plateau = steady_diagnostics(traj, (t0, t_end))["mean"][site - 1]
    target = level * plateau
    pop = traj.populations[:, site - 1]
    hits = np.nonzero(pop >= target)[0]
    return float(traj.times[hits[0]]) if hits.size else float("nan")


def write_trajectory_csv(traj: Trajectory, path, site_labels):
    """Write the trajectory CSV: t, per-site populations, trace components.

    Full double precision, deterministic formatting.
    """
    if len(site_labels) != traj.dim:
        raise ValueError(
            f"{len(site_labels)} labels given for {traj.dim} populations"
        )
    with open(path, "w") as fh:
        header = ["t"] + [f"P_{lab}" for lab in site_labels] + ["trace_re", "trace_im"]
        fh.write(",".join(header) + "\n")
        for i, t in enumerate(traj.times):
            row = [f"{t:.17g}"]
            row += [f"{p:.17g}" for p in traj.populations[i]]
            row += [f"{traj.trace[i].real:.17g}", f"{traj.trace[i].imag:.17g}"]
            fh.write(",".join(row) + "\n")
