"""Built-in validation suites with independent oracles.

Each suite pits the solver against a result obtained by a different route:

- ``superop``: the matrix-free right-hand side versus a dense superoperator
  assembled from Kronecker products over a small hierarchy.
- ``rabi``: a closed two-site system versus the analytic Rabi formula.
- ``dephasing``: coherence decay under a diagonal overdamped coupling versus
  the exact dephasing exponent computed by quadrature.
- ``correlation``: every preset bath's exponential series versus the
  quadrature correlation oracle, plus the white-noise closure versus the
  numerically integrated dropped tail.
- ``thermal``: weak-coupling equilibrium population ratio versus the
  Boltzmann factor.

Suites return dictionaries with measured errors and tolerances so callers
(CLI and tests) can render or assert uniformly.
"""

from __future__ import annotations

import math
import time

import numpy as np
from scipy.integrate import quad

from .bath import (
    BathSpec,
    correlation_integral_reference,
    expand,
    reconstruction_error,
)
from .hierarchy import TruncationPolicy, enumerate_indices
from .model import (
    DiagonalCoupling,
    OffDiagonalCoupling,
    SystemSpec,
    build_coupling_operators,
    build_hamiltonian,
)
from .propagator import ADOState, HeomOperator, propagate
from .scenarios import builtin_scenario

__all__ = [
    "dense_heom_matrix",
    "dephasing_exponent_reference",
    "validate_superop",
    "validate_rabi",
    "validate_dephasing",
    "validate_correlation",
    "validate_thermal",
    "run_suites",
    "SUITES",
]


# ---------------------------------------------------------------------------
# dense superoperator oracle (kron route, independent of the sparse kernels)


def _kron_left(a, d):
    return np.kron(a, np.eye(d))


def _kron_right(b, d):
    return np.kron(np.eye(d), b.T)


def dense_heom_matrix(system, baths, hierarchy) -> np.ndarray:
    """Full dense generator over the ADO stack, via Kronecker superoperators.

    Row-major vectorization: vec(A X B) = kron(A, B^T) vec(X).  Only suitable
    for small instances; the propagation kernels never use this路径.
    """
    d = system.dim
    h = np.asarray(system.matrix, dtype=np.complex128)
    liou = _kron_left(h, d) - _kron_right(h, d)

    phis, psis, deltas = [], [], []
    field_bath, field_a, field_b, rates = [], [], [], []
    for k, (op, series) in enumerate(baths):
        v = np.asarray(op.matrix, dtype=np.complex128)
        phis.append(1j * (_kron_left(v, d) - _kron_right(v, d)))
        psis.append(_kron_left(v, d) + _kron_right(v, d))
        deltas.append(series.delta)
        for term in series.terms:
            field_bath.append(k)
            field_a.append(complex(term.c_prime))
            field_b.append(complex(term.c_dprime))
            rates.append(complex(term.rate))

    m = hierarchy.size
    blk = d * d
    gen = np.zeros((m * blk, m * blk), dtype=np.complex128)
    eye = np.eye(blk)
    for i in range(m):
        n_vec = hierarchy.indices[i]
        diag = -1j * liou - sum(nf * r for nf, r in zip(n_vec, rates)) * eye
        for k in range(len(baths)):
            # -delta [V,[V,.]] = +delta Phi^2 since Phi = i [V, .]
            diag = diag + deltas[k] * (phis[k] @ phis[k])
        gen[i * blk:(i + 1) * blk, i * blk:(i + 1) * blk] = diag
        for f in range(hierarchy.n_fields):
            k = field_bath[f]
            iu = hierarchy.up[i, f]
            if iu >= 0:
                gen[i * blk:(i + 1) * blk, iu * blk:(iu + 1) * blk] += -phis[k]
            idn = hierarchy.down[i, f]
            if idn >= 0 and n_vec[f] > 0:
                theta = field_a[f] * phis[k] - field_b[f] * psis[k]
                gen[i * blk:(i + 1) * blk, idn * blk:(idn + 1) * blk] += -n_vec[f] * theta
    return gen


# ---------------------------------------------------------------------------
# suites


def validate_superop(engine: str = "auto") -> dict:
    """Matrix-free RHS versus dense Kronecker assembly on a tiny instance."""
    start = time.perf_counter()
    system = build_hamiltonian(
        SystemSpec(n_xt=1, n_total=2, eps_xt=(0.3,), eps_et=(-0.2,), t_e=0.25)
    )
    spec = BathSpec(family="drude", lam=0.15, gamma=0.4, beta=2.4, n_pade=1)
    series = expand(spec)
    assert len(series.terms) == 2
    ops = build_coupling_operators(
        SystemSpec(n_xt=1, n_total=2, eps_xt=(0.0,), eps_et=(0.0,)),
        [DiagonalCoupling(site=1)],
    )
    baths = [(ops[0], series)]
    hier = enumerate_indices(2, TruncationPolicy(mode="total_depth", depth=2))
    gen = dense_heom_matrix(system, baths, hier)

    rng = np.random.default_rng(12345)
    stack = rng.normal(size=(hier.size, 2, 2)) + 1j * rng.normal(size=(hier.size, 2, 2))
    stack = 0.5 * (stack + np.transpose(stack.conj(), (0, 2, 1)))
    expected = (gen @ stack.reshape(-1)).reshape(stack.shape)

    worst = 0.0
    for eng in (["numpy", "numba"] if engine == "auto" else [engine]):
        try:
            op = HeomOperator(system, baths, hier, engine=eng)
        except ValueError:
            continue
        got = op.rhs(stack)
        worst = max(worst, float(np.max(np.abs(got - expected))))
    return {
        "name": "superop",
        "error": worst,
        "tol": 1e-12,
        "passed": worst < 1e-12,
        "runtime_s": time.perf_counter() - start,
        "detail": f"dense generator {gen.shape[0]}x{gen.shape[1]} over {hier.size} ADOs",
    }


def validate_rabi(engine: str = "auto", dt: float = 0.01) -> dict:
    """Closed two-site exchange against P2(t) = sin^2(J t) over ten periods."""
    start = time.perf_counter()
    j = 0.5
    system = build_hamiltonian(
        SystemSpec(n_xt=1, n_total=2, eps_xt=(0.0,), eps_et=(0.0,), t_e=j)
    )
    from .bath import ExponentialSeries, ExponentialTerm
    from .model import CouplingOperator

    dummy = CouplingOperator(kind=DiagonalCoupling(site=1), matrix=np.zeros((2, 2)))
    series = ExponentialSeries(
        terms=(ExponentialTerm(c_prime=0.0, c_dprime=0.0, rate=1.0 + 0j),), delta=0.0
    )
    hier = enumerate_indices(1, TruncationPolicy(mode="total_depth", depth=0))
    op = HeomOperator(system, [(dummy, series)], hier, engine=engine)
    t_max = 10.0 * math.pi / j
    n_steps = int(round(t_max / dt))
    t_max = n_steps * dt
    state = ADOState.from_rho(np.diag([1.0, 0.0]).astype(complex), hier.size)
    traj = propagate(op, state, dt=dt, t_max=t_max, record_every=5)
    expected = np.sin(j * traj.times) ** 2
    err = float(np.max(np.abs(traj.populations[:, 1] - expected)))
    return {
        "name": "rabi",
        "error": err,
        "tol": 1e-6,
        "passed": err < 1e-6,
        "runtime_s": time.perf_counter() - start,
        "detail": f"{n_steps} steps at dt={dt}",
    }


def dephasing_exponent_reference(spec: BathSpec, ts, abs_tol: float = 1e-10) -> np.ndarray:
    """Quadrature of the exact dephasing exponent

        Gamma(t) = (1/pi) int_0^inf dw J(w) coth(beta w/2) (1 - cos(w t)) / w^2

    evaluated per time by splitting off the small-w region analytically
    (series of the integrand) and using oscillatory-weighted panels elsewhere.
    """
    from scipy.special import sici

    from .bath import _breakpoints, _spectral_density_over_omega, _xcoth

    beta = spec.beta
    pts, wmax = _breakpoints(spec)
    eps = 1e-5

    def g(w):
        # J(w) coth(beta w/2) / w^2, regular away from 0
        return (
            _spectral_density_over_omega(spec, w)
            * (2.0 / beta)
            * _xcoth(0.5 * beta * w)
            / (np.pi * w * w)
        )

    # leading small-w behaviour g(w) ~ alpha/w^2 + beta0 + O(w^2)
    alpha = _spectral_density_over_omega(spec, 0.0) * (2.0 / beta) / np.pi
    beta0 = (g(eps) - alpha / eps**2)

    edges = [eps] + [p for p in pts if p > eps] + [wmax]
    out = np.empty(len(ts))
    for idx, t in enumerate(ts):
        if t == 0.0:
            out[idx] = 0.0
            continue
        si, _ = sici(eps * t)
        total = alpha * (t * si - (1.0 - math.cos(eps * t)) / eps)
        total += beta0 * (eps - math.sin(eps * t) / t)
        for a, b in zip(edges[:-1], edges[1:]):
            total += quad(g, a, b, limit=400, epsabs=abs_tol)[0]
            total -= quad(g, a, b, weight="cos", wvar=t, limit=400, epsabs=abs_tol)[0]
        total += quad(g, wmax, np.inf, limit=400, epsabs=abs_tol)[0]
        total -= quad(g, wmax, np.inf, weight="cos", wvar=t, limit=400)[0]
        out[idx] = total
    return out


def validate_dephasing(engine: str = "auto", depth: int = 16, dt: float = 0.01) -> dict:
    """Pure dephasing: diagonal coupling leaves populations frozen while the
    coherence magnitude follows exp(-Gamma(t)) from quadrature."""
    start = time.perf_counter()
    sys_spec = SystemSpec(n_xt=1, n_total=2, eps_xt=(0.5,), eps_et=(0.0,), t_e=0.0)
    system = build_hamiltonian(sys_spec)
    bath_spec = BathSpec(family="drude", lam=0.2, gamma=0.1, beta=2.4, n_pade=2)
    series = expand(bath_spec)
    ops = build_coupling_operators(sys_spec, [DiagonalCoupling(site=1)])
    hier = enumerate_indices(
        len(series.terms), TruncationPolicy(mode="total_depth", depth=depth)
    )
    op = HeomOperator(system, [(ops[0], series)], hier, engine=engine)
    rho0 = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)
    state = ADOState.from_rho(rho0, hier.size)
    traj = propagate(
        op, state, dt=dt, t_max=100.0, record_every=50, record_coherences=[(1, 2)]
    )
    gamma = dephasing_exponent_reference(bath_spec, traj.times)
    expected = 0.5 * np.exp(-gamma)
    got = np.abs(traj.coherences[(1, 2)])
    err = float(np.max(np.abs(got - expected)))
    pop_err = float(np.max(np.abs(traj.populations[:, 0] - 0.5)))
    return {
        "name": "dephasing",
        "error": max(err, pop_err),
        "tol": 1e-3,
        "passed": max(err, pop_err) < 1e-3,
        "runtime_s": time.perf_counter() - start,
        "detail": f"coherence err {err:.2e}, population drift {pop_err:.2e}",
    }


def _preset_bath_specs():
    """Unique (up to coupling-strength scale) baths across both presets."""
    seen = {}
    for name in ("up_and_down", "downhill"):
        cfg = builtin_scenario(name, "d")
        for att in cfg.baths:
            s = att.spec
            key = (s.family, s.gamma, s.omega0, s.beta, s.n_pade)
            seen.setdefault(key, s)
    return list(seen.values())


def validate_correlation(t_grid=None) -> dict:
    """Reconstruction of every preset bath and the delta-closure consistency."""
    start = time.perf_counter()
    worst = 0.0
    details = []
    for spec in _preset_bath_specs():
        series = expand(spec)
        err = reconstruction_error(spec, series, t_grid=t_grid)
        worst = max(worst, err)
        details.append(f"{spec.family}(gamma={spec.gamma}): {err:.2e}")

    # delta closure vs numerically integrated dropped tail, on a low-order
    # expansion where the residual tail is significant
    tail_spec = BathSpec(family="brownian", lam=2.5, gamma=1.0, omega0=1.0,
                         beta=2.4, n_pade=1)
    tail_series = expand(tail_spec)
    horizon = 200.0
    total_ref = correlation_integral_reference(tail_spec, horizon)
    tail_ref = (total_ref - tail_series.integral(horizon)).real
    delta_err = abs(tail_series.delta - tail_ref) / abs(tail_ref)
    details.append(
        f"delta={tail_series.delta:.3e} vs tail integral {tail_ref:.3e} "
        f"(rel dev {delta_err:.2%})"
    )
    passed = worst < 1e-2 and delta_err < 0.1
    return {
        "name": "correlation",
        "error": worst,
        "tol": 1e-2,
        "passed": passed,
        "runtime_s": time.perf_counter() - start,
        "detail": "; ".join(details),
    }


def validate_thermal(engine: str = "auto") -> dict:
    """Weak-coupling two-level equilibrium against the Boltzmann ratio."""
    start = time.perf_counter()
    gap = 0.5
    beta = 2.4
    sys_spec = SystemSpec(n_xt=1, n_total=2, eps_xt=(gap,), eps_et=(0.0,), t_e=0.2)
    system = build_hamiltonian(sys_spec)
    bath_spec = BathSpec(family="drude", lam=0.01, gamma=0.1, beta=beta, n_pade=2)
    series = expand(bath_spec)
    ops = build_coupling_operators(sys_spec, [OffDiagonalCoupling(site_a=1, site_b=2)])
    hier = enumerate_indices(
        len(series.terms), TruncationPolicy(mode="total_depth", depth=4)
    )
    op = HeomOperator(system, [(ops[0], series)], hier, engine=engine)
    state = ADOState.from_rho(np.diag([1.0, 0.0]).astype(complex), hier.size)
    traj = propagate(op, state, dt=0.05, t_max=3000.0, record_every=200)
    # compare in the energy eigenbasis; eigenstates differ from sites via t_e
    evals, evecs = np.linalg.eigh(np.asarray(system.matrix))
    rho_final = traj.final_state.rho
    pops_eig = np.real(np.diag(evecs.conj().T @ rho_final @ evecs))
    ratio = pops_eig[1] / pops_eig[0]
    expected = math.exp(-beta * (evals[1] - evals[0]))
    err = abs(ratio - expected) / expected
    return {
        "name": "thermal",
        "error": err,
        "tol": 0.1,
        "passed": err < 0.1,
        "runtime_s": time.perf_counter() - start,
        "detail": f"excited/ground ratio {ratio:.4f} vs Boltzmann {expected:.4f}",
    }


SUITES = {
    "superop": validate_superop,
    "rabi": validate_rabi,
    "dephasing": validate_dephasing,
    "correlation": validate_correlation,
    "thermal": validate_thermal,
}


def run_suites(names=None, engine: str = "auto") -> list[dict]:
    reports = []
    for name in names or SUITES:
        fn = SUITES[name]
        if name == "correlation":
            reports.append(fn())
        else:
            reports.append(fn(engine=engine))
    return reports
