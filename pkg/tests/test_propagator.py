import math

import numpy as np
import pytest

from xcetsim.bath import BathSpec, ExponentialSeries, ExponentialTerm, expand
from xcetsim.hierarchy import TruncationPolicy, enumerate_indices
from xcetsim.model import (
    CouplingOperator,
    DiagonalCoupling,
    OffDiagonalCoupling,
    SystemSpec,
    build_coupling_operators,
    build_hamiltonian,
)
from xcetsim.propagator import (
    ADOState,
    HeomOperator,
    PropagationError,
    Superoperators,
    equilibration_time,
    heom_rhs,
    propagate,
    steady_diagnostics,
    write_trajectory_csv,
)
from xcetsim.validate import dense_heom_matrix

BETA = 2.4


def two_site_system(eps=(0.3, -0.2), hop=0.25):
    spec = SystemSpec(n_xt=1, n_total=2, eps_xt=(eps[0],), eps_et=(eps[1],), t_e=hop)
    return spec, build_hamiltonian(spec)


def drude_bath(lam=0.15, gamma=0.4, k=1, site=1, spec=None):
    series = expand(BathSpec(family="drude", lam=lam, gamma=gamma, beta=BETA, n_pade=k))
    ops = build_coupling_operators(spec, [DiagonalCoupling(site=site)])
    return ops[0], series


def make_operator(depth=2, engine="numpy", baths=None, system=None):
    if system is None:
        spec, system = two_site_system()
    else:
        spec = None
    if baths is None:
        spec2 = SystemSpec(n_xt=1, n_total=2, eps_xt=(0.0,), eps_et=(0.0,))
        baths = [drude_bath(spec=spec2)]
    n_fields = sum(len(s.terms) for _, s in baths)
    hier = enumerate_indices(n_fields, TruncationPolicy(mode="total_depth", depth=depth))
    return HeomOperator(system, baths, hier, engine=engine), hier


def test_zero_state_zero_derivative():
    op, hier = make_operator()
    out = op.rhs(np.zeros((hier.size, 2, 2), dtype=complex))
    assert np.all(out == 0)


def test_vanishing_bath_reduces_to_von_neumann():
    spec, system = two_site_system()
    dummy = CouplingOperator(kind=DiagonalCoupling(site=1), matrix=np.zeros((2, 2)))
    series = ExponentialSeries(
        terms=(ExponentialTerm(c_prime=0.0, c_dprime=0.0, rate=1.0 + 0j),), delta=0.0
    )
    hier = enumerate_indices(1, TruncationPolicy(mode="total_depth", depth=2))
    rho = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
    state = ADOState.from_rho(rho, hier.size)
    for engine in ("numpy", "numba"):
        op = HeomOperator(system, [(dummy, series)], hier, engine=engine)
        deriv = op.rhs(state.ados)
        h = np.asarray(system.matrix)
        expected = -1j * (h @ rho - rho @ h)
        assert np.max(np.abs(deriv[0] - expected)) < 1e-15
        # damping for the zero-coefficient field still acts on excited indices
        assert np.all(np.abs(deriv[1:]) == 0)


@pytest.mark.parametrize("engine", ["numpy", "numba"])
def test_rhs_matches_dense_superoperator(engine):
    """Spec'd oracle instance: two levels, one overdamped bath with two
    exponentials, depth 2 (six hierarchy members)."""
    spec, system = two_site_system()
    bath = drude_bath(spec=spec, k=1)
    assert len(bath[1].terms) == 2
    hier = enumerate_indices(2, TruncationPolicy(mode="total_depth", depth=2))
    assert hier.size == 6
    gen = dense_heom_matrix(system, [bath], hier)
    rng = np.random.default_rng(99)
    stack = rng.normal(size=(6, 2, 2)) + 1j * rng.normal(size=(6, 2, 2))
    stack = 0.5 * (stack + np.transpose(stack.conj(), (0, 2, 1)))
    expected = (gen @ stack.reshape(-1)).reshape(stack.shape)
    op = HeomOperator(system, [bath], hier, engine=engine)
    got = op.rhs(stack)
    assert np.max(np.abs(got - expected)) < 1e-12


@pytest.mark.parametrize("engine", ["numpy", "numba"])
def test_rhs_matches_dense_superoperator_brownian_offdiag(engine):
    """Same oracle with a resonance bath (complex rates, complex channel
    weights) and an off-diagonal coupling, plus a nonzero delta closure."""
    spec, system = two_site_system()
    bser = expand(
        BathSpec(family="brownian", lam=0.7, gamma=0.5, omega0=0.9, beta=BETA, n_pade=1)
    )
    assert bser.delta > 0
    dser = expand(BathSpec(family="drude", lam=0.1, gamma=0.4, beta=BETA, n_pade=1))
    ops = build_coupling_operators(
        spec, [DiagonalCoupling(site=1), OffDiagonalCoupling(site_a=1, site_b=2)]
    )
    baths = [(ops[0], bser), (ops[1], dser)]
    n_fields = len(bser.terms) + len(dser.terms)
    hier = enumerate_indices(n_fields, TruncationPolicy(mode="total_depth", depth=2))
    gen = dense_heom_matrix(system, baths, hier)
    rng = np.random.default_rng(7)
    stack = rng.normal(size=(hier.size, 2, 2)) + 1j * rng.normal(size=(hier.size, 2, 2))
    expected = (gen @ stack.reshape(-1)).reshape(stack.shape)
    op = HeomOperator(system, baths, hier, engine=engine)
    assert np.max(np.abs(op.rhs(stack) - expected)) < 1e-12


def test_heom_rhs_functional_wrapper():
    spec, system = two_site_system()
    bath = drude_bath(spec=spec)
    hier = enumerate_indices(2, TruncationPolicy(mode="total_depth", depth=1))
    state = ADOState.from_rho(np.diag([1.0, 0.0]).astype(complex), hier.size)
    deriv = heom_rhs(state, system, [bath], hier)
    assert deriv.ados.shape == state.ados.shape
    bad = state.ados.copy()
    bad[1, 0, 0] = np.nan
    with pytest.raises(PropagationError, match="ADO 1"):
        heom_rhs(ADOState(ados=bad), system, [bath], hier)


def test_superoperators_definitions():
    rng = np.random.default_rng(3)
    rho = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = 0.5 * (rho + rho.conj().T)
    h = rng.normal(size=(3, 3))
    h = 0.5 * (h + h.T)
    v = np.zeros((3, 3))
    v[0, 1] = v[1, 0] = 1.0
    sup = Superoperators(h, v)
    assert np.allclose(sup.liouvillian(rho), h @ rho - rho @ h)
    phi = sup.phi(rho)
    psi = sup.psi(rho)
    # both channels preserve hermiticity
    assert np.allclose(phi, phi.conj().T)
    assert np.allclose(psi, psi.conj().T)
    theta = sup.theta(rho, 0.4, -0.2)
    assert np.allclose(theta, 0.4 * phi + 0.2 * psi)


def test_rabi_oscillation():
    from xcetsim.validate import validate_rabi

    report = validate_rabi(engine="numpy")
    assert report["passed"], report
    assert report["error"] < 1e-6


def test_linearity_of_propagation():
    spec, system = two_site_system()
    bath = drude_bath(spec=spec)
    hier = enumerate_indices(2, TruncationPolicy(mode="total_depth", depth=3))
    op = HeomOperator(system, [bath], hier, engine="numpy")
    rho_a = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
    rho_b = np.array([[0.4, 0.2j], [-0.2j, 0.6]], dtype=complex)
    alpha, beta_w = 0.3, 0.7
    mixed = ADOState.from_rho(alpha * rho_a + beta_w * rho_b, hier.size)
    kw = dict(dt=0.02, t_max=5.0, record_every=50, abort_negativity=10.0)
    traj_mixed = propagate(op, mixed, **kw)
    traj_a = propagate(op, ADOState.from_rho(rho_a, hier.size), **kw)
    traj_b = propagate(op, ADOState.from_rho(rho_b, hier.size), **kw)
    combo = alpha * traj_a.final_state.ados + beta_w * traj_b.final_state.ados
    assert np.max(np.abs(traj_mixed.final_state.ados - combo)) < 1e-12


def test_fourth_order_convergence_rabi():
    """Error versus the analytic Rabi solution must shrink 16x per dt halving."""
    j = 0.5
    spec = SystemSpec(n_xt=1, n_total=2, eps_xt=(0.0,), eps_et=(0.0,), t_e=j)
    system = build_hamiltonian(spec)
    dummy = CouplingOperator(kind=DiagonalCoupling(site=1), matrix=np.zeros((2, 2)))
    series = ExponentialSeries(
        terms=(ExponentialTerm(c_prime=0.0, c_dprime=0.0, rate=1.0 + 0j),), delta=0.0
    )
    hier = enumerate_indices(1, TruncationPolicy(mode="total_depth", depth=0))
    op = HeomOperator(system, [(dummy, series)], hier, engine="numpy")
    errs = []
    for dt in (0.4, 0.2, 0.1):
        state = ADOState.from_rho(np.diag([1.0, 0.0]).astype(complex), hier.size)
        traj = propagate(op, state, dt=dt, t_max=24.0, record_every=1)
        expected = np.sin(j * traj.times) ** 2
        errs.append(np.max(np.abs(traj.populations[:, 1] - expected)))
    r1 = errs[0] / errs[1]
    r2 = errs[1] / errs[2]
    assert 12.0 < r1 < 20.0, errs
    assert 12.0 < r2 < 20.0, errs


def test_fourth_order_convergence_damped():
    """Self-convergence with active bath couplings and damping exponentials."""
    spec, system = two_site_system()
    bath = drude_bath(spec=spec, lam=0.3, gamma=0.8)
    hier = enumerate_indices(2, TruncationPolicy(mode="total_depth", depth=4))
    op = HeomOperator(system, [bath], hier, engine="numpy")
    rho0 = np.array([[0.6, 0.3], [0.3, 0.4]], dtype=complex)

    def run(dt):
        state = ADOState.from_rho(rho0, hier.size)
        return propagate(op, state, dt=dt, t_max=8.0, record_every=int(round(2.0 / dt)))

    ref = run(0.00625).populations
    e1 = np.max(np.abs(run(0.2).populations - ref))
    e2 = np.max(np.abs(run(0.1).populations - ref))
    e3 = np.max(np.abs(run(0.05).populations - ref))
    assert 11.0 < e1 / e2 < 22.0, (e1, e2, e3)
    assert 11.0 < e2 / e3 < 22.0, (e1, e2, e3)


def test_engines_agree_and_threads_are_bit_identical():
    spec, system = two_site_system()
    bser = expand(
        BathSpec(family="brownian", lam=0.5, gamma=0.6, omega0=0.8, beta=BETA, n_pade=2)
    )
    ops = build_coupling_operators(spec, [DiagonalCoupling(site=2)])
    hier = enumerate_indices(len(bser.terms), TruncationPolicy(mode="total_depth", depth=3))
    rng = np.random.default_rng(11)
    stack = rng.normal(size=(hier.size, 2, 2)) + 1j * rng.normal(size=(hier.size, 2, 2))
    out = {}
    for engine in ("numpy", "numba"):
        op = HeomOperator(system, [(ops[0], bser)], hier, engine=engine)
        out[engine] = op.rhs(stack.copy())
    assert np.max(np.abs(out["numpy"] - out["numba"])) < 1e-13
    one = HeomOperator(system, [(ops[0], bser)], hier, engine="numba", threads=1)
    eight = HeomOperator(system, [(ops[0], bser)], hier, engine="numba", threads=8)
    assert np.array_equal(one.rhs(stack.copy()), eight.rhs(stack.copy()))


def test_trace_and_hermiticity_on_driven_bath_run():
    spec, system = two_site_system()
    baths = [
        drude_bath(spec=spec, lam=0.2, gamma=0.3),
        (
            build_coupling_operators(spec, [OffDiagonalCoupling(site_a=1, site_b=2)])[0],
            expand(BathSpec(family="brownian", lam=0.4, gamma=0.6, omega0=0.9,
                            beta=BETA, n_pade=2)),
        ),
    ]
    n_fields = sum(len(s.terms) for _, s in baths)
    hier = enumerate_indices(n_fields, TruncationPolicy(mode="total_depth", depth=4))
    op = HeomOperator(system, baths, hier, engine="numba")
    state = ADOState.from_rho(np.diag([1.0, 0.0]).astype(complex), hier.size)
    traj = propagate(op, state, dt=0.02, t_max=40.0, record_every=20)
    assert np.max(np.abs(traj.trace - 1.0)) < 1e-10
    assert traj.herm_defect.max() < 1e-10
    assert traj.populations.min() > -1e-6


def test_abort_on_unstable_truncation():
    """A resonant strong-coupling bath truncated at depth 3 has a growing
    mode; the propagator must abort with diagnostics instead of emitting
    unphysical populations."""
    spec = SystemSpec(n_xt=1, n_total=2, eps_xt=(1.0,), eps_et=(0.0,), t_e=0.1)
    system = build_hamiltonian(spec)
    bser = expand(
        BathSpec(family="brownian", lam=2.5, gamma=1.0, omega0=1.0, beta=BETA, n_pade=3)
    )
    ops = build_coupling_operators(spec, [DiagonalCoupling(site=1)])
    hier = enumerate_indices(len(bser.terms), TruncationPolicy(mode="total_depth", depth=3))
    op = HeomOperator(system, [(ops[0], bser)], hier, engine="numba")
    state = ADOState.from_rho(np.diag([1.0, 0.0]).astype(complex), hier.size)
    with pytest.raises(PropagationError, match="population"):
        propagate(op, state, dt=0.01, t_max=400.0, record_every=100)


def test_steady_diagnostics_constant_and_rabi():
    times = np.linspace(0.0, 10.0, 101)
    pops = np.column_stack([np.full(101, 0.25), np.full(101, 0.75)])
    traj = __import__("xcetsim.propagator", fromlist=["Trajectory"]).Trajectory(
        times=times,
        populations=pops,
        trace=np.ones(101, dtype=complex),
        herm_defect=np.zeros(101),
    )
    diag = steady_diagnostics(traj, (2.0, 8.0))
    assert np.allclose(diag["mean"], [0.25, 0.75])
    assert np.allclose(diag["drift"], 0.0, atol=1e-14)
    with pytest.raises(ValueError, match="outside"):
        steady_diagnostics(traj, (5.0, 20.0))

    # closed Rabi trajectory averaged over whole periods gives 1/2 per site;
    # sample so the periods tile the window exactly (no endpoint double count)
    j = 0.5
    period = math.pi / j
    n = 2000
    times = np.arange(n) * (4 * period / n)
    p2 = np.sin(j * times) ** 2
    traj = __import__("xcetsim.propagator", fromlist=["Trajectory"]).Trajectory(
        times=times,
        populations=np.column_stack([1 - p2, p2]),
        trace=np.ones(times.size, dtype=complex),
        herm_defect=np.zeros(times.size),
    )
    diag = steady_diagnostics(traj, (0.0, times[-1]))
    assert np.allclose(diag["mean"], [0.5, 0.5], atol=1e-6)


def test_equilibration_time_simple_rise():
    from xcetsim.propagator import Trajectory

    times = np.linspace(0.0, 100.0, 1001)
    pop = 0.8 * (1 - np.exp(-times / 10.0))
    traj = Trajectory(
        times=times,
        populations=pop[:, None],
        trace=np.ones(times.size, dtype=complex),
        herm_defect=np.zeros(times.size),
    )
    teq = equilibration_time(traj, site=1)
    # plateau mean ~0.8; 90% crossing of an exponential rise at ~ -10*ln(0.1*...)
    assert 20.0 < teq < 26.0


def test_csv_format(tmp_path):
    from xcetsim.propagator import Trajectory

    times = np.array([0.0, 0.5])
    traj = Trajectory(
        times=times,
        populations=np.array([[1.0, 0.0], [0.75, 0.25]]),
        trace=np.array([1.0 + 0j, 1.0 - 1e-17j]),
        herm_defect=np.zeros(2),
    )
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path, ["e1", "c2"])
    lines = path.read_text().splitlines()
    assert lines[0] == "t,P_e1,P_c2,trace_re,trace_im"
    assert lines[1].startswith("0,1,0,1,")
    fields = lines[2].split(",")
    assert float(fields[2]) == 0.25
    with pytest.raises(ValueError):
        write_trajectory_csv(traj, path, ["e1"])


def test_propagate_validates_inputs():
    op, hier = make_operator()
    state = ADOState.from_rho(np.diag([1.0, 0.0]).astype(complex), hier.size)
    with pytest.raises(ValueError, match="dt"):
        propagate(op, state, dt=-0.1, t_max=1.0)
    with pytest.raises(ValueError, match="multiple"):
        propagate(op, state, dt=0.3, t_max=1.0)
    short = ADOState(ados=np.zeros((2, 2, 2), dtype=complex))
    with pytest.raises(ValueError, match="shape"):
        propagate(op, short, dt=0.1, t_max=1.0)


def test_depth_zero_reduces_to_von_neumann_plus_delta():
    """With no retained hierarchy levels the derivative is the unitary part
    plus the Markovian white-noise closure only."""
    spec, system = two_site_system()
    bser = expand(
        BathSpec(family="brownian", lam=0.7, gamma=0.5, omega0=0.9, beta=BETA, n_pade=1)
    )
    assert bser.delta > 0
    ops = build_coupling_operators(spec, [DiagonalCoupling(site=1)])
    hier = enumerate_indices(len(bser.terms), TruncationPolicy(mode="total_depth", depth=0))
    assert hier.size == 1
    rho = np.array([[0.6, 0.25 - 0.1j], [0.25 + 0.1j, 0.4]])
    for engine in ("numpy", "numba"):
        op = HeomOperator(system, [(ops[0], bser)], hier, engine=engine)
        deriv = op.rhs(rho[None, :, :].astype(complex))
        h = np.asarray(system.matrix)
        v = ops[0].matrix
        expected = -1j * (h @ rho - rho @ h) - bser.delta * (
            v @ (v @ rho - rho @ v) - (v @ rho - rho @ v) @ v
        )
        assert np.max(np.abs(deriv[0] - expected)) < 1e-14


def test_restart_from_final_state_is_bit_identical():
    spec, system = two_site_system()
    bath = drude_bath(spec=spec, lam=0.2, gamma=0.3)
    hier = enumerate_indices(2, TruncationPolicy(mode="total_depth", depth=3))
    op = HeomOperator(system, [bath], hier, engine="numba")
    state = ADOState.from_rho(np.diag([1.0, 0.0]).astype(complex), hier.size)
    whole = propagate(op, state, dt=0.02, t_max=8.0, record_every=100)
    first = propagate(op, state, dt=0.02, t_max=4.0, record_every=100)
    second = propagate(op, first.final_state, dt=0.02, t_max=4.0, record_every=100)
    assert second.final_state.time == pytest.approx(8.0)
    assert np.array_equal(whole.final_state.ados, second.final_state.ados)


def test_depth_convergence_short_horizon_weak_regime():
    """Deepening the hierarchy shrinks the change between consecutive depths
    on a horizon where truncation growth is still negligible."""
    from xcetsim.scenarios import assemble_operator, builtin_scenario, initial_state

    trajs = {}
    for depth in (1, 2, 3):
        cfg = builtin_scenario("downhill", "c", depth=depth)
        op = assemble_operator(cfg, engine="numba")
        st = initial_state(cfg, op.n_ados)
        trajs[depth] = propagate(op, st, dt=0.01, t_max=20.0, record_every=50).populations
    d21 = np.max(np.abs(trajs[2] - trajs[1]))
    d32 = np.max(np.abs(trajs[3] - trajs[2]))
    assert d32 < d21
