"""Spectral densities and exponential decomposition of bath correlation functions.

A bath is specified by its spectral density J(w) (overdamped "drude" or
underdamped "brownian" family) together with an inverse temperature.  Its
correlation function

    C(t) = (1/pi) * int_0^inf dw J(w) [coth(beta*w/2) cos(w t) - i sin(w t)]

is decomposed into a finite series of decaying exponentials plus a residual
white-noise (delta) closure,

    C(t) ~= sum_j (c'_j + i c''_j) exp(-rate_j * t) + 2*delta*dirac(t),

using the [K-1/K] rational approximation of the Bose occupation function for
the thermal poles (with a plain Matsubara fallback for cross checks).  The
coefficients c'_j and c''_j multiply the commutator and anticommutator
channels of the hierarchy respectively; for underdamped resonance pairs they
are complex and carry the conjugate-pair structure that keeps the physical
density matrix Hermitian.

`correlation_reference` provides an independent quadrature oracle for C(t);
it never touches the pole machinery above and is the measuring stick for
every decomposition produced here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "BathSpec",
    "ExponentialTerm",
    "ExponentialSeries",
    "BathError",
    "spectral_density",
    "pade_poles",
    "expand_drude",
    "expand_brownian",
    "expand",
    "correlation_reference",
    "correlation_integral_reference",
    "reconstruction_error",
]

DEFAULT_QUAD_TOL = 1e-8


class BathError(ValueError):
    """Raised for invalid bath specifications or failed decompositions."""


@dataclass(frozen=True)
class BathSpec:
    """One bath: spectral density family, coupling scale and temperature.

    Attributes
    ----------
    family : str
        ``"drude"`` for J(w) = 2*lam*gamma*w / (w^2 + gamma^2) or
        ``"brownian"`` for J(w) = 2*lam*gamma*w0^2*w /
        ((w0^2 - w^2)^2 + gamma^2 w^2).
    lam : float
        Reorganization energy (overall coupling strength), >= 0.
    gamma : float
        Inverse correlation time (drude) or resonance damping width
        (brownian), > 0.
    omega0 : float or None
        Resonance frequency of the brownian family; unused for drude.
    beta : float
        Dimensionless inverse temperature.
    n_pade : int
        Number of thermal-pole expansion terms K.
    """

    family: str
    lam: float
    gamma: float
    beta: float
    n_pade: int
    omega0: float | None = None

    def __post_init__(self):
        if self.family not in ("drude", "brownian"):
            raise BathError(f"unknown bath family {self.family!r}")
        if not (self.lam >= 0.0 and np.isfinite(self.lam)):
            raise BathError(f"bath lambda must be >= 0, got {self.lam}")
        if not (self.gamma > 0.0 and np.isfinite(self.gamma)):
            raise BathError(f"bath gamma must be > 0, got {self.gamma}")
        if not (self.beta > 0.0 and np.isfinite(self.beta)):
            raise BathError(f"bath beta must be > 0, got {self.beta}")
        if self.n_pade < 0:
            raise BathError(f"bath n_pade must be >= 0, got {self.n_pade}")
        if self.family == "brownian":
            if self.omega0 is None or not (self.omega0 > 0.0 and np.isfinite(self.omega0)):
                raise BathError(f"brownian bath requires omega0 > 0, got {self.omega0}")


@dataclass(frozen=True)
class ExponentialTerm:
    """One exponential of the correlation expansion.

    ``c_prime`` (commutator channel) and ``c_dprime`` (anticommutator channel)
    are real for real decay rates and complex for conjugate resonance pairs;
    the coefficient of exp(-rate*t) in C(t) is ``c_prime + 1j*c_dprime``.
    """

    c_prime: complex
    c_dprime: complex
    rate: complex

    @property
    def coefficient(self) -> complex:
        return self.c_prime + 1j * self.c_dprime


@dataclass(frozen=True)
class ExponentialSeries:
    """Exponential expansion of one bath correlation function plus delta residue."""

    terms: tuple[ExponentialTerm, ...]
    delta: float

    def evaluate(self, t) -> np.ndarray:
        """Series value sum_j (c'_j + i c''_j) exp(-rate_j t), delta excluded."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = np.zeros(t.shape, dtype=np.complex128)
        for term in self.terms:
            out += term.coefficient * np.exp(-term.rate * t)
        return out

    def integral(self, upto: float = np.inf) -> complex:
        """Integral of the series (delta excluded) from 0 to ``upto``."""
        total = 0.0 + 0.0j
        for term in self.terms:
            if np.isinf(upto):
                total += term.coefficient / term.rate
            else:
                total += term.coefficient / term.rate * (1.0 - np.exp(-term.rate * upto))
        return total


def spectral_density(spec: BathSpec, omega) -> np.ndarray:
    """Closed-form J(w); odd in w for both families."""
    w = np.asarray(omega, dtype=np.float64)
    if spec.family == "drude":
        return 2.0 * spec.lam * spec.gamma * w / (w * w + spec.gamma**2)
    w0 = spec.omega0
    return (
        2.0 * spec.lam * spec.gamma * w0**2 * w
        / ((w0**2 - w * w) ** 2 + spec.gamma**2 * w * w)
    )


def _spectral_density_over_omega(spec: BathSpec, w):
    # J(w)/w, finite at w = 0
    w = np.asarray(w, dtype=np.float64)
    if spec.family == "drude":
        return 2.0 * spec.lam * spec.gamma / (w * w + spec.gamma**2)
    w0 = spec.omega0
    return 2.0 * spec.lam * spec.gamma * w0**2 / ((w0**2 - w * w) ** 2 + spec.gamma**2 * w * w)


def _spectral_density_imag_axis(spec: BathSpec, nu: float) -> complex:
    # analytic continuation J(-i*nu) used for thermal-pole residues
    if spec.family == "drude":
        return -2j * spec.lam * spec.gamma * nu / (spec.gamma**2 - nu * nu)
    w0 = spec.omega0
    denom = (w0**2 + nu * nu) ** 2 - spec.gamma**2 * nu * nu
    return -2j * spec.lam * spec.gamma * w0**2 * nu / denom


def pade_poles(beta: float, n_terms: int, scheme: str = "pade"):
    """Thermal poles and residues of the Bose function 1/(1 - exp(-beta*w)).

    Returns ``(poles, residues)`` with the poles (in frequency units, positive,
    ascending) at which the lower-half-plane contour closure of the
    correlation integral picks up thermal contributions, and dimensionless
    residue weights.  ``scheme="pade"`` builds the [K-1/K] rational
    approximant from its symmetric tridiagonal eigenproblem; the weights of
    ``scheme="matsubara"`` are all one and the poles are 2*pi*j/beta.
    """
    if n_terms < 0:
        raise BathError(f"n_terms must be >= 0, got {n_terms}")
    if n_terms == 0:
        return np.zeros(0), np.zeros(0)
    if scheme == "matsubara":
        j = np.arange(1, n_terms + 1, dtype=np.float64)
        return 2.0 * np.pi * j / beta, np.ones(n_terms)
    if scheme != "pade":
        raise BathError(f"unknown decomposition scheme {scheme!r}")

    k = n_terms
    try:
        off = np.array(
            [1.0 / math.sqrt((2 * m + 1) * (2 * m + 3)) for m in range(1, 2 * k)]
        )
        ev = eigh_tridiagonal(np.zeros(2 * k), off, eigvals_only=True)
        xi = np.sort(2.0 / np.abs(ev[:k]))
        if k > 1:
            offt = np.array(
                [1.0 / math.sqrt((2 * m + 3) * (2 * m + 5)) for m in range(1, 2 * k - 1)]
            )
            evt = eigh_tridiagonal(np.zeros(2 * k - 1), offt, eigvals_only=True)
            chi = np.sort(2.0 / np.abs(evt[: k - 1]))
        else:
            chi = np.zeros(0)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise BathError(f"Pade eigenproblem failed for K={k}: {exc}") from exc

    eta = np.zeros(k)
    prefactor = 0.5 * k * (2 * k + 3)
    for j in range(k):
        val = prefactor
        for m in range(k - 1):
            val *= chi[m] ** 2 - xi[j] ** 2
        for m in range(k):
            if m != j:
                val /= xi[m] ** 2 - xi[j] ** 2
        eta[j] = val
    return xi / beta, eta


def _analytic_total_integral(spec: BathSpec) -> complex:
    # int_0^inf C(t) dt in closed form: (J(w)*n(w)) at w -> 0 minus i times the
    # reorganization energy (PV part), for both families
    if spec.family == "drude":
        return 2.0 * spec.lam / (spec.beta * spec.gamma) - 1j * spec.lam
    return 2.0 * spec.lam * spec.gamma / (spec.beta * spec.omega0**2) - 1j * spec.lam


def _thermal_terms(spec: BathSpec, scheme: str) -> list[ExponentialTerm]:
    poles, residues = pade_poles(spec.beta, spec.n_pade, scheme=scheme)
    terms = []
    for nu, eta in zip(poles, residues):
        c = -2j * (eta / spec.beta) * _spectral_density_imag_axis(spec, nu)
        if abs(c.imag) > 1e-12 * max(1.0, abs(c.real)):
            raise BathError(f"thermal-pole coefficient not real: {c}")
        terms.append(ExponentialTerm(c_prime=c.real, c_dprime=0.0, rate=complex(nu)))
    return terms


def _close_delta(spec: BathSpec, terms: list[ExponentialTerm]) -> float:
    # white-noise strength of the dropped tail: total correlation integral
    # minus the kept terms, so the zero-frequency weight is matched exactly
    kept = sum(t.coefficient / t.rate for t in terms)
    residual = _analytic_total_integral(spec) - kept
    scale = sum(abs(t.coefficient / t.rate) for t in terms) + abs(
        _analytic_total_integral(spec)
    )
    if abs(residual.imag) > 1e-9 * scale:
        raise BathError(f"delta closure has spurious imaginary part {residual.imag}")
    if residual.real < -1e-5 * scale:
        raise BathError(f"delta closure is significantly negative: {residual.real}")
    return max(residual.real, 0.0)


def expand_drude(spec: BathSpec, scheme: str = "pade") -> ExponentialSeries:
    """Exponential expansion of an overdamped bath correlation function.

    The leading term carries the spectral-density pole (rate gamma, imaginary
    coefficient exactly -lam*gamma); the remaining terms come from the thermal
    poles of the Bose function.
    """
    if spec.family != "drude":
        raise BathError(f"expand_drude called with family {spec.family!r}")
    if spec.lam == 0.0:
        zero = ExponentialTerm(c_prime=0.0, c_dprime=0.0, rate=complex(spec.gamma))
        return ExponentialSeries(terms=(zero,), delta=0.0)
    x = 0.5 * spec.beta * spec.gamma
    if abs(math.sin(x)) < 1e-2:
        raise BathError(
            f"drude decomposition degenerate: beta*gamma/2 = {x:.4f} sits on a "
            "thermal pole of the Bose function (cot singularity); adjust "
            "temperature or cutoff"
        )
    lead = ExponentialTerm(
        c_prime=spec.lam * spec.gamma / math.tan(x),
        c_dprime=-spec.lam * spec.gamma,
        rate=complex(spec.gamma),
    )
    thermal = _thermal_terms(spec, scheme)
    for t in thermal:
        if abs(t.rate.real - spec.gamma) < 2e-2 * spec.gamma:
            raise BathError(
                f"thermal pole {t.rate.real:.4f} collides with the drude rate "
                f"{spec.gamma}; change n_pade or temperature"
            )
    terms = [lead] + thermal
    return ExponentialSeries(terms=tuple(terms), delta=_close_delta(spec, terms))


def expand_brownian(spec: BathSpec, scheme: str = "pade") -> ExponentialSeries:
    """Exponential expansion of an underdamped resonance bath.

    The two resonance poles contribute complex-conjugate rates
    gamma/2 +- i*zeta with zeta = sqrt(omega0^2 - gamma^2/4).  Their channel
    coefficients are paired so that the reconstructed real part
    (c'-channel) and imaginary part (c''-channel) of C(t) are separately
    real functions; overdamped and critically damped inputs are rejected.
    """
    if spec.family != "brownian":
        raise BathError(f"expand_brownian called with family {spec.family!r}")
    disc = spec.omega0**2 - spec.gamma**2 / 4.0
    if disc <= 0.0:
        raise BathError(
            "brownian expansion requires the underdamped branch "
            f"omega0 > gamma/2 (omega0={spec.omega0}, gamma={spec.gamma}); "
            "critically damped and overdamped poles are degenerate or real "
            "and are not supported"
        )
    if spec.lam == 0.0:
        zeta0 = math.sqrt(disc)
        zero = (
            ExponentialTerm(0.0, 0.0, complex(spec.gamma / 2.0, zeta0)),
            ExponentialTerm(0.0, 0.0, complex(spec.gamma / 2.0, -zeta0)),
        )
        return ExponentialSeries(terms=zero, delta=0.0)

    zeta = math.sqrt(disc)
    pref = spec.lam * spec.omega0**2 / (2.0 * zeta)
    omega_res = zeta - 0.5j * spec.gamma
    # full coefficients from the contour residues at the two resonance poles
    c_plus = pref * (1.0 / np.tanh(0.5 * spec.beta * omega_res) + 1.0)
    c_minus = pref * (1.0 / np.tanh(0.5 * spec.beta * np.conj(omega_res)) - 1.0)
    rate_plus = complex(0.5 * spec.gamma, zeta)
    rate_minus = complex(0.5 * spec.gamma, -zeta)
    # split into commutator/anticommutator channels across the conjugate pair
    a_plus = 0.5 * (c_plus + np.conj(c_minus))
    b_plus = (c_plus - np.conj(c_minus)) / 2j
    a_minus = 0.5 * (c_minus + np.conj(c_plus))
    b_minus = (c_minus - np.conj(c_plus)) / 2j
    terms = [
        ExponentialTerm(c_prime=a_plus, c_dprime=b_plus, rate=rate_plus),
        ExponentialTerm(c_prime=a_minus, c_dprime=b_minus, rate=rate_minus),
    ]
    terms.extend(_thermal_terms(spec, scheme))
    return ExponentialSeries(terms=tuple(terms), delta=_close_delta(spec, terms))


def expand(spec: BathSpec, scheme: str = "pade") -> ExponentialSeries:
    """Dispatch to the family-specific expansion."""
    if spec.family == "drude":
        return expand_drude(spec, scheme=scheme)
    return expand_brownian(spec, scheme=scheme)


def _xcoth(x: float) -> float:
    # x*coth(x), regular at x = 0
    if abs(x) < 1e-4:
        x2 = x * x
        return 1.0 + x2 / 3.0 - x2 * x2 / 45.0
    return x / math.tanh(x)


def _breakpoints(spec: BathSpec) -> tuple[list[float], float]:
    if spec.family == "drude":
        pts = [spec.gamma, 5.0 * spec.gamma]
        wmax = max(30.0, 10.0 * spec.gamma, 20.0 / spec.beta)
    else:
        w0, g = spec.omega0, spec.gamma
        half = max(0.5 * g, 1e-3 * w0)
        pts = [0.5 * w0, w0 - 3 * half, w0, w0 + 3 * half, 2.0 * w0, 4.0 * w0]
        wmax = max(30.0, 10.0 * w0, 20.0 / spec.beta)
    pts = sorted({p for p in pts if 0.0 < p < wmax})
    return pts, wmax


def correlation_reference(
    spec: BathSpec, t_grid, abs_tol: float = DEFAULT_QUAD_TOL
) -> np.ndarray:
    """Quadrature oracle for C(t) on a grid of non-negative times.

    The real part integrates J(w)/w * (2/beta) * x*coth(x) (x = beta*w/2),
    which is regular at w = 0, against cos(w t); the imaginary part (which is
    independent of temperature) integrates -J(w)/pi against sin(w t).
    Oscillatory weights are used on every panel, with panel splits at the
    spectral-density scales, plus Fourier-tail integration beyond them.

    Raises
    ------
    BathError
        If a panel fails to converge to the requested tolerance, or at t = 0
        for the drude family, where the real part is logarithmically
        divergent.
    """
    ts = np.atleast_1d(np.asarray(t_grid, dtype=np.float64))
    if np.any(ts < 0.0) or not np.all(np.isfinite(ts)):
        raise BathError("correlation_reference requires finite t >= 0")
    if spec.lam == 0.0:
        return np.zeros(ts.shape, dtype=np.complex128)

    pts, wmax = _breakpoints(spec)
    edges = [0.0] + pts + [wmax]
    two_over_beta = 2.0 / spec.beta

    def f_re(w):
        return (
            _spectral_density_over_omega(spec, w)
            * two_over_beta
            * _xcoth(0.5 * spec.beta * w)
            / np.pi
        )

    def f_im(w):
        return spectral_density(spec, w) / np.pi

    out = np.empty(ts.shape, dtype=np.complex128)
    for idx, t in enumerate(ts):
        if t == 0.0 and spec.family == "drude":
            raise BathError(
                "drude correlation real part is log-divergent at t = 0; "
                "evaluate at t > 0"
            )
        re = im = 0.0
        err_budget = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            if t == 0.0:
                val, err = quad(f_re, a, b, limit=400, epsabs=abs_tol, epsrel=1e-10)[:2]
                re += val
                err_budget += err
            else:
                val, err = quad(
                    f_re, a, b, weight="cos", wvar=t, limit=400, epsabs=abs_tol
                )[:2]
                re += val
                err_budget += err
                val, err = quad(
                    f_im, a, b, weight="sin", wvar=t, limit=400, epsabs=abs_tol
                )[:2]
                im -= val
                err_budget += err
        if t == 0.0:
            val, err = quad(f_re, wmax, np.inf, limit=400, epsabs=abs_tol)[:2]
            re += val
            err_budget += err
        else:
            val, err = quad(f_re, wmax, np.inf, weight="cos", wvar=t, limit=400)[:2]
            re += val
            err_budget += err
            val, err = quad(f_im, wmax, np.inf, weight="sin", wvar=t, limit=400)[:2]
            im -= val
            err_budget += err
        if not np.isfinite(re) or not np.isfinite(im) or err_budget > 1e3 * abs_tol:
            raise BathError(
                f"correlation quadrature did not converge at t={t}: "
                f"estimated error {err_budget:.3e}"
            )
        out[idx] = re + 1j * im
    return out if np.ndim(t_grid) else out.reshape(())


def correlation_integral_reference(
    spec: BathSpec, upto: float, abs_tol: float = DEFAULT_QUAD_TOL
) -> complex:
    """Quadrature oracle for int_0^T C(t) dt, independent of the pole sums.

    Integrating the correlation formula termwise in t gives
    (1/pi) int dw J(w) [coth(beta w/2) sin(w T)/w + i (cos(w T) - 1)/w],
    whose integrands are regular at w = 0.
    """
    if upto <= 0.0 or not np.isfinite(upto):
        raise BathError("correlation_integral_reference requires finite T > 0")
    if spec.lam == 0.0:
        return 0.0 + 0.0j

    pts, wmax = _breakpoints(spec)
    edges = [0.0] + pts + [wmax]
    two_over_beta = 2.0 / spec.beta

    def f_re(w):
        # J(w) coth(beta w/2) / w; ~ 1/w at the origin, regular elsewhere
        return (
            _spectral_density_over_omega(spec, w)
            * two_over_beta
            * _xcoth(0.5 * spec.beta * w)
            / (np.pi * w)
        )

    def f_re_product(w):
        # full product with sin(w T), regular at w = 0
        if w == 0.0:
            return _spectral_density_over_omega(spec, 0.0) * two_over_beta * upto / np.pi
        return f_re(w) * math.sin(w * upto)

    def f_im_one(w):
        return _spectral_density_over_omega(spec, w) / np.pi

    re = quad(f_re_product, edges[0], edges[1], limit=800, epsabs=abs_tol)[0]
    im = 0.0
    for a, b in zip(edges[1:-1], edges[2:]):
        re += quad(f_re, a, b, weight="sin", wvar=upto, limit=400, epsabs=abs_tol)[0]
    for a, b in zip(edges[:-1], edges[1:]):
        im += quad(f_im_one, a, b, weight="cos", wvar=upto, limit=400, epsabs=abs_tol)[0]
        im -= quad(f_im_one, a, b, limit=400, epsabs=abs_tol)[0]
    re += quad(f_re, wmax, np.inf, weight="sin", wvar=upto, limit=400)[0]
    im += quad(f_im_one, wmax, np.inf, weight="cos", wvar=upto, limit=400)[0]
    im -= quad(f_im_one, wmax, np.inf, limit=400)[0]
    return re + 1j * im


def reconstruction_error(
    spec: BathSpec,
    series: ExponentialSeries,
    t_grid=None,
    reference: np.ndarray | None = None,
) -> float:
    """Relative L2 mismatch between the series and the quadrature oracle.

    The delta residue is excluded (it has no support at t > 0).  The default
    grid is t = 0.25 .. 50 in steps of 0.25, avoiding the t = 0 endpoint
    where the drude real part diverges.
    """
    if t_grid is None:
        t_grid = np.arange(0.25, 50.0 + 1e-9, 0.25)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if reference is None:
        reference = correlation_reference(spec, t_grid)
    approx = series.evaluate(t_grid)
    norm = np.linalg.norm(reference)
    if norm == 0.0:
        return float(np.linalg.norm(approx))
    return float(np.linalg.norm(approx - reference) / norm)
