"""Offline design: regulator equations, integerization, and the modulus bound.

The pipeline turns a plant/reference description plus chosen gains into the
integer matrices the encrypted controller runs on:

1. ``solve_regulator`` finds the steady-state maps (state_map, input_map)
   satisfying  state_map @ S = A @ state_map + B @ input_map  and
   C @ state_map = I, exactly over rationals.
2. ``integerize`` divides the closed-loop matrices by the zoom contraction
   gamma and the gain scale s and verifies every quotient is integral, so the
   controller recursion closes over integers (and hence over Z_q).
3. ``compute_modulus_bound`` sizes the plaintext modulus: analytically from a
   geometric envelope of the error dynamics when a contraction certificate
   exists, otherwise empirically from an exact plaintext run of the loop.

All hard guarantees are rational-exact; spectral radii are floating
estimates and are treated as advisory (warnings, not proofs).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .exactmath import (
    CharPoly,
    NonIntegralError,
    NonUniqueSolutionError,
    NoSolutionError,
    char_poly_coeffs,
    frac,
    fraction_to_str,
    identity,
    inf_norm,
    rational_matrix,
    rational_vector,
    solve_linear_exact,
    spectral_radius_estimate,
    sqrt_upper_bound,
    to_integer_array,
    two_norm_upper_bound,
    zeros,
)
from .quantizer import ZoomSchedule

__all__ = [
    "DesignError",
    "RegulatorInfeasibleError",
    "IntegerizationError",
    "StabilityMarginError",
    "DivergentEmpiricalBoundError",
    "PlantSpec",
    "RegulatorSolution",
    "CayleyCoefficients",
    "ModulusBound",
    "DesignArtifacts",
    "solve_regulator",
    "integerize",
    "compute_modulus_bound",
    "validate_design",
    "default_initial_state",
    "default_initial_reference",
]

# Slack below which a gamma sitting exactly on the slower loop's spectral
# radius is waived with a warning instead of rejected; the radii are floating
# estimates, so demanding a strict float inequality would be theater.
_MARGIN_SLACK = 1e-9


class DesignError(Exception):
    pass


class RegulatorInfeasibleError(DesignError):
    """The regulator equations admit no exact solution."""


class IntegerizationError(DesignError):
    """A scaled matrix that must be integral is not; lists every offender."""

    def __init__(self, entries):
        listed = "; ".join(
            f"{name}[{r},{c}] = {fraction_to_str(v)}" for name, r, c, v in entries
        )
        super().__init__(f"scaled matrices are not integral: {listed}")
        self.entries = entries


class StabilityMarginError(DesignError):
    """gamma lies below the slower loop's spectral radius estimate."""


class DivergentEmpiricalBoundError(DesignError):
    """The empirical envelope kept growing past the horizon; no finite bound."""


@dataclass(frozen=True)
class PlantSpec:
    """Plant, reference generator, and the stabilizing/observer gains.

    A: state transition (n x n)     B: input map (n x w)
    C: output map (v x n)           S: reference dynamics (v x v)
    K: state feedback gain (w x n)  L: observer gain (n x v)
    c_xp0 / c_vp0: known bounds on the infinity norms of the initial plant
    and reference states, used only by the modulus bound.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    S: np.ndarray
    K: np.ndarray
    L: np.ndarray
    c_xp0: Fraction
    c_vp0: Fraction

    def __post_init__(self):
        object.__setattr__(self, "A", rational_matrix(self.A))
        object.__setattr__(self, "B", rational_matrix(self.B))
        object.__setattr__(self, "C", rational_matrix(self.C))
        object.__setattr__(self, "S", rational_matrix(self.S))
        object.__setattr__(self, "K", rational_matrix(self.K))
        object.__setattr__(self, "L", rational_matrix(self.L))
        object.__setattr__(self, "c_xp0", frac(self.c_xp0))
        object.__setattr__(self, "c_vp0", frac(self.c_vp0))
        n, w, v = self.n, self.w, self.v
        checks = [
            ("A", self.A, (n, n)),
            ("B", self.B, (n, w)),
            ("C", self.C, (v, n)),
            ("S", self.S, (v, v)),
            ("K", self.K, (w, n)),
            ("L", self.L, (n, v)),
        ]
        for name, mat, shape in checks:
            if mat.shape != shape:
                raise ValueError(f"{name} has shape {mat.shape}, expected {shape}")
        if self.c_xp0 < 0 or self.c_vp0 < 0:
            raise ValueError("initial-state bounds must be nonnegative")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def w(self) -> int:
        return self.B.shape[1]

    @property
    def v(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class RegulatorSolution:
    """Exact steady-state maps: state_map (n x v) and input_map (w x v)."""

    state_map: np.ndarray
    input_map: np.ndarray
    unique: bool

    def feedforward(self, spec: PlantSpec) -> np.ndarray:
        """input_map - K @ state_map: the reference feedthrough the controller uses."""
        return self.input_map - spec.K @ self.state_map


@dataclass(frozen=True)
class CayleyCoefficients:
    """Characteristic coefficients of the scaled reference dynamics.

    coeffs = (c_{v-1}, ..., c_0) orders the weight of the most recent history
    entry first; coeffs_ext prepends the leading 1 for sums that include the
    current step.  Entries are exact integers whenever S/gamma is integral.
    """

    coeffs: tuple[int, ...]
    coeffs_ext: tuple[int, ...]

    @property
    def window(self) -> int:
        return len(self.coeffs)

    def history_sum(self, history) -> np.ndarray:
        """sum_j coeffs[j-1] * history[j-1] for history ordered newest first."""
        if len(history) != len(self.coeffs):
            raise ValueError(f"history length {len(history)} != {len(self.coeffs)}")
        acc = None
        for c, vec in zip(self.coeffs, history):
            term = c * vec
            acc = term if acc is None else acc + term
        return acc if acc is not None else np.empty(0, dtype=object)


@dataclass(frozen=True)
class ModulusBound:
    """Result of the modulus sizing step.

    c_pe bounds the transient envelope sup_k ||(p_bar, e_x)(k)||_2; it is an
    exact rational in both methods (square roots enter through rational upper
    bounds).  q_min is the least integer the restoration inequality accepts.
    """

    method: str  # "analytic" | "empirical"
    c_pe: Fraction
    q_min: int
    rho: Optional[float]
    c_rho: Optional[Fraction]
    horizon: int
    notes: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "c_pe": fraction_to_str(self.c_pe),
            "c_pe_float": float(self.c_pe),
            "q_min": self.q_min,
            "rho": self.rho,
            "c_rho": None if self.c_rho is None else float(self.c_rho),
            "horizon": self.horizon,
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class DesignArtifacts:
    """Integer controller data plus the scales that produced it.

    obs_dyn    (A - L C) / gamma   observer state transition
    obs_input  s B / gamma         effect of the (scaled) input on the observer
    obs_sensor s L / gamma         injection of the quantized measurement
    ref_dyn    S / gamma           reference-estimate transition
    innov_gain s / gamma           scalar weight of the quantized innovation
    fb_gain    K / s               state feedback on the integer state
    ff_gain    (input_map - K state_map) / s   reference feedthrough
    ref_scaled S / s               used by the reference side to form innovations
    """

    gamma: Fraction
    s: Fraction
    zoom: ZoomSchedule
    obs_dyn: np.ndarray
    obs_input: np.ndarray
    obs_sensor: np.ndarray
    ref_dyn: np.ndarray
    innov_gain: int
    fb_gain: np.ndarray
    ff_gain: np.ndarray
    ref_scaled: np.ndarray
    cayley: CayleyCoefficients
    rho_fb: float
    rho_obs: float
    stability_waiver: bool
    bound: Optional[ModulusBound] = None

    def integer_matrix_table(self) -> dict[str, np.ndarray]:
        return {
            "obs_dyn": self.obs_dyn,
            "obs_input": self.obs_input,
            "obs_sensor": self.obs_sensor,
            "ref_dyn": self.ref_dyn,
            "fb_gain": self.fb_gain,
            "ff_gain": self.ff_gain,
            "ref_scaled": self.ref_scaled,
        }

    def with_bound(self, bound: ModulusBound) -> "DesignArtifacts":
        return dataclasses.replace(self, bound=bound)


def _kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ra, ca = a.shape
    rb, cb = b.shape
    out = zeros(ra * rb, ca * cb)
    for i in range(ra):
        for j in range(ca):
            if a[i, j] != 0:
                out[i * rb:(i + 1) * rb, j * cb:(j + 1) * cb] = a[i, j] * b
    return out


def solve_regulator(spec: PlantSpec) -> RegulatorSolution:
    """Solve the steady-state equations exactly.

    Unknowns are vec(state_map) and vec(input_map), columns stacked.  The
    equations  state_map S - A state_map - B input_map = 0  and
    C state_map = I  become one sparse rational system; rank deficiency with
    a consistent right-hand side yields a particular solution flagged
    unique=False.
    """
    n, w, v = spec.n, spec.w, spec.v
    i_n = identity(n)
    i_v = identity(v)
    # Sylvester part: (S^T kron I_n - I_v kron A) vec(G) - (I_v kron B) vec(V) = 0
    top = np.concatenate(
        [
            _kron(spec.S.T, i_n) - _kron(i_v, spec.A),
            -_kron(i_v, spec.B),
        ],
        axis=1,
    )
    # Output pinning: (I_v kron C) vec(G) = vec(I_v)
    bottom = np.concatenate([_kron(i_v, spec.C), zeros(v * v, w * v)], axis=1)
    system = np.concatenate([top, bottom], axis=0)
    rhs = zeros(n * v + v * v)
    eye_flat = i_v.T.flatten()  # column-major stacking
    for idx, val in enumerate(eye_flat):
        rhs[n * v + idx] = val

    try:
        sol = solve_linear_exact(system, rhs)
        unique = True
    except NoSolutionError as exc:
        raise RegulatorInfeasibleError(
            "the steady-state equations are inconsistent for this plant/reference pair"
        ) from exc
    except NonUniqueSolutionError as exc:
        sol = exc.particular
        unique = False

    state_map = zeros(n, v)
    input_map = zeros(w, v)
    for col in range(v):
        for row in range(n):
            state_map[row, col] = sol[col * n + row]
    for col in range(v):
        for row in range(w):
            input_map[row, col] = sol[n * v + col * w + row]

    # Exact residual check; a failure here is an internal error.
    res1 = state_map @ spec.S - spec.A @ state_map - spec.B @ input_map
    res2 = spec.C @ state_map - i_v
    if any(x != 0 for x in res1.flat) or any(x != 0 for x in res2.flat):
        raise RuntimeError("regulator residual is nonzero (internal error)")
    return RegulatorSolution(state_map=state_map, input_map=input_map, unique=unique)


def integerize(
    spec: PlantSpec,
    reg: RegulatorSolution,
    gamma,
    s,
    l0="1",
) -> DesignArtifacts:
    """Scale the controller matrices by gamma and s and verify integrality.

    gamma must sit at or above the larger of the two loop spectral radii
    (floating estimates): strictly above passes, equality within 1e-9 is
    recorded as a waiver, below raises StabilityMarginError.
    """
    gamma = frac(gamma)
    s = frac(s)
    if not (0 < gamma < 1):
        raise DesignError(f"gamma must be in (0, 1), got {fraction_to_str(gamma)}")
    if s <= 0:
        raise DesignError(f"s must be positive, got {fraction_to_str(s)}")

    rho_fb = spectral_radius_estimate(spec.A + spec.B @ spec.K)
    rho_obs = spectral_radius_estimate(spec.A - spec.L @ spec.C)
    rho_max = max(rho_fb, rho_obs)
    waiver = False
    if float(gamma) < rho_max - _MARGIN_SLACK:
        raise StabilityMarginError(
            f"gamma = {fraction_to_str(gamma)} is below the loop spectral radius "
            f"estimate {rho_max:.12g}; the scaled error dynamics would diverge"
        )
    if float(gamma) <= rho_max + _MARGIN_SLACK:
        waiver = True

    feedforward = reg.feedforward(spec)
    candidates = [
        ("obs_dyn", (spec.A - spec.L @ spec.C) / gamma),
        ("obs_input", (s / gamma) * spec.B),
        ("obs_sensor", (s / gamma) * spec.L),
        ("ref_dyn", spec.S / gamma),
        ("innov_gain", rational_matrix([[s / gamma]])),
        ("fb_gain", spec.K / s),
        ("ff_gain", feedforward / s),
        ("ref_scaled", spec.S / s),
    ]
    offenders = []
    converted = {}
    for name, mat in candidates:
        try:
            converted[name] = to_integer_array(mat, name)
        except NonIntegralError as exc:
            offenders.extend(exc.entries)
    if offenders:
        raise IntegerizationError(offenders)

    ref_dyn = converted["ref_dyn"]
    poly: CharPoly = char_poly_coeffs(ref_dyn)
    coeffs = tuple(int(c) for c in poly.coeffs)  # integral since ref_dyn is
    cayley = CayleyCoefficients(coeffs=coeffs, coeffs_ext=(1,) + coeffs)

    return DesignArtifacts(
        gamma=gamma,
        s=s,
        zoom=ZoomSchedule(gamma=gamma, l0=frac(l0)),
        obs_dyn=converted["obs_dyn"],
        obs_input=converted["obs_input"],
        obs_sensor=converted["obs_sensor"],
        ref_dyn=ref_dyn,
        innov_gain=int(converted["innov_gain"][0, 0]),
        fb_gain=converted["fb_gain"],
        ff_gain=converted["ff_gain"],
        ref_scaled=converted["ref_scaled"],
        cayley=cayley,
        rho_fb=rho_fb,
        rho_obs=rho_obs,
        stability_waiver=waiver,
    )


def default_initial_state(spec: PlantSpec) -> np.ndarray:
    """(1, 1, ..., 1): the documented default plant start."""
    return rational_vector([1] * spec.n)


def default_initial_reference(spec: PlantSpec) -> np.ndarray:
    """(1, 0, ..., 0): the documented default reference start."""
    return rational_vector([1] + [0] * (spec.v - 1))


def closed_loop_matrices(spec: PlantSpec, reg: RegulatorSolution, gamma: Fraction):
    """Scaled error dynamics (block upper triangular) and disturbance map."""
    n, v = spec.n, spec.v
    a_fb = (spec.A + spec.B @ spec.K) / gamma
    a_obs = (spec.A - spec.L @ spec.C) / gamma
    coupling = -(spec.B @ spec.K) / gamma
    a_cl = zeros(2 * n, 2 * n)
    a_cl[:n, :n] = a_fb
    a_cl[:n, n:] = coupling
    a_cl[n:, n:] = a_obs
    b_cl = zeros(2 * n, 2 * v)
    b_cl[:n, :v] = -(spec.B @ reg.feedforward(spec)) / gamma
    b_cl[n:, v:] = spec.L / gamma
    return a_cl, b_cl


def _restoration_q_min(spec: PlantSpec, reg: RegulatorSolution,
                       artifacts: DesignArtifacts, c_pe: Fraction) -> int:
    """Least integer q with q/2 above the restored-sum envelope."""
    coeff_norm = sum(abs(Fraction(c)) for c in artifacts.cayley.coeffs_ext)
    k_norm = inf_norm(spec.K)
    ff_norm = inf_norm(reg.feedforward(spec))
    need = 2 * coeff_norm * (2 * k_norm * c_pe + ff_norm / (2 * artifacts.gamma))
    q_min = int(need) + 1  # strictly greater than the rational envelope
    assert Fraction(q_min) > need
    return q_min


def compute_modulus_bound(
    spec: PlantSpec,
    reg: RegulatorSolution,
    artifacts: DesignArtifacts,
    *,
    horizon: int = 60,
    x_p0=None,
    v_p0=None,
    xhat0=None,
    vhat0=None,
) -> ModulusBound:
    """Size the plaintext modulus for exact restoration.

    When the scaled error dynamics admit a contraction certificate
    (spectral radius estimate < 1), the transient envelope c_pe comes from a
    geometric decay bound and the method is "analytic".  Otherwise c_pe is
    measured from an exact plaintext run over ``horizon`` steps ("empirical");
    the run is extended to twice the horizon and the bound is declared
    divergent if the envelope keeps growing past it.

    Monotonicity note: the analytic envelope is nondecreasing in the
    initial-state bounds c_xp0 / c_vp0; the empirical one depends on the
    concrete initial vectors instead.
    """
    a_cl, b_cl = closed_loop_matrices(spec, reg, artifacts.gamma)
    rho_est = spectral_radius_estimate(a_cl)
    notes: list[str] = []

    if rho_est < 1.0 - 1e-9:
        is_zero = all(v == 0 for v in a_cl.flat)
        if is_zero:
            rho = 0.0
            c_rho = Fraction(1)
            notes.append("error dynamics are identically zero; c_rho = 1, rho = 0")
        else:
            rho = min(rho_est * 1.01, (1.0 + rho_est) / 2.0)
            if rho <= 0.0:
                # Nilpotent but nonzero: any rho in (0, 1) certifies; take the
                # midpoint the margin rule would use.
                rho = (1.0 + rho_est) / 2.0
                notes.append("nilpotent error dynamics; using midpoint rho")
            c_rho = Fraction(0)
            rho_frac = Fraction(str(rho))
            power = identity(a_cl.shape[0])
            for k in range(4 * a_cl.shape[0] + 1):
                norm_k = two_norm_upper_bound(power)
                if norm_k > 0:
                    c_rho = max(c_rho, norm_k / rho_frac**k)
                power = power @ a_cl
        rho_frac = Fraction(str(rho))
        sqrt_2n = sqrt_upper_bound(2 * spec.n)
        sqrt_2v = sqrt_upper_bound(2 * spec.v)
        term_initial = (
            c_rho * sqrt_2n * (spec.c_xp0 + inf_norm(reg.state_map) * spec.c_vp0)
            / artifacts.zoom.l0
        )
        term_disturbance = (
            c_rho * two_norm_upper_bound(b_cl) * sqrt_2v
            / (2 * artifacts.gamma * (1 - rho_frac))
        )
        notes.append("2-norms upper-bounded by sqrt(dim) * inf-norm where not diagonal")
        c_pe = max(term_initial, term_disturbance)
        return ModulusBound(
            method="analytic",
            c_pe=c_pe,
            q_min=_restoration_q_min(spec, reg, artifacts, c_pe),
            rho=rho,
            c_rho=c_rho,
            horizon=horizon,
            notes=tuple(notes),
        )

    # No contraction certificate: measure the envelope from an exact run.
    from .simloop import run_plaintext_loop  # local import; simloop depends on us

    x_p0 = default_initial_state(spec) if x_p0 is None else rational_vector(x_p0)
    v_p0 = default_initial_reference(spec) if v_p0 is None else rational_vector(v_p0)
    xhat0 = zeros(spec.n) if xhat0 is None else rational_vector(xhat0)
    vhat0 = zeros(spec.v) if vhat0 is None else rational_vector(vhat0)

    sup_sq_horizon = Fraction(0)
    sup_sq_extended = Fraction(0)
    extended = 2 * horizon
    for step in run_plaintext_loop(
        spec, reg, artifacts, horizon=extended,
        x_p0=x_p0, v_p0=v_p0, xhat0=xhat0, vhat0=vhat0,
    ):
        sq = sum((Fraction(x) ** 2 for x in step.p_bar), Fraction(0))
        sq += sum((Fraction(x) ** 2 for x in step.e_x), Fraction(0))
        if step.k <= horizon:
            sup_sq_horizon = max(sup_sq_horizon, sq)
        sup_sq_extended = max(sup_sq_extended, sq)

    # A bounded envelope has settled well before the horizon (the ratio of
    # sups is 1); any drift that still lifts the sup by half again over the
    # doubled window means the window certifies nothing.
    if sup_sq_horizon > 0 and 4 * sup_sq_extended > 9 * sup_sq_horizon:
        raise DivergentEmpiricalBoundError(
            f"transient envelope grew more than 1.5x between step {horizon} and "
            f"{extended}; no finite modulus is certified for these initial conditions"
        )
    notes.append(
        f"no contraction certificate (spectral radius estimate {rho_est:.6g}); "
        f"envelope measured over {extended} exact plaintext steps"
    )
    c_pe = sqrt_upper_bound(sup_sq_extended)
    return ModulusBound(
        method="empirical",
        c_pe=c_pe,
        q_min=_restoration_q_min(spec, reg, artifacts, c_pe),
        rho=None,
        c_rho=None,
        horizon=horizon,
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class ValidationReport:
    rows: tuple[dict, ...]

    @property
    def ok(self) -> bool:
        return all(row["status"] != "fail" for row in self.rows)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "checks": list(self.rows)}


def validate_design(
    spec: PlantSpec,
    reg: RegulatorSolution,
    artifacts: DesignArtifacts,
    *,
    xhat0=None,
    vhat0=None,
) -> ValidationReport:
    """Re-derive every design invariant and report pass/warn/fail rows."""
    rows: list[dict] = []

    def row(check: str, status: str, detail: str):
        rows.append({"check": check, "status": status, "detail": detail})

    rho_fb, rho_obs = artifacts.rho_fb, artifacts.rho_obs
    row(
        "feedback loop contracts",
        "pass" if rho_fb < 1 else "warn",
        f"spectral radius estimate {rho_fb:.12g}",
    )
    row(
        "observer loop contracts",
        "pass" if rho_obs < 1 else "warn",
        f"spectral radius estimate {rho_obs:.12g}",
    )
    rho_ref = spectral_radius_estimate(spec.S)
    row(
        "reference is persistent",
        "pass" if rho_ref >= 1 - 1e-9 else "warn",
        f"spectral radius estimate {rho_ref:.12g} "
        + ("" if rho_ref >= 1 - 1e-9 else "(decaying reference: tracking is trivial)"),
    )
    row(
        "zoom margin",
        "warn" if artifacts.stability_waiver else "pass",
        f"gamma = {fraction_to_str(artifacts.gamma)} vs max radius "
        f"{max(rho_fb, rho_obs):.12g}"
        + (" (equality waiver)" if artifacts.stability_waiver else ""),
    )

    for name, mat in artifacts.integer_matrix_table().items():
        integral = all(isinstance(x, int) or Fraction(x).denominator == 1 for x in mat.flat)
        row(f"{name} integral", "pass" if integral else "fail", "exact quotient")
    row("innov_gain integral", "pass", f"value {artifacts.innov_gain}")

    res1 = reg.state_map @ spec.S - spec.A @ reg.state_map - spec.B @ reg.input_map
    res2 = spec.C @ reg.state_map - identity(spec.v)
    exact = all(x == 0 for x in res1.flat) and all(x == 0 for x in res2.flat)
    row("regulator residual zero", "pass" if exact else "fail",
        "exact" if exact else "nonzero residual")
    if not reg.unique:
        row("regulator uniqueness", "warn", "rank-deficient; a particular solution is used")

    # Cayley-Hamilton re-check on the integer reference dynamics.
    poly = char_poly_coeffs(artifacts.ref_dyn)
    match = tuple(int(c) for c in poly.coeffs) == artifacts.cayley.coeffs
    row("characteristic coefficients", "pass" if match else "fail",
        f"coeffs {artifacts.cayley.coeffs}")

    s, l0 = artifacts.s, artifacts.zoom.l0
    xhat0 = zeros(spec.n) if xhat0 is None else rational_vector(xhat0)
    vhat0 = zeros(spec.v) if vhat0 is None else rational_vector(vhat0)
    for name, vec in (("initial observer state", xhat0), ("initial reference estimate", vhat0)):
        scaled = (s / l0) * vec
        ok = all(Fraction(x).denominator == 1 for x in scaled.flat)
        row(f"{name} integerizes", "pass" if ok else "fail",
            f"s/l0 * value = {[fraction_to_str(Fraction(x)) for x in scaled.flat]}")

    return ValidationReport(rows=tuple(rows))
