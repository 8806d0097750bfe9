"""Closed-loop simulation: plant, reference, encrypted controller, actuator.

One step of the loop, for step index k with shared scale l(k):

1. the sensor quantizes the scaled measurement and encrypts it;
2. the reference side quantizes the innovation between its scaled reference
   and a plaintext replica of the controller's reference estimate, and
   encrypts it;
3. the controller evaluates its output over ciphertexts and refreshes its
   encrypted state using only modular additions and plain integer products;
4. the actuator decrypts, undoes the modular wraparound from its own local
   history, rescales by l(k), and drives the plant.

A plaintext oracle runs the identical integer recursion next to the
encrypted one.  Every step asserts that decrypting the controller state
matches the oracle modulo q, that the reference replica equals the oracle's
reference estimate, and that the restored-sum identity (output plus weighted
history equals the characteristic-coefficient combination of the tracking
residuals) holds exactly.  Trace rows record what the acceptance checks and
the plots consume.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Optional

import numpy as np

from . import he
from .design import DesignArtifacts, PlantSpec, RegulatorSolution
from .exactmath import (
    NoSolutionError,
    centered_lift_vector,
    fraction_to_str,
    inf_norm,
    invert_matrix,
    mod_reduce,
    rational_vector,
    to_integer_array,
    zeros,
)
from .quantizer import quantize_vector

__all__ = [
    "LoopError",
    "LoopInvariantError",
    "NonIntegerInitialStateError",
    "LoopConfig",
    "TraceRecord",
    "RunResult",
    "PlaintextStep",
    "SCHEMES",
    "init_loop",
    "run_closed_loop",
    "run_plaintext_loop",
]

SCHEMES = ("a", "b", "naive")


class LoopError(Exception):
    pass


class NonIntegerInitialStateError(LoopError):
    """s * initial_estimate / l0 must be an integer vector."""


class LoopInvariantError(LoopError):
    """An exactness invariant the loop is built on failed (internal error)."""


@dataclass(frozen=True)
class LoopConfig:
    spec: PlantSpec
    reg: RegulatorSolution
    artifacts: DesignArtifacts
    scheme: str
    he_params: he.HEParams
    horizon: int
    x_p0: np.ndarray
    v_p0: np.ndarray
    xhat0: np.ndarray
    vhat0: np.ndarray

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise LoopError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if self.horizon < 0:
            raise LoopError("horizon must be >= 0")
        object.__setattr__(self, "x_p0", rational_vector(self.x_p0))
        object.__setattr__(self, "v_p0", rational_vector(self.v_p0))
        object.__setattr__(self, "xhat0", rational_vector(self.xhat0))
        object.__setattr__(self, "vhat0", rational_vector(self.vhat0))
        for name, vec, dim in (
            ("x_p0", self.x_p0, self.spec.n),
            ("v_p0", self.v_p0, self.spec.v),
            ("xhat0", self.xhat0, self.spec.n),
            ("vhat0", self.vhat0, self.spec.v),
        ):
            if vec.shape != (dim,):
                raise LoopError(f"{name} has shape {vec.shape}, expected ({dim},)")


@dataclass(frozen=True)
class TraceRecord:
    k: int
    y_err_inf: Fraction
    restoration_exact: bool
    figure4_norm: Fraction
    internal_state_inf: Fraction
    l_k: Fraction
    overflow_detected: bool


@dataclass(frozen=True)
class RunResult:
    records: tuple[TraceRecord, ...]
    final_tracking_error: Fraction
    scheme: str
    backend: str
    q: int
    horizon: int
    seed: int

    @property
    def max_figure4_norm(self) -> Fraction:
        return max((r.figure4_norm for r in self.records), default=Fraction(0))

    @property
    def max_internal_state(self) -> Fraction:
        return max((r.internal_state_inf for r in self.records), default=Fraction(0))

    @property
    def first_restoration_failure(self) -> Optional[int]:
        for r in self.records:
            if not r.restoration_exact:
                return r.k
        return None

    @property
    def first_overflow(self) -> Optional[int]:
        for r in self.records:
            if r.overflow_detected:
                return r.k
        return None

    def summary_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "backend": self.backend,
            "q": str(self.q),
            "horizon": self.horizon,
            "seed": self.seed,
            "final_tracking_error": {
                "exact": fraction_to_str(self.final_tracking_error),
                "float": float(self.final_tracking_error),
            },
            "max_figure4_norm": {
                "exact": fraction_to_str(self.max_figure4_norm),
                "float": float(self.max_figure4_norm),
            },
            "max_internal_state": {
                "exact": fraction_to_str(self.max_internal_state),
                "float": float(self.max_internal_state),
            },
            "first_restoration_failure": self.first_restoration_failure,
            "first_overflow": self.first_overflow,
            "all_restorations_exact": self.first_restoration_failure is None,
        }


class Plant:
    def __init__(self, spec: PlantSpec, x0: np.ndarray):
        self.spec = spec
        self.x = x0

    def output(self) -> np.ndarray:
        return self.spec.C @ self.x

    def advance(self, u: np.ndarray):
        self.x = self.spec.A @ self.x + self.spec.B @ u


class Exosystem:
    def __init__(self, spec: PlantSpec, v0: np.ndarray):
        self.spec = spec
        self.v = v0

    def advance(self):
        self.v = self.spec.S @ self.v


class ReferenceProvider:
    """Owns the reference state and a plaintext replica of the controller's
    reference estimate; emits quantized innovations."""

    def __init__(self, artifacts: DesignArtifacts, exo: Exosystem, replica0: np.ndarray):
        self.art = artifacts
        self.exo = exo
        self.replica = replica0  # integer vector

    def innovation(self, k: int) -> np.ndarray:
        scaled_ref = (self.art.s / self.art.zoom.at(k)) * self.exo.v
        chi = self.art.ref_scaled @ scaled_ref - self.art.ref_scaled @ self.replica
        return quantize_vector(chi)

    def advance(self, innovation: np.ndarray):
        self.replica = self.art.ref_dyn @ self.replica + self.art.innov_gain * innovation


@dataclass(frozen=True)
class OracleStep:
    k: int
    u_bar: np.ndarray      # integer controller output
    u: np.ndarray          # rational input u = l(k) * u_bar
    restored_sum: np.ndarray  # u_bar plus the weighted output history
    figure4_norm: Fraction
    p_bar: np.ndarray
    e_x: np.ndarray
    e_v: np.ndarray


class Oracle:
    """Plaintext twin of the encrypted controller plus exact diagnostics.

    Maintains the unbounded-integer controller recursion, the scaled
    reference trajectory, and the history windows needed to evaluate the
    restored-sum identity from step zero.  History before step zero follows
    the convention that outputs are zero; the matching residual seeds come
    from running the scaled reference dynamics backwards, which exists
    whenever those dynamics are invertible (otherwise identity checking
    starts once the window has filled with real data).
    """

    def __init__(
        self,
        spec: PlantSpec,
        reg: RegulatorSolution,
        artifacts: DesignArtifacts,
        x_t0: np.ndarray,
        v_t0: np.ndarray,
        vbar_p0: np.ndarray,
    ):
        self.spec = spec
        self.reg = reg
        self.art = artifacts
        self.x_t = x_t0
        self.v_t = v_t0
        self.vbar_p = vbar_p0
        self.feedforward = reg.feedforward(spec)
        window = artifacts.cayley.window
        self.u_hist = deque([zeros(spec.w) for _ in range(window)], maxlen=window)
        self.z_hist, self.identity_from = self._seed_residuals(window, vbar_p0)
        self.half_q_gamma = Fraction(1, 2) / artifacts.gamma

    def _seed_residuals(self, window: int, vbar_p0: np.ndarray):
        try:
            back = invert_matrix(
                np.array([[Fraction(v) for v in row] for row in self.art.ref_dyn],
                         dtype=object)
            )
        except NoSolutionError:
            return deque([zeros(self.spec.w) for _ in range(window)], maxlen=window), window
        hist = deque(maxlen=window)
        vb = vbar_p0
        for _ in range(window):
            vb = back @ vb
            hist.append(-(self.reg.input_map @ vb))  # newest (k = -1) first
        return hist, 0

    def step(self, k: int, x_p: np.ndarray, y_quant: np.ndarray, l_k: Fraction) -> OracleStep:
        art, spec = self.art, self.spec
        u_bar = art.fb_gain @ self.x_t + art.ff_gain @ self.v_t
        x_bar = self.x_t / art.s
        v_bar = self.v_t / art.s
        x_bar_p = x_p / l_k
        p_bar = x_bar_p - self.reg.state_map @ self.vbar_p
        e_x = x_bar_p - x_bar
        e_v = self.vbar_p - v_bar
        z = spec.K @ p_bar - spec.K @ e_x - self.feedforward @ e_v

        hist_sum = art.cayley.history_sum(list(self.u_hist))
        restored_sum = u_bar + hist_sum
        combo = z
        for c, zj in zip(art.cayley.coeffs, self.z_hist):
            combo = combo + c * zj
        if k >= self.identity_from and any(a != b for a, b in zip(restored_sum, combo)):
            raise LoopInvariantError(
                f"restored-sum identity failed at step {k}: "
                f"{[fraction_to_str(Fraction(x)) for x in restored_sum]} vs "
                f"{[fraction_to_str(Fraction(x)) for x in combo]}"
            )

        if k >= 1 and inf_norm(e_v) > self.half_q_gamma:
            raise LoopInvariantError(
                f"reference-estimate error exceeded 1/(2 gamma) at step {k}"
            )
        e_y_q = spec.C @ x_bar_p - y_quant
        if inf_norm(e_y_q) > Fraction(1, 2):
            raise LoopInvariantError(f"measurement quantization error above 1/2 at step {k}")

        self._pending = (u_bar, z)
        return OracleStep(
            k=k,
            u_bar=u_bar,
            u=l_k * u_bar,
            restored_sum=restored_sum,
            figure4_norm=inf_norm(restored_sum),
            p_bar=p_bar,
            e_x=e_x,
            e_v=e_v,
        )

    def advance(self, y_quant: np.ndarray, innovation: np.ndarray):
        u_bar, z = self._pending
        art = self.art
        self.x_t = art.obs_dyn @ self.x_t + art.obs_input @ u_bar + art.obs_sensor @ y_quant
        self.v_t = art.ref_dyn @ self.v_t + art.innov_gain * innovation
        self.vbar_p = art.ref_dyn @ self.vbar_p
        self.u_hist.appendleft(u_bar)
        self.z_hist.appendleft(z)


class EncryptedController:
    """The controller's cipher-side recursion; sees only Z_q residues."""

    def __init__(self, params: he.HEParams, artifacts: DesignArtifacts,
                 scheme: str, x_t0: np.ndarray, v_t0: np.ndarray, w: int):
        q = params.q
        self.params = params
        self.scheme = scheme
        self.fb_q = mod_reduce(artifacts.fb_gain, q)
        self.ff_q = mod_reduce(artifacts.ff_gain, q)
        self.obs_dyn_q = mod_reduce(artifacts.obs_dyn, q)
        self.obs_input_q = mod_reduce(artifacts.obs_input, q)
        self.obs_sensor_q = mod_reduce(artifacts.obs_sensor, q)
        self.ref_dyn_q = mod_reduce(artifacts.ref_dyn, q)
        self.innov_q = artifacts.innov_gain % q
        self.coeffs_q = tuple(c % q for c in artifacts.cayley.coeffs)
        self.xc = he.encrypt(params, [int(v) % q for v in x_t0])
        self.vc = he.encrypt(params, [int(v) % q for v in v_t0])
        self.u_hist_c = deque(
            (he.encrypt(params, [0] * w) for _ in range(artifacts.cayley.window)),
            maxlen=artifacts.cayley.window,
        )

    def output(self) -> tuple[he.CipherVector, he.CipherVector]:
        """Returns (state-feedback output, transmitted message)."""
        uc = he.cipher_add(
            self.params,
            he.plain_mul(self.params, self.fb_q, self.xc),
            he.plain_mul(self.params, self.ff_q, self.vc),
        )
        if self.scheme != "b":
            return uc, uc
        mc = uc
        for c, hist in zip(self.coeffs_q, self.u_hist_c):
            mc = he.cipher_add(self.params, mc, he.scalar_mul(self.params, c, hist))
        return uc, mc

    def advance(self, y_cipher: he.CipherVector, innov_cipher: he.CipherVector,
                uc: he.CipherVector):
        p = self.params
        self.xc = he.cipher_add(
            p,
            he.cipher_add(
                p,
                he.plain_mul(p, self.obs_dyn_q, self.xc),
                he.plain_mul(p, self.obs_input_q, uc),
            ),
            he.plain_mul(p, self.obs_sensor_q, y_cipher),
        )
        self.vc = he.cipher_add(
            p,
            he.plain_mul(p, self.ref_dyn_q, self.vc),
            he.scalar_mul(p, self.innov_q, innov_cipher),
        )
        if self.scheme == "b":
            self.u_hist_c.appendleft(uc)


@dataclass(frozen=True)
class Restoration:
    u_a: np.ndarray                  # rational input applied to the plant
    internal_inf: Fraction           # size of the actuator's bounded/unbounded state
    restored_sum: Optional[np.ndarray]  # actuator-side view of the identity sum


class SchemeAActuator:
    """Keeps the last ``window`` restored integer outputs and subtracts the
    single multiple of q that recenters the decryption around their weighted
    sum."""

    def __init__(self, artifacts: DesignArtifacts, q: int, w: int):
        self.art = artifacts
        self.q = q
        self.hist = deque([zeros(w) for _ in range(artifacts.cayley.window)],
                          maxlen=artifacts.cayley.window)

    def restore(self, dec: tuple[int, ...], k: int) -> Restoration:
        q = self.q
        h = self.art.cayley.history_sum(list(self.hist))
        u_bar_a = np.empty(len(dec), dtype=object)
        for i, d in enumerate(dec):
            shifted = int(d) + int(h[i])
            u_bar_a[i] = int(d) - ((2 * shifted + q) // (2 * q)) * q
        self.hist.appendleft(u_bar_a)
        return Restoration(
            u_a=self.art.zoom.at(k) * u_bar_a,
            internal_inf=inf_norm(u_bar_a),
            restored_sum=u_bar_a + h,
        )


class SchemeBActuator:
    """Centered decryption plus a zoom-weighted history of applied inputs;
    its stored integers stay below q/2 whenever the design bound holds."""

    def __init__(self, artifacts: DesignArtifacts, q: int, w: int):
        self.art = artifacts
        self.q = q
        self.hist = deque([zeros(w) for _ in range(artifacts.cayley.window)],
                          maxlen=artifacts.cayley.window)

    def restore(self, dec: tuple[int, ...], k: int) -> Restoration:
        m_a = centered_lift_vector(np.array(dec, dtype=object), self.q)
        u_a = self.art.zoom.at(k) * m_a
        gamma = self.art.gamma
        for j, (c, past) in enumerate(zip(self.art.cayley.coeffs, self.hist), start=1):
            u_a = u_a - c * gamma**j * past
        self.hist.appendleft(u_a)
        return Restoration(u_a=u_a, internal_inf=inf_norm(m_a), restored_sum=m_a)


class NaiveActuator:
    """Recenters around the previous applied input only; correct only while
    consecutive inputs move less than q/2 at the current scale."""

    def __init__(self, artifacts: DesignArtifacts, q: int, w: int):
        self.art = artifacts
        self.q = q
        self.u_prev = zeros(w)

    def restore(self, dec: tuple[int, ...], k: int) -> Restoration:
        q = self.q
        l_k = self.art.zoom.at(k)
        u_bar_a = np.empty(len(dec), dtype=object)
        for i, d in enumerate(dec):
            anchor = Fraction(d) - Fraction(self.u_prev[i]) / l_k + Fraction(q, 2)
            u_bar_a[i] = int(d) - (anchor.numerator // (anchor.denominator * q)) * q
        u_a = l_k * u_bar_a
        self.u_prev = u_a
        return Restoration(u_a=u_a, internal_inf=inf_norm(u_bar_a), restored_sum=None)


def _initial_integer_states(cfg: LoopConfig):
    art = cfg.artifacts
    scale = art.s / art.zoom.l0
    try:
        x_t0 = to_integer_array(scale * cfg.xhat0, "s/l0 * xhat0")
        v_t0 = to_integer_array(scale * cfg.vhat0, "s/l0 * vhat0")
    except Exception as exc:
        raise NonIntegerInitialStateError(str(exc)) from exc
    return x_t0, v_t0


def init_loop(cfg: LoopConfig):
    """Instantiate every party plus the oracle for a configured run."""
    x_t0, v_t0 = _initial_integer_states(cfg)
    plant = Plant(cfg.spec, cfg.x_p0)
    exo = Exosystem(cfg.spec, cfg.v_p0)
    provider = ReferenceProvider(cfg.artifacts, exo, v_t0.copy())
    oracle = Oracle(cfg.spec, cfg.reg, cfg.artifacts, x_t0.copy(), v_t0.copy(),
                    cfg.v_p0 / cfg.artifacts.zoom.l0)
    controller = EncryptedController(cfg.he_params, cfg.artifacts, cfg.scheme,
                                     x_t0, v_t0, cfg.spec.w)
    q = cfg.he_params.q
    actuator = {
        "a": SchemeAActuator,
        "b": SchemeBActuator,
        "naive": NaiveActuator,
    }[cfg.scheme](cfg.artifacts, q, cfg.spec.w)
    return plant, exo, provider, oracle, controller, actuator


def _assert_cipher_matches_oracle(cfg: LoopConfig, controller: EncryptedController,
                                  oracle: Oracle, k: int):
    q = cfg.he_params.q
    dec_x = he.decrypt(cfg.he_params, controller.xc)
    dec_v = he.decrypt(cfg.he_params, controller.vc)
    if list(dec_x) != [int(v) % q for v in oracle.x_t]:
        raise LoopInvariantError(f"cipher observer state diverged from oracle at step {k}")
    if list(dec_v) != [int(v) % q for v in oracle.v_t]:
        raise LoopInvariantError(f"cipher reference state diverged from oracle at step {k}")


def run_closed_loop(cfg: LoopConfig) -> RunResult:
    plant, exo, provider, oracle, controller, actuator = init_loop(cfg)
    params = cfg.he_params
    q = params.q
    half_q = Fraction(q, 2)
    zoom = cfg.artifacts.zoom
    records = []
    u_prev = zeros(cfg.spec.w)

    for k in range(cfg.horizon):
        l_k = zoom.at(k)
        y_quant = quantize_vector(plant.output() / l_k)
        innovation = provider.innovation(k)

        if list(provider.replica) != list(oracle.v_t):
            raise LoopInvariantError(f"reference replica diverged from oracle at step {k}")
        _assert_cipher_matches_oracle(cfg, controller, oracle, k)

        y_cipher = he.encrypt(params, [int(v) % q for v in y_quant])
        innov_cipher = he.encrypt(params, [int(v) % q for v in innovation])
        uc, message = controller.output()

        ostep = oracle.step(k, plant.x, y_quant, l_k)
        dec = he.decrypt(params, message)
        expected = ostep.u_bar if cfg.scheme != "b" else ostep.restored_sum
        if list(dec) != [int(v) % q for v in expected]:
            raise LoopInvariantError(f"transmitted message decrypted wrong at step {k}")

        restored = actuator.restore(dec, k)
        restoration_exact = all(a == b for a, b in zip(restored.u_a, ostep.u))
        if cfg.scheme == "a" and restoration_exact:
            if any(a != b for a, b in zip(restored.restored_sum, ostep.restored_sum)):
                raise LoopInvariantError(
                    f"actuator-side restored sum disagrees with oracle at step {k}"
                )

        overflow = False
        if cfg.scheme == "naive":
            delta = (ostep.u - u_prev) / l_k
            overflow = inf_norm(delta) >= half_q

        records.append(TraceRecord(
            k=k,
            y_err_inf=inf_norm(plant.output() - exo.v),
            restoration_exact=restoration_exact,
            figure4_norm=ostep.figure4_norm,
            internal_state_inf=restored.internal_inf,
            l_k=l_k,
            overflow_detected=overflow,
        ))

        plant.advance(restored.u_a)
        exo.advance()
        provider.advance(innovation)
        controller.advance(y_cipher, innov_cipher, uc)
        oracle.advance(y_quant, innovation)
        u_prev = ostep.u

    return RunResult(
        records=tuple(records),
        final_tracking_error=inf_norm(plant.output() - exo.v),
        scheme=cfg.scheme,
        backend=params.backend,
        q=q,
        horizon=cfg.horizon,
        seed=params.seed,
    )


@dataclass(frozen=True)
class PlaintextStep:
    k: int
    u_bar: np.ndarray
    u: np.ndarray
    figure4_norm: Fraction
    p_bar: np.ndarray
    e_x: np.ndarray
    y_err_inf: Fraction


def run_plaintext_loop(
    spec: PlantSpec,
    reg: RegulatorSolution,
    artifacts: DesignArtifacts,
    *,
    horizon: int,
    x_p0,
    v_p0,
    xhat0,
    vhat0,
) -> Iterator[PlaintextStep]:
    """The same loop without encryption or an actuator: the exact controller
    input drives the plant directly.  Yields steps 0..horizon inclusive; used
    by the empirical modulus bound and as an independent route in tests."""
    x_p0 = rational_vector(x_p0)
    v_p0 = rational_vector(v_p0)
    scale = artifacts.s / artifacts.zoom.l0
    x_t0 = to_integer_array(scale * rational_vector(xhat0), "s/l0 * xhat0")
    v_t0 = to_integer_array(scale * rational_vector(vhat0), "s/l0 * vhat0")

    plant = Plant(spec, x_p0)
    exo = Exosystem(spec, v_p0)
    provider = ReferenceProvider(artifacts, exo, v_t0.copy())
    oracle = Oracle(spec, reg, artifacts, x_t0.copy(), v_t0.copy(),
                    v_p0 / artifacts.zoom.l0)

    for k in range(horizon + 1):
        l_k = artifacts.zoom.at(k)
        y_quant = quantize_vector(plant.output() / l_k)
        innovation = provider.innovation(k)
        ostep = oracle.step(k, plant.x, y_quant, l_k)
        yield PlaintextStep(
            k=k,
            u_bar=ostep.u_bar,
            u=ostep.u,
            figure4_norm=ostep.figure4_norm,
            p_bar=ostep.p_bar,
            e_x=ostep.e_x,
            y_err_inf=inf_norm(plant.output() - exo.v),
        )
        plant.advance(ostep.u)
        exo.advance()
        provider.advance(innovation)
        oracle.advance(y_quant, innovation)
