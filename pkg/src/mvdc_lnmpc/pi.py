"""Baseline PI voltage-restoration controller.

Acts on the bus-voltage error only and produces the shared restoration
input ``dV``. Anti-windup uses back-calculation: while the output is clipped the
integrator also receives ``k_aw * (saturated - unsaturated) / ki`` per
second, ``k_aw`` being the tracking rate in 1/s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import PlantParams, Topology, restoration_equilibrium


@dataclass(frozen=True)
class PiGains:
    kp: float
    ki: float
    u_min: float = -600.0
    u_max: float = 600.0
    k_aw: float = 100.0

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ValueError("PI gains must be non-negative")
        if self.u_min > self.u_max:
            raise ValueError("u_min exceeds u_max")

    @classmethod
    def from_dict(cls, raw, params: PlantParams):
        raw = dict(raw)
        u_frac = raw.pop("u_frac", 0.1)
        raw.setdefault("u_min", -u_frac * params.v_ref)
        raw.setdefault("u_max", u_frac * params.v_ref)
        return cls(**raw)


@dataclass(frozen=True)
class PiState:
    integral: float = 0.0  # accumulated error (V s)


def pi_step(gains: PiGains, st: PiState, v_ref, v_o, dt):
    """One sampling period of the PI law.

    Returns ``(delta_v, new_state)``.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    e = float(v_ref) - float(v_o)
    raw = gains.kp * e + gains.ki * st.integral
    u = min(max(raw, gains.u_min), gains.u_max)
    integral = st.integral + e * dt
    if u != raw and gains.ki > 0:
        integral += gains.k_aw * (u - raw) / gains.ki * dt
    return u, PiState(integral)


class PiController:
    """Stateful wrapper used by the closed-loop harness."""

    name = "pi"

    def __init__(self, gains: PiGains, params: PlantParams, topo: Topology, dt=5e-3):
        self.gains = gains
        self.params = params
        self.topo = topo
        self.dt = dt
        self.state = PiState()

    def reset(self, x0=None, d0=None, u0=None):
        """Preload the integrator so the output starts at ``u0`` (or at the
        restoration input of ``d0``) with zero error: a bumpless start."""
        if u0 is None:
            u0 = 0.0 if d0 is None else restoration_equilibrium(self.params, self.topo, d0)[1]
        self.state = PiState(u0 / self.gains.ki if self.gains.ki > 0 else 0.0)

    def step(self, t, x, d, d_preview=None):
        u, self.state = pi_step(self.gains, self.state, self.params.v_ref, x[0], self.dt)
        return u, None


def itae(times, errors):
    """Integral of time-weighted absolute error, trapezoidal rule."""
    times = np.asarray(times, float)
    y = times * np.abs(np.asarray(errors, float))
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(times)))
