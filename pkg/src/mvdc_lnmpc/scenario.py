"""Seeded load profiles and the two canned case studies.

A profile is a constant-power load with optional step changes, a train of
non-overlapping rectangular pulses, and optional relative white noise.
Noise is drawn per noise interval from a generator seeded with
``(seed, interval index)``, so a load value is a pure function of the
profile and the time.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

_EDGE = 1e-9  # guards k*dt round-off at pulse and step edges


@dataclass(frozen=True)
class NoiseSpec:
    enabled: bool = False
    sigma: float = 0.0      # relative standard deviation
    seed: int = 0
    interval: float = 5e-3  # s, one draw per interval

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.interval <= 0:
            raise ValueError("noise interval must be > 0")


@dataclass(frozen=True)
class LoadProfile:
    base_cpl: float
    cpl_steps: tuple = ()    # ((time, new level), ...)
    ppl_pulses: tuple = ()   # ((start, duration, magnitude), ...)
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        steps = tuple(sorted((float(t), float(p)) for t, p in self.cpl_steps))
        pulses = tuple(sorted((float(s), float(w), float(m)) for s, w, m in self.ppl_pulses))
        object.__setattr__(self, "cpl_steps", steps)
        object.__setattr__(self, "ppl_pulses", pulses)
        if self.base_cpl < 0 or any(p < 0 for _, p in steps):
            raise ValueError("CPL levels must be >= 0")
        for s, w, m in pulses:
            if w <= 0 or m < 0:
                raise ValueError("pulses need positive duration and non-negative magnitude")
        for (s0, w0, _), (s1, _, _) in zip(pulses, pulses[1:]):
            if s0 + w0 > s1 + _EDGE:
                raise ValueError("pulse windows overlap")

    def nominal(self, t):
        """Noise-free ``[p_cpl, p_ppl]`` at time ``t``."""
        cpl = self.base_cpl
        for ts, level in self.cpl_steps:
            if t >= ts - _EDGE:
                cpl = level
        ppl = 0.0
        for s, w, m in self.ppl_pulses:
            if s - _EDGE <= t < s + w - _EDGE:
                ppl = m
                break
        return np.array([cpl, ppl])

    def events(self):
        """Times at which the nominal load changes."""
        times = {t for t, _ in self.cpl_steps}
        for s, w, _ in self.ppl_pulses:
            times.update((s, s + w))
        return sorted(times)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        noise = NoiseSpec(**raw.pop("noise", {}))
        return cls(noise=noise, **raw)


def load_at(profile: LoadProfile, t, seed=None):
    """Disturbance ``[p_cpl, p_ppl]`` (W) at time ``t``.

    ``seed`` overrides the profile's noise seed.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    d = profile.nominal(t)
    nz = profile.noise
    if nz.enabled and nz.sigma > 0:
        k = int(math.floor(t / nz.interval + _EDGE))
        rng = np.random.default_rng([nz.seed if seed is None else seed, k])
        d = np.maximum(d * (1.0 + nz.sigma * rng.standard_normal(2)), 0.0)
    return d


def loads_on_grid(profile: LoadProfile, times, seed=None):
    """:func:`load_at` over an array of times, shape ``(len(times), 2)``."""
    return np.array([load_at(profile, float(t), seed) for t in times])


@dataclass(frozen=True)
class ScenarioConfig:
    profile: LoadProfile
    duration: float
    dt: float = 5e-3
    label: str = "custom"

    def __post_init__(self):
        if self.duration <= 0 or self.dt <= 0:
            raise ValueError("duration and dt must be > 0")

    @property
    def n_steps(self):
        return int(round(self.duration / self.dt))

    def times(self):
        return np.arange(self.n_steps + 1) * self.dt

    def with_seed(self, seed):
        from dataclasses import replace
        if seed is None:
            return self
        return replace(self, profile=replace(self.profile,
                                             noise=replace(self.profile.noise, seed=int(seed))))

    def segments(self):
        """``(start, end)`` intervals between consecutive load events."""
        edges = [0.0] + [t for t in self.profile.events() if 0 < t < self.duration] \
            + [self.duration]
        return list(zip(edges[:-1], edges[1:]))

    def to_dict(self):
        return {"label": self.label, "duration": self.duration, "dt": self.dt,
                "profile": self.profile.to_dict()}

    @classmethod
    def from_dict(cls, raw):
        return cls(profile=LoadProfile.from_dict(raw["profile"]),
                   duration=float(raw["duration"]), dt=float(raw.get("dt", 5e-3)),
                   label=raw.get("label", "custom"))


def load_scenario(path):
    return ScenarioConfig.from_dict(json.loads(Path(path).read_text()))


def save_scenario(cfg: ScenarioConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2))


def case_study_1():
    """10 MW CPL; 3 MW pulse at 2 s for 1 s and 5 MW pulse at 5 s for 2 s."""
    profile = LoadProfile(
        base_cpl=10e6,
        ppl_pulses=((2.0, 1.0, 3e6), (5.0, 2.0, 5e6)),
    )
    return ScenarioConfig(profile=profile, duration=8.0, label="cs1")


def case_study_2(cpl_step=-0.3, magnitudes=(3e6, 5e6, 4e6), durations=(1.0, 2.0, 1.0),
                 sigma=0.02, seed=0):
    """Noisy loads: pulses at 2, 5 and 7 s and a CPL reduction at 8 s.

    The pulse magnitudes, their durations and the depth of the CPL step are
    configuration choices; only the event times and the 1 s / 2 s pulse
    lengths are fixed by the case description.
    """
    starts = (2.0, 5.0, 7.0)
    profile = LoadProfile(
        base_cpl=10e6,
        cpl_steps=((8.0, 10e6 * (1.0 + cpl_step)),),
        ppl_pulses=tuple(zip(starts, durations, magnitudes)),
        noise=NoiseSpec(enabled=sigma > 0, sigma=sigma, seed=seed),
    )
    return ScenarioConfig(profile=profile, duration=10.0, label="cs2")


def get_scenario(name_or_path, seed=None):
    """``"cs1"``, ``"cs2"`` or a path to a scenario JSON file."""
    if name_or_path == "cs1":
        cfg = case_study_1()
    elif name_or_path == "cs2":
        cfg = case_study_2()
    else:
        cfg = load_scenario(name_or_path)
    return cfg.with_seed(seed)
