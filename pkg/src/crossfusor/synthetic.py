"""Synthetic three-vehicle platoons driven by the Intelligent Driver Model.

Desk-scale stand-in for NGSIM: a scripted leader speed profile, two IDM
followers, integrated at 10 Hz in feet and feet per second.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .platoon import FRAME_RATE_HZ, PLATOON_FRAMES, Platoon

logger = logging.getLogger(__name__)

SCENARIOS = ("steady", "brake", "oscillate")


class CollisionError(RuntimeError):
    pass


@dataclass(frozen=True)
class IDMParams:
    desired_speed: float = 65.0   # v0, ft/s
    time_headway: float = 1.5     # T, s
    max_accel: float = 3.0        # a, ft/s^2
    comfort_decel: float = 5.0    # b, ft/s^2
    min_gap: float = 6.5          # s0, ft
    delta: float = 4.0
    length: float = 15.0          # vehicle length, ft

    def equilibrium_gap(self, v: float) -> float:
        """Bumper-to-bumper gap at which acceleration vanishes for speed v."""
        r = 1.0 - (v / self.desired_speed) ** self.delta
        if r <= 0:
            raise ValueError(f"speed {v} ft/s has no equilibrium below desired speed {self.desired_speed}")
        return (self.min_gap + v * self.time_headway) / np.sqrt(r)


def idm_accel(v, dv, gap, p: IDMParams):
    """IDM acceleration for speed v, approach rate dv = v - v_lead, bumper gap."""
    s_star = p.min_gap + max(0.0, v * p.time_headway + v * dv / (2.0 * np.sqrt(p.max_accel * p.comfort_decel)))
    return p.max_accel * (1.0 - (v / p.desired_speed) ** p.delta - (s_star / gap) ** 2)


def leader_profile(scenario: str, n_frames: int, v_init: float, rng: np.random.Generator,
                   dt: float = 1.0 / FRAME_RATE_HZ) -> np.ndarray:
    """Leader acceleration per frame, ft/s^2."""
    t = np.arange(n_frames) * dt
    acc = np.zeros(n_frames)
    if scenario == "steady":
        return acc
    if scenario == "brake":
        t0 = rng.uniform(2.0, 12.0)
        decel = rng.uniform(4.0, 10.0)
        dur = rng.uniform(1.5, 4.0)
        hold = rng.uniform(1.0, 4.0)
        recover = rng.uniform(1.0, 3.0)
        acc[(t >= t0) & (t < t0 + dur)] = -decel
        acc[(t >= t0 + dur + hold) & (t < t0 + dur + hold + recover * 2)] = recover
        return acc
    if scenario == "oscillate":
        period = rng.uniform(6.0, 15.0)
        amp = rng.uniform(0.2, 0.45) * v_init
        phase = rng.uniform(0, 2 * np.pi)
        # derivative of v_init + amp*sin(w t + phase)
        w = 2 * np.pi / period
        return amp * w * np.cos(w * t + phase)
    raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")


def simulate_platoon(leader_acc: np.ndarray, v_init: float, gaps_init, params, dt: float = 1.0 / FRAME_RATE_HZ):
    """Integrate leader + 2 IDM followers with a ballistic update.

    ``gaps_init`` are bumper gaps (study, follower); ``params`` holds the
    study and follower IDMParams. Returns positions, speeds of shape (3, T).
    """
    n = len(leader_acc)
    x = np.zeros((3, n))
    v = np.zeros((3, n))
    lengths = [params[0].length, params[1].length]
    x[0, 0] = 0.0
    x[1, 0] = x[0, 0] - lengths[0] - gaps_init[0]
    x[2, 0] = x[1, 0] - lengths[1] - gaps_init[1]
    v[:, 0] = v_init
    for i in range(n - 1):
        acc = np.empty(3)
        acc[0] = leader_acc[i]
        for j in (1, 2):
            gap = x[j - 1, i] - x[j, i] - params[j - 1].length
            if gap <= 0:
                raise CollisionError(f"vehicle {j} collided at frame {i}")
            acc[j] = idm_accel(v[j, i], v[j, i] - v[j - 1, i], gap, params[j - 1])
        v_next = v[:, i] + acc * dt
        # vehicles never reverse: stop within the step when speed would go negative
        stop = v_next < 0
        step = np.where(stop, -0.5 * v[:, i] ** 2 / np.where(acc == 0, -1.0, acc),
                        v[:, i] * dt + 0.5 * acc * dt ** 2)
        x[:, i + 1] = x[:, i] + step
        v[:, i + 1] = np.maximum(v_next, 0.0)
    for j in (1, 2):
        if np.any(x[j - 1] - x[j] - params[j - 1].length <= 0):
            raise CollisionError(f"vehicle {j} collided")
    return x, v


def generate_synthetic(n_platoons: int, seed: int = 0, scenario: str = "steady",
                       n_frames: int = PLATOON_FRAMES, base_params: IDMParams | None = None,
                       heterogeneous: bool = True, max_attempts: int = 10) -> list[Platoon]:
    """Generate ``n_platoons`` IDM platoons; a pure function of its arguments.

    Steady platoons start at the IDM equilibrium of a constant-speed leader
    and so stay at constant speed. Other scenarios jitter the initial
    spacing; a collision triggers a retry with fresh jitter.
    """
    if n_platoons < 1:
        raise ValueError("n_platoons must be >= 1")
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    base = base_params or IDMParams()
    root = np.random.SeedSequence([seed, SCENARIOS.index(scenario)])
    platoons = []
    for i, child in enumerate(root.spawn(n_platoons)):
        rng = np.random.default_rng(child)
        params = []
        for _ in range(2):
            if heterogeneous:
                params.append(replace(
                    base,
                    time_headway=base.time_headway * rng.uniform(0.7, 1.3),
                    max_accel=base.max_accel * rng.uniform(0.8, 1.2),
                    comfort_decel=base.comfort_decel * rng.uniform(0.8, 1.2),
                ))
            else:
                params.append(base)
        v_init = rng.uniform(0.3, 0.7) * base.desired_speed
        acc = leader_profile(scenario, n_frames, v_init, rng)
        eq = np.array([params[0].equilibrium_gap(v_init), params[1].equilibrium_gap(v_init)])
        for attempt in range(max_attempts):
            gaps = eq if scenario == "steady" and attempt == 0 else eq * rng.uniform(0.8, 1.25, size=2)
            try:
                x, v = simulate_platoon(acc, v_init, gaps, params)
                break
            except CollisionError as exc:
                logger.debug("platoon %d attempt %d: %s", i, attempt, exc)
        else:
            raise CollisionError(f"platoon {i}: collision in all {max_attempts} attempts")
        # place the platoon somewhere along a long road section
        x = x + rng.uniform(100.0, 1500.0)
        ids = (3 * i + 1, 3 * i + 2, 3 * i + 3)
        platoons.append(Platoon(x, v, platoon_id=i, vehicle_ids=ids, start_frame=0, lane_id=1))
    return platoons


def generate_mixed(n_platoons: int, seed: int = 0, scenarios=SCENARIOS, **kwargs) -> list[Platoon]:
    """Round-robin mixture of scenarios with globally unique platoon ids."""
    counts = [n_platoons // len(scenarios) + (k < n_platoons % len(scenarios)) for k in range(len(scenarios))]
    out = []
    for scen, n in zip(scenarios, counts):
        if n == 0:
            continue
        for p in generate_synthetic(n, seed=seed, scenario=scen, **kwargs):
            k = len(out)
            out.append(Platoon(p.positions, p.speeds, platoon_id=k,
                               vehicle_ids=(3 * k + 1, 3 * k + 2, 3 * k + 3), start_frame=0, lane_id=1))
    return out
