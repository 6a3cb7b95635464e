"""
Trajectory Energy Module

Computes potential, kinetic and rotational energies of the achieved-goal
object state, the clipped transition energy between consecutive states,
and the trajectory energy of a whole episode.

All arithmetic is float64. Only relative energies matter for prioritization,
so mass and inertia default to one.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Sequence, Union

import numpy as np

from utils.constants import GRAVITY, INERTIA, MASS, TIMESTEP, E_TRAN_MAX_PLANAR
from utils.errors import InvalidStateError, InvalidTrajectoryError


class EulerAngles(NamedTuple):
    """Roll, pitch and yaw in radians."""

    roll: float
    pitch: float
    yaw: float


@dataclass(frozen=True)
class ObjectState:
    """
    Achieved-goal state of the manipulated object at one timestep.

    Attributes:
        position (np.ndarray): (x, y, z) in meters
        orientation (np.ndarray): unit quaternion (a, b, c, d), scalar first;
            normalized on construction
    """

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        position = np.asarray(self.position, dtype=np.float64).reshape(-1)
        orientation = np.asarray(self.orientation, dtype=np.float64).reshape(-1)

        if position.shape != (3,) or orientation.shape != (4,):
            raise InvalidStateError(
                f"Expected 3 position and 4 quaternion components, got "
                f"{position.shape} and {orientation.shape}"
            )
        if not (np.all(np.isfinite(position)) and np.all(np.isfinite(orientation))):
            raise InvalidStateError(f"Non-finite object state: {position}, {orientation}")

        norm = np.linalg.norm(orientation)
        if norm == 0.0:
            raise InvalidStateError("Quaternion has zero norm")

        object.__setattr__(self, "position", position)
        object.__setattr__(self, "orientation", orientation / norm)

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "ObjectState":
        """Build from a 7-vector [x, y, z, a, b, c, d]."""
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vector.shape != (7,):
            raise InvalidStateError(f"State vector must have 7 components, got {vector.shape}")
        return cls(vector[:3], vector[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])


@dataclass(frozen=True)
class EnergyParams:
    """Physical constants and the transition-energy clip threshold."""

    mass: float = MASS
    gravity: float = GRAVITY
    inertia_x: float = INERTIA[0]
    inertia_y: float = INERTIA[1]
    inertia_z: float = INERTIA[2]
    dt: float = TIMESTEP
    e_tran_max: float = E_TRAN_MAX_PLANAR

    def __post_init__(self):
        for name in ("mass", "gravity", "inertia_x", "inertia_y", "inertia_z", "dt", "e_tran_max"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"EnergyParams.{name} must be strictly positive, got {value}")


def quat_to_euler(q: Sequence[float]) -> EulerAngles:
    """
    Convert a scalar-first quaternion to roll/pitch/yaw.

    The quaternion is renormalized internally. The pitch argument is clamped
    to [-1, 1] so numerical overshoot at the gimbal boundary gives +/- pi/2
    instead of NaN. At exact gimbal lock roll and yaw are not unique; the
    atan2 branches are returned as computed.

    Args:
        q: quaternion (a, b, c, d)

    Returns:
        EulerAngles: roll in [-pi, pi], pitch in [-pi/2, pi/2], yaw in [-pi, pi]

    Raises:
        InvalidStateError: If q is non-finite or has zero norm
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape != (4,) or not np.all(np.isfinite(q)):
        raise InvalidStateError(f"Invalid quaternion: {q}")
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise InvalidStateError("Quaternion has zero norm")
    a, b, c, d = (float(v) for v in q / norm)

    roll = math.atan2(2.0 * (a * b + c * d), 1.0 - 2.0 * (b * b + c * c))
    sin_pitch = min(1.0, max(-1.0, 2.0 * (a * c - d * b)))
    pitch = math.asin(sin_pitch)
    yaw = math.atan2(2.0 * (a * d + b * c), 1.0 - 2.0 * (c * c + d * d))

    return EulerAngles(roll, pitch, yaw)


def wrap_angle(angle: float) -> float:
    """Wrap an angle difference into [-pi, pi)."""
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def geodesic_angle(q1: Sequence[float], q2: Sequence[float]) -> Union[float, np.ndarray]:
    """
    Rotation angle (radians, in [0, pi]) between unit quaternions.

    Works on single quaternions or on batches along the last axis; q and -q
    describe the same rotation.
    """
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    q1 = q1 / np.linalg.norm(q1, axis=-1, keepdims=True)
    q2 = q2 / np.linalg.norm(q2, axis=-1, keepdims=True)
    dot = np.clip(np.abs(np.sum(q1 * q2, axis=-1)), 0.0, 1.0)
    angle = 2.0 * np.arccos(dot)
    return float(angle) if np.ndim(angle) == 0 else angle


def potential_energy(s: ObjectState, p: EnergyParams) -> float:
    """E_p = m g z. Sign follows z."""
    return p.mass * p.gravity * float(s.position[2])


def kinetic_energy(prev: ObjectState, cur: ObjectState, p: EnergyParams) -> float:
    """Translational energy from the finite-difference velocity between two states."""
    delta = cur.position - prev.position
    return p.mass * float(np.dot(delta, delta)) / (2.0 * p.dt * p.dt)


def rotational_energy(prev: ObjectState, cur: ObjectState, p: EnergyParams) -> float:
    """
    Rotational energy from Euler-angle finite differences.

    Per-axis differences are wrapped into [-pi, pi] before dividing by dt,
    otherwise a roll from just below pi to just above -pi would look like
    an almost full turn.
    """
    before = quat_to_euler(prev.orientation)
    after = quat_to_euler(cur.orientation)

    d_roll = wrap_angle(after.roll - before.roll)
    d_pitch = wrap_angle(after.pitch - before.pitch)
    d_yaw = wrap_angle(after.yaw - before.yaw)

    weighted = p.inertia_x * d_roll ** 2 + p.inertia_y * d_pitch ** 2 + p.inertia_z * d_yaw ** 2
    return weighted / (2.0 * p.dt * p.dt)


def total_energy(prev: ObjectState, cur: ObjectState, p: EnergyParams) -> float:
    """Potential at `cur` plus kinetic and rotational energy of the prev -> cur step."""
    return potential_energy(cur, p) + kinetic_energy(prev, cur, p) + rotational_energy(prev, cur, p)


def transition_energy(prev_total: float, cur_total: float, e_tran_max: float) -> float:
    """Energy increase between two totals, clipped to [0, e_tran_max]."""
    if e_tran_max <= 0:
        raise ValueError(f"e_tran_max must be positive, got {e_tran_max}")
    return float(min(max(cur_total - prev_total, 0.0), e_tran_max))


def total_energies(states: Sequence[ObjectState], p: EnergyParams,
                   previous: Optional[ObjectState] = None) -> np.ndarray:
    """
    Total energy of every state in a trajectory.

    Without `previous` the first state has no velocity estimate and is taken
    to be at rest, so its total is the potential term alone. Passing the
    state before the first one gives it its finite-difference velocities.
    """
    if len(states) == 0:
        return np.zeros(0)
    totals = np.empty(len(states), dtype=np.float64)
    if previous is None:
        totals[0] = potential_energy(states[0], p)
    else:
        totals[0] = total_energy(previous, states[0], p)
    for t in range(1, len(states)):
        totals[t] = total_energy(states[t - 1], states[t], p)
    return totals


def transition_energies(totals: Sequence[float], e_tran_max: float) -> np.ndarray:
    """Vector form of the clipped transition energy over consecutive totals."""
    if e_tran_max <= 0:
        raise ValueError(f"e_tran_max must be positive, got {e_tran_max}")
    totals = np.asarray(totals, dtype=np.float64)
    return np.clip(np.diff(totals), 0.0, e_tran_max)


def trajectory_energy_from_totals(totals: Sequence[float], e_tran_max: float) -> float:
    """Sum of clipped transition energies for precomputed per-state totals."""
    if len(totals) < 2:
        raise InvalidTrajectoryError(f"Need at least 2 states, got {len(totals)}")
    return float(transition_energies(totals, e_tran_max).sum())


def trajectory_energy(states: Sequence[ObjectState], p: EnergyParams,
                      previous: Optional[ObjectState] = None) -> float:
    """
    Trajectory energy: the summed transition energy from t = 1 to T.

    A segment cut out of a longer trajectory starts "at rest" unless the
    state preceding it is passed as `previous`; only then do segment
    energies add up to the energy of the whole when the cut state moves.

    Args:
        states: achieved-goal states s_0 .. s_T
        p (EnergyParams): constants and clip threshold
        previous (ObjectState): optional state before s_0

    Returns:
        float: non-negative energy, at most T * e_tran_max

    Raises:
        InvalidTrajectoryError: If fewer than two states are given
    """
    if len(states) < 2:
        raise InvalidTrajectoryError(f"Need at least 2 states, got {len(states)}")
    return trajectory_energy_from_totals(total_energies(states, p, previous), p.e_tran_max)


def energy_breakdown(states: Sequence[ObjectState], p: EnergyParams) -> Dict[str, float]:
    """
    Split a trajectory's energy into per-component positive increments.

    Component sums are unclipped diagnostics; `trajectory` is the clipped
    total used for prioritization.
    """
    if len(states) < 2:
        raise InvalidTrajectoryError(f"Need at least 2 states, got {len(states)}")

    potential = np.array([potential_energy(s, p) for s in states])
    kinetic = np.zeros(len(states))
    rotational = np.zeros(len(states))
    for t in range(1, len(states)):
        kinetic[t] = kinetic_energy(states[t - 1], states[t], p)
        rotational[t] = rotational_energy(states[t - 1], states[t], p)

    totals = potential + kinetic + rotational
    return {
        "potential": float(np.clip(np.diff(potential), 0.0, None).sum()),
        "kinetic": float(np.clip(np.diff(kinetic), 0.0, None).sum()),
        "rotational": float(np.clip(np.diff(rotational), 0.0, None).sum()),
        "trajectory": trajectory_energy_from_totals(totals, p.e_tran_max),
    }
