"""
Desk Environments Module

Small kinematic multi-goal manipulation tasks with sparse {-1, 0} rewards,
exposed through the gymnasium goal-env interface (dict observations with
`observation`, `achieved_goal` and `desired_goal`). Work done on the object
(pushing, lifting, spinning) raises its energy, so trajectory energy is
meaningful without a rigid-body simulator.

    PlanarPush       object slides on the floor when pushed, floor goals
    PlanarPickPlace  grasp, lift and place, half of the goals in the air
    RotateBlock      object spun by angular-rate commands, quaternion goals
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import gymnasium
import numpy as np
from gymnasium import spaces
from scipy.spatial.transform import Rotation

from backend.energy import ObjectState, geodesic_angle
from utils.constants import (
    AIR_GOAL_HEIGHT, AIR_GOAL_PROBABILITY, E_TRAN_MAX_PLANAR, E_TRAN_MAX_ROTATE,
    GRASP_RADIUS, GRAVITY, HORIZON, MAX_ANGULAR_RATE, MAX_GRIPPER_STEP,
    ORIENTATION_TOLERANCE, POSITION_TOLERANCE, PUSH_HEIGHT, PUSH_RADIUS,
    TIMESTEP, WORKSPACE_HIGH, WORKSPACE_LOW,
)
from utils.errors import ShapeError
from utils.helpers import export_to_jsonl

logger = logging.getLogger(__name__)

OBS_DIM = 17
OBJECT_LOW = np.array([0.05, 0.05])
OBJECT_HIGH = np.array([0.25, 0.25])
PUSH_MARGIN = 0.05  # pushed objects may leave the spawn square by this much
GRIPPER_HOME = np.array([0.15, 0.15, 0.1])
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])

GoalObs = Dict[str, np.ndarray]


@dataclass(frozen=True)
class DeskTask:
    """Static description of a desk task; bounds live in the env's spaces."""

    name: str
    action_dim: int
    goal_dim: int
    goal_kind: str  # "position" or "orientation"
    tolerance: float
    e_tran_max: float
    obs_dim: int = OBS_DIM
    horizon: int = HORIZON

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError(f"Goal tolerance must be positive, got {self.tolerance}")
        if self.horizon < 2:
            raise ValueError(f"Horizon must be at least 2, got {self.horizon}")
        if self.goal_kind not in ("position", "orientation"):
            raise ValueError(f"Unknown goal kind '{self.goal_kind}'")


@dataclass
class EnvState:
    """Mutable simulator state."""

    gripper: np.ndarray
    obj: ObjectState
    obj_velocity: np.ndarray
    grasped: bool
    goal: np.ndarray


def to_scipy(q: np.ndarray) -> Rotation:
    """Scalar-first (a, b, c, d) -> scipy Rotation (scalar-last internally)."""
    return Rotation.from_quat([q[1], q[2], q[3], q[0]])


def from_scipy(rotation: Rotation) -> np.ndarray:
    """scipy Rotation -> scalar-first quaternion with a non-negative scalar part."""
    x, y, z, w = rotation.as_quat()
    q = np.array([w, x, y, z])
    return -q if q[0] < 0 else q


def yaw_quaternion(yaw: float) -> np.ndarray:
    return np.array([np.cos(yaw / 2.0), 0.0, 0.0, np.sin(yaw / 2.0)])


def _toward(current: np.ndarray, target: np.ndarray, max_step: float, limit: float = 1.0) -> np.ndarray:
    """Normalized command moving `current` straight toward `target`, no component above `limit`."""
    command = (target - current) / max_step
    peak = np.max(np.abs(command))
    return command * (limit / peak) if peak > limit else command


def _box(low, high) -> spaces.Box:
    return spaces.Box(np.asarray(low, dtype=np.float64), np.asarray(high, dtype=np.float64), dtype=np.float64)


class DeskEnv(gymnasium.Env):
    """
    Shared reset/step/reward logic. Subclasses set `task` and the goal
    boxes, and implement the object dynamics, goal sampling and an oracle
    controller.

    The constructor seed is applied on the first `reset()` that does not
    pass its own seed; later resets continue the same generator.
    """

    metadata = {"render_modes": []}

    task: DeskTask
    goal_low: Tuple[float, ...]
    goal_high: Tuple[float, ...]
    achieved_low: Tuple[float, ...]
    achieved_high: Tuple[float, ...]

    def __init__(self, seed: Optional[int] = None, dt: float = TIMESTEP):
        super().__init__()
        if not dt > 0:
            raise ValueError(f"Timestep must be positive, got {dt}")
        self.dt = float(dt)
        self.action_space = spaces.Box(-1.0, 1.0, shape=(self.task.action_dim,), dtype=np.float64)
        self.observation_space = spaces.Dict({
            "observation": spaces.Box(-np.inf, np.inf, shape=(self.task.obs_dim,), dtype=np.float64),
            "achieved_goal": _box(self.achieved_low, self.achieved_high),
            "desired_goal": _box(self.goal_low, self.goal_high),
        })
        self._pending_seed = seed
        self.state: Optional[EnvState] = None
        self.t = 0
        self.trace: List[Dict] = []

    @property
    def goal_space(self) -> spaces.Box:
        return self.observation_space["desired_goal"]

    # -- goal space -------------------------------------------------------

    def achieved_goal(self) -> np.ndarray:
        if self.task.goal_kind == "orientation":
            return self.state.obj.orientation.copy()
        return self.state.obj.position.copy()

    def object_state(self) -> ObjectState:
        return self.state.obj

    def goal_distance(self, achieved: np.ndarray, desired: np.ndarray) -> Union[float, np.ndarray]:
        """Euclidean distance for positions, geodesic angle for orientations."""
        achieved = np.asarray(achieved, dtype=np.float64)
        desired = np.asarray(desired, dtype=np.float64)
        if achieved.shape[-1] != self.task.goal_dim or desired.shape[-1] != self.task.goal_dim:
            raise ShapeError(
                f"Goal dimension {self.task.goal_dim} expected, got {achieved.shape} and {desired.shape}"
            )
        if self.task.goal_kind == "orientation":
            return geodesic_angle(achieved, desired)
        return np.linalg.norm(achieved - desired, axis=-1)

    def compute_reward(self, achieved_goal: np.ndarray, desired_goal: np.ndarray,
                       info: Optional[Dict[str, Any]] = None) -> Union[float, np.ndarray]:
        """
        Sparse reward: 0 within tolerance of the desired goal, else -1.

        Works on single goals or on batches along the last axis.
        """
        distance = self.goal_distance(achieved_goal, desired_goal)
        reward = np.where(distance <= self.task.tolerance, 0.0, -1.0)
        return float(reward) if np.ndim(reward) == 0 else reward

    # -- episode loop -----------------------------------------------------

    def _observation(self) -> GoalObs:
        s = self.state
        vector = np.concatenate([
            s.gripper,
            s.obj.position,
            s.obj.orientation,
            s.obj_velocity,
            s.obj.position - s.gripper,
            [1.0 if s.grasped else 0.0],
        ])
        return {
            "observation": vector,
            "achieved_goal": self.achieved_goal(),
            "desired_goal": s.goal.copy(),
        }

    def reset(self, *, seed: Optional[int] = None,
              options: Optional[Dict[str, Any]] = None) -> Tuple[GoalObs, Dict[str, Any]]:
        """
        Place the object and sample a goal from the desired-goal space.

        A goal already satisfied by the initial state is resampled, so no
        episode succeeds at step zero. `options={"goal": g}` fixes the goal
        instead (used by scripted scenarios).

        Raises:
            ValueError: If a fixed goal lies outside the desired-goal space
        """
        if seed is None and self._pending_seed is not None:
            seed = self._pending_seed
        self._pending_seed = None
        super().reset(seed=seed)

        self.t = 0
        self.state = self._initial_state(self.np_random)
        goal = (options or {}).get("goal")
        if goal is not None:
            goal = np.asarray(goal, dtype=np.float64).copy()
            if not self.goal_space.contains(goal):
                raise ValueError(f"Goal {goal.tolist()} is outside the {self.task.name} goal space")
            self.state.goal = goal
        else:
            while True:
                candidate = self._sample_goal(self.np_random)
                if self.compute_reward(self.achieved_goal(), candidate) < 0:
                    break
            self.state.goal = candidate
        self.trace = [self._trace_record(None, None)]
        return self._observation(), {}

    def step(self, action: np.ndarray) -> Tuple[GoalObs, float, bool, bool, Dict[str, Any]]:
        """
        Apply one action for dt seconds.

        Out-of-bounds actions are clipped to the action space, not rejected.
        Episodes never terminate early; they are truncated at the horizon.

        Returns:
            Tuple: observation, reward, terminated, truncated, info
        """
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != self.action_space.shape:
            raise ShapeError(f"Action must have {self.task.action_dim} components, got {action.shape}")
        clipped = np.clip(action, self.action_space.low, self.action_space.high)
        if not np.array_equal(clipped, action):
            logger.debug(f"Clipped out-of-bounds action {action} at t={self.t}")

        self._apply_action(clipped)
        self.t += 1

        observation = self._observation()
        reward = self.compute_reward(observation["achieved_goal"], self.state.goal)
        truncated = self.t >= self.task.horizon
        self.trace.append(self._trace_record(clipped, reward))
        return observation, reward, False, truncated, {"is_success": reward == 0.0}

    def _trace_record(self, action: Optional[np.ndarray], reward: Optional[float]) -> Dict:
        s = self.state
        return {
            "t": self.t,
            "gripper": s.gripper.tolist(),
            "object_position": s.obj.position.tolist(),
            "object_quaternion": s.obj.orientation.tolist(),
            "action": None if action is None else action.tolist(),
            "reward": reward,
            "achieved_goal": self.achieved_goal().tolist(),
            "goal": s.goal.tolist(),
        }

    def export_trace(self, path: Union[str, Path], episode: Optional[int] = None) -> Path:
        """Write the current episode's per-timestep trace as JSON-lines."""
        records = self.trace
        if episode is not None:
            records = [{"episode": episode, **r} for r in records]
        return export_to_jsonl(records, path)

    def _move_gripper(self, command: np.ndarray) -> None:
        moved = self.state.gripper + command * MAX_GRIPPER_STEP
        self.state.gripper = np.clip(moved, WORKSPACE_LOW, WORKSPACE_HIGH)

    def _floor_object(self, rng: np.random.Generator, orientation: np.ndarray = IDENTITY_QUAT) -> EnvState:
        xy = rng.uniform(OBJECT_LOW, OBJECT_HIGH)
        return EnvState(
            gripper=GRIPPER_HOME.copy(),
            obj=ObjectState(np.array([xy[0], xy[1], 0.0]), orientation),
            obj_velocity=np.zeros(3),
            grasped=False,
            goal=np.zeros(self.task.goal_dim),
        )

    # -- subclass hooks ---------------------------------------------------

    def _initial_state(self, rng: np.random.Generator) -> EnvState:
        return self._floor_object(rng)

    def _sample_goal(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _apply_action(self, action: np.ndarray) -> None:
        raise NotImplementedError

    def oracle_action(self) -> np.ndarray:
        raise NotImplementedError


class PlanarPush(DeskEnv):
    """Gripper pushes the object across the floor; energy is kinetic only."""

    task = DeskTask(
        name="PlanarPush", action_dim=4, goal_dim=3, goal_kind="position",
        tolerance=POSITION_TOLERANCE, e_tran_max=E_TRAN_MAX_PLANAR,
    )
    goal_low = (OBJECT_LOW[0], OBJECT_LOW[1], 0.0)
    goal_high = (OBJECT_HIGH[0], OBJECT_HIGH[1], 0.0)
    achieved_low = (OBJECT_LOW[0] - PUSH_MARGIN, OBJECT_LOW[1] - PUSH_MARGIN, 0.0)
    achieved_high = (OBJECT_HIGH[0] + PUSH_MARGIN, OBJECT_HIGH[1] + PUSH_MARGIN, 0.0)

    def _sample_goal(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.goal_space.low, self.goal_space.high)

    def _apply_action(self, action: np.ndarray) -> None:
        s = self.state
        previous = s.obj.position
        self._move_gripper(action[:3])

        position = previous.copy()
        offset = previous[:2] - s.gripper[:2]
        distance = np.linalg.norm(offset)
        if s.gripper[2] < PUSH_HEIGHT and distance < PUSH_RADIUS:
            if distance > 1e-9:
                direction = offset / distance
            else:
                motion = action[:2]
                norm = np.linalg.norm(motion)
                direction = motion / norm if norm > 1e-9 else np.array([1.0, 0.0])
            position[:2] = np.clip(s.gripper[:2] + PUSH_RADIUS * direction,
                                   OBJECT_LOW - PUSH_MARGIN, OBJECT_HIGH + PUSH_MARGIN)

        s.obj_velocity = (position - previous) / self.dt
        s.obj = ObjectState(position, s.obj.orientation)

    def oracle_action(self) -> np.ndarray:
        """Go behind the object (seen from the goal), descend, push straight."""
        s = self.state
        gripper, position, goal = s.gripper, s.obj.position, s.goal
        to_goal = goal[:2] - position[:2]
        remaining = np.linalg.norm(to_goal)
        if remaining < 1e-6:
            return np.array([0.0, 0.0, 0.0, -1.0])

        direction = to_goal / remaining
        behind = position[:2] - direction * (PUSH_RADIUS + 0.015)
        relative = position[:2] - gripper[:2]
        along = float(relative @ direction)
        across = np.linalg.norm(relative - along * direction)
        low, cruise = 0.4 * PUSH_HEIGHT, PUSH_HEIGHT + 0.03

        if gripper[2] < PUSH_HEIGHT and along > 0 and across < 0.01 and along < PUSH_RADIUS + 0.03:
            # slower than the push radius per step so the gripper never passes the object
            target = np.append(goal[:2] - direction * PUSH_RADIUS, low)
            return np.append(_toward(gripper, target, MAX_GRIPPER_STEP, limit=0.5), -1.0)

        if np.linalg.norm(gripper[:2] - behind) > 0.01:
            if gripper[2] < cruise - 0.01 and np.linalg.norm(gripper[:2] - behind) > 0.02:
                target = np.append(gripper[:2], cruise)
            else:
                target = np.append(behind, cruise)
        else:
            target = np.append(behind, low)
        return np.append(_toward(gripper, target, MAX_GRIPPER_STEP), -1.0)


class PlanarPickPlace(DeskEnv):
    """Grasp, lift and place; released objects fall under gravity onto the floor."""

    task = DeskTask(
        name="PlanarPickPlace", action_dim=4, goal_dim=3, goal_kind="position",
        tolerance=POSITION_TOLERANCE, e_tran_max=E_TRAN_MAX_PLANAR,
    )
    goal_low = (OBJECT_LOW[0], OBJECT_LOW[1], 0.0)
    goal_high = (OBJECT_HIGH[0], OBJECT_HIGH[1], AIR_GOAL_HEIGHT[1])
    # a released object can rise above the gripper reach
    achieved_low = WORKSPACE_LOW
    achieved_high = (WORKSPACE_HIGH[0], WORKSPACE_HIGH[1], np.inf)

    def _sample_goal(self, rng: np.random.Generator) -> np.ndarray:
        xy = rng.uniform(self.goal_space.low[:2], self.goal_space.high[:2])
        z = rng.uniform(*AIR_GOAL_HEIGHT) if rng.random() < AIR_GOAL_PROBABILITY else 0.0
        return np.array([xy[0], xy[1], z])

    def _apply_action(self, action: np.ndarray) -> None:
        s = self.state
        previous = s.obj.position
        wants_grip = action[3] > 0
        if not wants_grip:
            s.grasped = False
        elif not s.grasped and np.linalg.norm(s.gripper - previous) <= GRASP_RADIUS:
            s.grasped = True

        self._move_gripper(action[:3])

        if s.grasped:
            position = s.gripper.copy()
            position[2] = max(position[2], 0.0)
            s.obj_velocity = (position - previous) / self.dt
        else:
            position = previous.copy()
            vz = s.obj_velocity[2]
            if position[2] > 0.0 or vz > 0.0:
                vz -= GRAVITY * self.dt
                position[2] += vz * self.dt
                if position[2] <= 0.0:
                    position[2], vz = 0.0, 0.0
            else:
                vz = 0.0
            s.obj_velocity = np.array([0.0, 0.0, vz])

        s.obj = ObjectState(position, s.obj.orientation)

    def oracle_action(self) -> np.ndarray:
        """Reach, grasp, carry to the goal and hold."""
        s = self.state
        gripper, position = s.gripper, s.obj.position
        if s.grasped:
            return np.append(_toward(gripper, s.goal, MAX_GRIPPER_STEP), 1.0)
        if np.linalg.norm(gripper - position) <= GRASP_RADIUS:
            # grasp engages before this step's motion
            return np.append(_toward(gripper, s.goal, MAX_GRIPPER_STEP), 1.0)
        if np.linalg.norm(gripper[:2] - position[:2]) > 0.01:
            above = np.array([position[0], position[1], position[2] + 0.05])
            return np.append(_toward(gripper, above, MAX_GRIPPER_STEP), -1.0)
        return np.append(_toward(gripper, position, MAX_GRIPPER_STEP), -1.0)


class RotateBlock(DeskEnv):
    """Block spun in place by angular-rate commands; goals are yaw rotations."""

    task = DeskTask(
        name="RotateBlock", action_dim=3, goal_dim=4, goal_kind="orientation",
        tolerance=ORIENTATION_TOLERANCE, e_tran_max=E_TRAN_MAX_ROTATE,
    )
    goal_low = achieved_low = (-1.0, -1.0, -1.0, -1.0)
    goal_high = achieved_high = (1.0, 1.0, 1.0, 1.0)

    def _initial_state(self, rng: np.random.Generator) -> EnvState:
        yaw = rng.uniform(-np.pi, np.pi)
        state = EnvState(
            gripper=np.array([0.15, 0.15, 0.0]),
            obj=ObjectState(np.array([0.15, 0.15, 0.0]), yaw_quaternion(yaw)),
            obj_velocity=np.zeros(3),
            grasped=False,
            goal=np.zeros(self.task.goal_dim),
        )
        return state

    def _sample_goal(self, rng: np.random.Generator) -> np.ndarray:
        return yaw_quaternion(rng.uniform(-np.pi, np.pi))

    def _apply_action(self, action: np.ndarray) -> None:
        s = self.state
        rotvec = action * MAX_ANGULAR_RATE * self.dt
        rotated = Rotation.from_rotvec(rotvec) * to_scipy(s.obj.orientation)
        s.obj = ObjectState(s.obj.position, from_scipy(rotated))

    def oracle_action(self) -> np.ndarray:
        """Rotate about the error axis at the maximum rate until aligned."""
        error = to_scipy(self.state.goal) * to_scipy(self.state.obj.orientation).inv()
        return _toward(np.zeros(3), error.as_rotvec(), MAX_ANGULAR_RATE * self.dt)


ENVIRONMENTS = {
    "PlanarPush": PlanarPush,
    "PlanarPickPlace": PlanarPickPlace,
    "RotateBlock": RotateBlock,
}


def make_env(name: str, seed: Optional[int] = 0, dt: float = TIMESTEP) -> DeskEnv:
    if name not in ENVIRONMENTS:
        raise ValueError(f"Unknown environment '{name}', expected one of {sorted(ENVIRONMENTS)}")
    return ENVIRONMENTS[name](seed, dt)


def oracle_policy(env: DeskEnv, observation: np.ndarray, goal: np.ndarray) -> np.ndarray:
    return env.oracle_action()


class ScenarioPolicy:
    """
    Scripted PlanarPickPlace behaviours for the three work scenarios:

        untouched  the gripper rises away, the object never moves
        dropped    the object is grasped, lifted 0.1 m and released
        delivered  the object is carried to the (raised) goal and held
    """

    SCENARIOS = ("untouched", "dropped", "delivered")

    def __init__(self, scenario: str, drop_height: float = 0.1):
        if scenario not in self.SCENARIOS:
            raise ValueError(f"Unknown scenario '{scenario}'")
        self.scenario = scenario
        self.drop_height = drop_height
        self.released = False

    def reset(self) -> None:
        self.released = False

    def __call__(self, env: DeskEnv, observation: np.ndarray, goal: np.ndarray) -> np.ndarray:
        if self.scenario == "untouched":
            return np.array([0.0, 0.0, 1.0, -1.0])
        if self.scenario == "delivered":
            return env.oracle_action()

        s = env.state
        if self.released:
            return np.array([0.0, 0.0, 1.0, -1.0])
        if s.grasped and s.gripper[2] >= self.drop_height - 1e-9:
            self.released = True
            return np.array([0.0, 0.0, 1.0, -1.0])
        if s.grasped or np.linalg.norm(s.gripper - s.obj.position) <= GRASP_RADIUS:
            lift = np.array([s.gripper[0], s.gripper[1], self.drop_height])
            return np.append(_toward(s.gripper, lift, MAX_GRIPPER_STEP), 1.0)
        return env.oracle_action()
