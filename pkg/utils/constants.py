"""
Constants Module

Default physical constants, environment settings, learning hyperparameters
and output column names used throughout the EBP benchmark.
"""

# Physics (object treated as unit mass / unit inertia; only relative energies matter)
GRAVITY = 9.81
MASS = 1.0
INERTIA = (1.0, 1.0, 1.0)
TIMESTEP = 0.04  # seconds

# Per-environment clip threshold for transition energy
E_TRAN_MAX_PLANAR = 0.5
E_TRAN_MAX_ROTATE = 2.5

# Desk environments
HORIZON = 50
POSITION_TOLERANCE = 0.05  # meters
ORIENTATION_TOLERANCE = 0.1  # radians
WORKSPACE_LOW = (-0.1, -0.1, 0.0)  # gripper reach
WORKSPACE_HIGH = (0.4, 0.4, 0.3)
MAX_GRIPPER_STEP = 0.05  # meters per step
MAX_ANGULAR_RATE = 5.0  # rad/s
GRASP_RADIUS = 0.03
PUSH_RADIUS = 0.04
PUSH_HEIGHT = 0.05
AIR_GOAL_PROBABILITY = 0.5
AIR_GOAL_HEIGHT = (0.05, 0.2)

ENV_NAMES = ["PlanarPush", "PlanarPickPlace", "RotateBlock"]

# Replay strategies
STRATEGY_UNIFORM = "uniform-her"
STRATEGY_PER = "per-her"
STRATEGY_EBP = "ebp-her"
STRATEGIES = [STRATEGY_UNIFORM, STRATEGY_PER, STRATEGY_EBP]

# Replay defaults
HER_RATIO = 0.8
BUFFER_EPISODES = 1000
PER_ALPHA = 0.6
PER_EPSILON = 0.01

# Agent defaults
GAMMA = 0.98
POLYAK_TAU = 0.05
LR_ACTOR = 0.001
LR_CRITIC = 0.003
ACTION_L2 = 0.5  # penalty on squared tanh outputs, summed over action dims
NOISE_SCALE = 0.2
RANDOM_EPS = 0.2
HIDDEN_SIZES = (64, 64)
OPTIMIZERS = ["sgd", "adam"]
NORM_CLIP = 5.0  # normalized inputs are clipped to +-NORM_CLIP
NORM_EPS = 0.01  # std floor of the input normalizers

# Harness defaults
SEEDS = (0, 1, 2, 3, 4)
EPOCHS = 30
EPISODES_PER_EPOCH = 100
OPTIMIZATION_STEPS = 40
BATCH_SIZE = 64
EVAL_EPISODES = 10
WARMUP_EPISODES = 10
SUCCESS_THRESHOLD = 0.8

# Checkpoints
CHECKPOINT_VERSION = "ebp-ddpg-2"

# Output columns
SEED_COLUMNS = [
    "epoch", "success_rate", "cumulative_samples",
    "mean_energy", "max_energy", "pearson_r", "critic_loss", "status",
]
TIMING_COLUMNS = ["seed", "epoch", "wall_clock"]
EPISODE_LOG_COLUMNS = ["episode_index", "trajectory_energy", "success", "return"]
TRACE_COLUMNS = [
    "t", "gripper", "object_position", "object_quaternion",
    "action", "reward", "achieved_goal", "goal",
]
