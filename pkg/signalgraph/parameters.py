"""Simulation, model and experiment parameters for SignalGraph.

This module defines the constants shared across the package: network
generation bounds, demand process, vehicle dynamics, signal constraints,
sensing thresholds, feature scaling, model sizes and training defaults.
All quantities are SI (meters, seconds, meters per second).
"""


# ============================================================================
# NETWORK GENERATION
# ============================================================================

# Number of signalized intersections in a generated network
MIN_INTERSECTIONS = 2
MAX_INTERSECTIONS = 6

# Edge geometry
MIN_EDGE_LENGTH = 100.0  # meters
MAX_EDGE_LENGTH = 200.0  # meters

# Lanes per directed edge (the validator accepts 1-4, generation uses 1-2
# per direction so a two-way road carries at most 4 lanes)
MIN_LANES_PER_EDGE = 1
MAX_LANES_PER_EDGE = 4
DEFAULT_MAX_GENERATED_LANES = 2

# Probability of linking two adjacent intersections beyond the spanning tree
EXTRA_LINK_PROBABILITY = 0.5

# Probability that an intersection with a free side gets a fringe approach
FRINGE_APPROACH_PROBABILITY = 0.7

# Grid spacing used for drawing generated networks
GRID_SPACING = 150.0  # meters

# Speed limits drawn per edge
LANE_SPEED_LIMITS = (8.33, 11.11, 13.89)  # m/s (30, 40, 50 km/h)


# ============================================================================
# TRAFFIC DEMAND
# ============================================================================

# Origin/destination weights are re-drawn at every block boundary
OD_RESAMPLE_PERIOD = 120  # seconds
OD_DIRICHLET_ALPHA = 1.0

# Regimes (expected trips per second); light is half of default on desk-scale networks
REGIME_RATES = {
    "light": 0.5,
    "default": 1.0,
    "heavy": 2.0,
}

# Demand generation window during evaluation
EVALUATION_HORIZON = 3600  # seconds


# ============================================================================
# VEHICLE DYNAMICS
# ============================================================================

STEP_LENGTH = 1.0  # seconds
VEHICLE_LENGTH = 5.0  # meters
MIN_GAP = 2.5  # meters
ACCELERATION = 2.6  # m/s^2
DECELERATION = 4.5  # m/s^2

# Vehicle max speeds are drawn uniformly in this range
MIN_VEHICLE_MAX_SPEED = 11.11  # m/s (40 km/h)
MAX_VEHICLE_MAX_SPEED = 16.67  # m/s (60 km/h)

# A trip enters its origin lane only when this stretch is clear
INSERTION_CLEARANCE = 10.0  # meters

# Non-priority movements yield to priority foes closer than this
YIELD_TIME_WINDOW = 3.0  # seconds


# ============================================================================
# SIGNAL CONSTRAINTS
# ============================================================================

YELLOW_DURATION = 5  # seconds
MIN_TIME_BETWEEN_SWITCHES = 5  # seconds
DEFAULT_GREEN_DURATION = 30  # seconds, used by the fixed-time baseline

# Turn classification thresholds (degrees of heading change)
STRAIGHT_TOLERANCE_DEG = 30.0
OPPOSITE_APPROACH_DEG = 135.0


# ============================================================================
# SENSING
# ============================================================================

STOPPED_SPEED_THRESHOLD = 0.1 / 3.6  # m/s (0.1 km/h = 0.02778 m/s)
QUEUE_DETECTION_RANGE = 50.0  # meters upstream of the stop line


# ============================================================================
# FEATURE SCALING
# ============================================================================

LENGTH_SCALE = 200.0  # meters
SPEED_SCALE = 15.0  # m/s
COUNT_SCALE = 10.0  # vehicles
TIME_SINCE_SWITCH_SCALE = 60.0  # seconds
SWITCHES_TO_OPEN_SCALE = 8.0  # switches


# ============================================================================
# MODEL
# ============================================================================

HIDDEN_WIDTH = 32
LANE_MODE_LAYERS = 2
VEHICLE_MODE_LAYERS = 3
NOISY_SIGMA_INIT = 0.017
N_ACTIONS = 2

# Per-intersection MLP baseline
MARL_HIDDEN_LAYERS = (256, 128, 64)

CHECKPOINT_FORMAT_VERSION = 1


# ============================================================================
# TRAINING
# ============================================================================

GAMMA = 0.99
LEARNING_RATE = 0.001
BATCH_SIZE = 16
REPLAY_CAPACITY = 200_000
WARMUP_TRANSITIONS = 2_000
EPISODE_LENGTH = 500  # steps
N_SIMULATIONS = 30
TARGET_UPDATE_EVERY = 100  # parameter updates
GRADIENT_CLIP_NORM = 10.0

# Adam moments
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# Epsilon-greedy exploration (alternative to noisy networks)
EPSILON_START = 1.0
EPSILON_END = 0.05
EPSILON_DECAY_STEPS = 20_000

# Rolling window for the mean episode reward in training logs
REWARD_WINDOW_EPISODES = 30


# ============================================================================
# EVALUATION
# ============================================================================

# Completion-wait cap as a multiple of the demand horizon
COMPLETION_CAP_FACTOR = 3
EVALUATION_SEEDS = 10
ROBUSTNESS_REPEATS = 5
SIGNIFICANCE_LEVEL = 0.05
HISTOGRAM_BINS = 40


def regime_rate(regime: str) -> float:
    """Get the expected insertion rate for a traffic regime.

    Args:
        regime: "light", "default" or "heavy"

    Returns:
        Expected trips per second
    """
    try:
        return REGIME_RATES[regime.lower()]
    except KeyError as exc:
        raise ValueError(
            f"unknown regime {regime!r}; expected one of {sorted(REGIME_RATES)}"
        ) from exc


def completion_cap(horizon: int) -> int:
    """Hard cap on simulated time when waiting for all trips to finish."""
    return COMPLETION_CAP_FACTOR * horizon
