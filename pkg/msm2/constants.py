"""
Named defaults and the seven-state hospital model.

Everything that is a fixed number or label set lives here so the services
and the CLI share one source. Change a default here and every command
picks it up.
"""

# Markov test defaults: half-day grid on [1, 11], 5000 wild bootstrap resamples
DEFAULT_GRID_T0 = 1.0
DEFAULT_GRID_T_MAX = 11.0
DEFAULT_GRID_STEP = 0.5
DEFAULT_BOOTSTRAP_RESAMPLES = 5000

# Pairs with fewer at-risk subject-days are flagged "thin" (still estimated)
DEFAULT_MIN_AT_RISK = 10

# Tolerances
ROW_SUM_TOL = 1e-12
DIST_SUM_TOL = 1e-12

# Table-1-style percentages are shown with two decimals
PERCENT_DECIMALS = 2

# Last admissible day; day-indexed count arrays are sized by it
MAX_DAY = 10_000

# Trajectory CSV layout
TRAJECTORY_COLUMNS = ("subject_id", "day", "state")
LABELS_COLUMNS = ("index", "label")

# Seven-state hospital model: 1-indexed states, 14 transitions between
# distinct states plus the daily self-loop of every transient state.
DIVINE_LABELS = ("NSP", "SP", "Recov", "NIMV", "IMV", "Disch", "Death")
DIVINE_TRANSITIONS = (
    (1, 2),  # 1  NSP -> SP
    (1, 6),  # 2  NSP -> Disch
    (1, 7),  # 3  NSP -> Death
    (2, 3),  # 4  SP -> Recov
    (2, 4),  # 5  SP -> NIMV
    (2, 5),  # 6  SP -> IMV
    (2, 7),  # 7  SP -> Death
    (3, 6),  # 8  Recov -> Disch
    (3, 7),  # 9  Recov -> Death
    (4, 3),  # 10 NIMV -> Recov
    (4, 5),  # 11 NIMV -> IMV
    (4, 7),  # 12 NIMV -> Death
    (5, 3),  # 13 IMV -> Recov
    (5, 7),  # 14 IMV -> Death
)
DIVINE_ABSORBING = (6, 7)

# Per-transition Markov test windows; everything else uses the default grid
DIVINE_GRIDS = {
    (2, 7): (1.0, 7.0, 0.5),
    (4, 7): (1.0, 7.0, 0.5),
    (5, 7): (1.0, 16.0, 0.5),
}

# Generator identity recorded in cohort metadata
RNG_NAME = "numpy.random.Philox"
RNG_SCHEME = "SeedSequence(seed, spawn_key=(stream,))"
