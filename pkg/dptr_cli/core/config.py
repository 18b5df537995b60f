import os
from pathlib import Path

# Usually your project root is where pyproject.toml is
PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent
DATA_DIR = Path(os.environ.get("DPTR_DATA_DIR", PROJECT_ROOT / "data"))
RESULTS_DIR = DATA_DIR / "results"  # Default destination for run outputs
LOG_FILE_NAME = "dptr_session.log"

# Make sure DATA_DIR exists
DATA_DIR.mkdir(parents=True, exist_ok=True)

# Numerical floors and tolerances shared by the estimators and pooling rules.
VARIANCE_FLOOR = 1e-12
RIDGE_JITTER = 1e-10
LAMBDA_RIDGE = 1e-8
BETA_MAX_FACTOR = 1e6  # BETA_MAX = BETA_MAX_FACTOR * n

# Sigmoid brute-force oracle.
SIGMOID_ORACLE_DRAWS = 100_000
SIGMOID_MAX_K = 20

# Baseline synthetic setting (normal-normal, non-overlapping, no covariates).
DEFAULT_K = 100
DEFAULT_N = 10
DEFAULT_TAU0 = 1.0
DEFAULT_SIGMA0 = 3.0
DEFAULT_SIGMA = 3.0
DEFAULT_ALPHA = 0.05
DEFAULT_REPLICATIONS = 1000
DEFAULT_MASTER_SEED = 20240101

# Nuisance network training.
DEFAULT_HIDDEN_WIDTH = 10
DEFAULT_LEARNING_RATE = 0.01
DEFAULT_EPOCHS = 200
DEFAULT_INIT_SCALE = 0.1
DEFAULT_FOLDS = 2

# Float rendering for CSV outputs (round-trip exact for doubles).
FLOAT_FORMAT = "%.17g"
