"""Constants for cbnlab"""

# Normalization
NORM_EPS = 1e-5
MOMENTUM = 0.9
INIT_STD = 0.02

# Finite differences run in float64 only
GRAD_CHECK_EPS = 1e-5
GRAD_CHECK_TOLERANCE = 1e-4
GRAD_CHECK_FLOOR = 1e-3
GRAD_CHECK_TRIALS = 100

# Consistency-within-diversity thresholds on per-channel feature means
CONSISTENCY_THRESHOLD = 1e-4
DIVERSITY_THRESHOLD = 1e-2

# Identity demos reject batches whose channel std falls below this
MIN_IDENTITY_STD = 1e-3

# Desk-scale defaults (full scale: width 64, extent 128)
DESK_EXTENT = 32
DESK_WIDTH = 16
DESK_DOMAINS = 4
DESK_STYLE_DIM = 8
DESK_TRAIN_SAMPLES = 2048
DESK_TEST_SAMPLES = 256
FULL_WIDTH = 64
FULL_EXTENT = 128
RESIDUAL_BLOCKS = 6

# Training defaults
ADAM_LR = 2e-4
ADAM_BETA1 = 0.5
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BATCH_SIZE = 16
TRAIN_STEPS = 2000

# Metrics
SURROGATE_WIDTHS = (8, 16, 32, 64, 64)
SURROGATE_SEED = 42
DIVERSITY_PAIRS = 500
PROBE_VARIANCE = 0.96
KMEANS_MAX_ITER = 300

# Synthetic rendering
HUE_SATURATION = 0.6
BRIGHTNESS_SCALE = 0.2
BACKGROUND_LEVEL = -0.8

# CLI exit codes
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_MISSING_ARTIFACT = 3
