# Desk-scale defaults

SCHEDULE_KIND = "linear"
DIFFUSION_STEPS = 1000
BETA_START = 1e-4
BETA_END = 0.02
SUBSET_COUNT = 100

PREDICTION_MODE = "x0"
XPREV_OFFSET = 100
NOISE_COEFF = "sqrt"

MAX_LEN = 16
D_WORD = 32
D_CLIP = 16
LAYERS = 4
HEADS = 4
FUSION = "concat"

BATCH_SIZE = 8
EPOCHS_MAX = 15
LR_KIND = "linear"
LR_START = 1e-4
LR_END = 5e-5
LAMBDA_KIND = "constant"
LAMBDA_VALUE = 0.3
DYNAMIC_C = 1.0
GRAD_CLIP = 1.0
WEIGHT_DECAY = 0.01
VAL_FRACTION = 0.2

P_UNCOND = 0.2
GUIDANCE_W = 0.3

STAGES = 5

SEED = 0
