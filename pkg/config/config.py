import os

from dotenv import load_dotenv

# Environment variables
load_dotenv()

SEED_ENV = "DIFFCAP_SEED"  # overrides training.seed
LOG_LEVEL = os.getenv("DIFFCAP_LOG_LEVEL", "INFO")
DEVICE = os.getenv("DIFFCAP_DEVICE", "cpu")

# Feature file
FEATURE_MAGIC = b"CDLF"
FEATURE_HEADER_SIZE = 12

# Special tokens, in vocab file order
PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"
SPECIAL_TOKENS = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN]

# Output layout under --out
CHECKPOINTS_DIR = "checkpoints"
METRICS_FILE = "metrics.csv"
MANIFEST_FILE = "manifest.json"
RESUME_MANIFEST_FILE = "manifest.resume-{epoch:04d}.json"
CAPTIONS_FILE = "captions.jsonl"
REPORT_FILE = "report.json"
SENTENCES_FILE = "sentences.csv"
SCHEDULE_FILE = "schedule.csv"

# Checkpoint layout
PARAMS_BLOB = "params.bin"
PARAMS_MANIFEST = "params.json"
TRAINER_STATE = "trainer.pt"
VOCAB_FILE = "vocab.txt"

# Toy corpus layout
TOY_TRAIN_FILE = "train.jsonl"
TOY_VAL_FILE = "val.jsonl"
TOY_FEATURES_FILE = "features.cdlf"

# Toy corpus slot values
TOY_COLORS = ["red", "blue", "green", "black", "white", "brown", "yellow", "grey"]
TOY_ANIMALS = ["dog", "cat", "horse", "bird", "cow", "sheep", "goat", "fox"]
TOY_VERBS = ["runs", "jumps", "sleeps", "sits", "swims", "eats"]
TOY_TEMPLATES = [
    "a {color} {animal} {verb}",
    "the {color} {animal} {verb}",
    "a {color} {animal} {verb} outside",
    "one {color} {animal} {verb}",
    "a {color} {animal} {verb} on the grass",
]

# Metrics CSV columns
METRICS_COLUMNS = [
    "epoch", "lr", "lambda",
    "train_l_simple_prime", "train_l_r",
    "val_l_simple_prime", "val_l_r",
    "val_bleu4",
]
