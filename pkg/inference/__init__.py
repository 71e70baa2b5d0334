from inference.bleu import BleuResult, bleu4, corpus_bleu
from inference.generator import CaptionGenerator, GenConfig, stage_timesteps
from inference.evaluation import EvalReport, evaluate_records
