from denoiser.model import CondFeatures, Denoiser, build_denoiser, project_condition, timestep_embedding
from denoiser.checkpoint import load_checkpoint, load_params, load_trainer_state, save_checkpoint, save_params
