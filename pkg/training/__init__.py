from training.schedules import lambda_at, lr_at
from training.trainer import FitResult, Trainer
