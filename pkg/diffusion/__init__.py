from diffusion.schedule import NoiseSchedule, build_schedule, make_step_subset, schedule_from_config
from diffusion.core import (
    LatentSeq,
    LossBreakdown,
    posterior_mean,
    predict_x0_from_xprev,
    rounding_loss,
    sample_forward,
    simple_prime_loss,
    total_loss,
)
