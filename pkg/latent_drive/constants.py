# constants.py
"""
Constants used throughout the package.
"""
# Binary container magics and versions
CHECKPOINT_MAGIC = b"HWCK"
CHECKPOINT_VERSION = 1
EPISODE_MAGIC = b"HWEP"
EPISODE_VERSION = 1

# Checkpoint sections, in file order
CHECKPOINT_SECTIONS = [
    "encoder_student",
    "encoder_teacher",
    "predictor",
    "rssm",
    "actor",
    "critic",
]

# Observation geometry
IMAGE_SIZE = 64
IMAGE_CHANNELS = 3

# BEV colour map (RGB)
BEV_COLORS = {
    "background": (0, 0, 0),
    "road": (96, 96, 96),
    "lane_marking": (255, 255, 255),
    "ego": (0, 200, 0),
    "traffic": (0, 80, 255),
}

# Discrete meta-actions, in action-id order
META_ACTIONS = ["LANE_LEFT", "IDLE", "LANE_RIGHT", "FASTER", "SLOWER"]

# Loss series emitted by the plot command, grouped by the log they come from
WORLD_MODEL_SERIES = ["cont_loss", "dyn_loss", "kl", "model_loss", "rep_loss", "reward_loss"]
ENCODER_SERIES = ["loss_align", "loss_var", "loss_cov", "loss_total"]

# Log file names inside a run directory
LOG_FILES = {
    "encoder": "encoder_log.csv",
    "world_model": "world_model_log.csv",
    "agent": "agent_log.csv",
}

# Series file stem, e.g. train_dyn_loss_VS_step
SERIES_STEM = "train_{name}_VS_step"
