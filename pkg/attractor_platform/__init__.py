"""Attractor Platform: bounded-control attractor selection for the forced Duffing oscillator."""
from .types import (
    AttractorCatalog,
    AttractorLabel,
    BoaDataset,
    DuffingParams,
    EpisodeConfig,
    EvalReport,
    IntegratorConfig,
    RolloutRecord,
    SimState,
    Transition,
    direction_labels,
)
from .errors import *
from .formatting import direction_label, format_amplitude, format_rate, format_reward, summary_block
from .config import RunConfig, load_config, dump_config
