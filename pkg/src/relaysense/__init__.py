"""Spectrum-sensing detectors for amplify-and-forward relay networks."""

from .errors import (
    ConfigurationError,
    DegenerateModelError,
    DivergenceError,
    DomainError,
    RelaySenseError,
    SaddleError,
    ScenarioError,
    SeriesInstabilityError,
)
from .signal_model import (
    ChannelEstimates,
    FrameObservation,
    Hypothesis,
    SystemConfig,
    bayes_gamma,
    calibrate_noise,
    load_config,
    receive_snr_db,
    sample_frame,
    sample_frames,
)

__version__ = "0.1.0"
