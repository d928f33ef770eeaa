"""seplab: SIMO / SISO speech separation experiments on a dual-path RNN backbone."""

from seplab.codec import EncoderBasis, LatentFeature, WaveformCodec, decode, encode
from seplab.dprnn import ChunkedFeature, DPRNNBlock, DPRNNStack, merge, segment
from seplab.errors import (
    ConfigError,
    InfeasibleSceneError,
    InvalidInputError,
    InvariantError,
    SeplabError,
    TrainingError,
)
from seplab.models import (
    ModelConfig,
    SeparationModel,
    build_model,
    count_parameters,
    forward_mixed,
    forward_simo_only,
    forward_siso_iterative,
    load_checkpoint,
    save_checkpoint,
)

SAMPLE_RATE = 16000

__version__ = "0.1.0"
