"""STT-MRAM read-channel simulation and trained min-sum decoding laboratory."""

__version__ = "0.1.0"

from .channel import (
    ChannelParams,
    DegenerateChannelError,
    ReadBlock,
    ScrambleMask,
    analytic_llr,
    optimal_threshold,
    sample_block,
    scramble,
    sign_adjust,
)
from .code import (
    CodeDefinition,
    TannerGraph,
    build_hamming_71_64,
    build_tanner,
    encode,
    hdd_decode,
)
from .decoder import DecodeResult, DecoderWeights, decode, decode_batch, reference_rbms
from .evaluation import BerPoint, ScenarioConfig, ber_confidence, run_scenario
from .sigm import DetectorModel, QuantizerSpec, build_quantizer, quantize
from .trainer import TrainConfig, TrainReport, train

__all__ = [
    "ChannelParams",
    "DegenerateChannelError",
    "ReadBlock",
    "ScrambleMask",
    "analytic_llr",
    "optimal_threshold",
    "sample_block",
    "scramble",
    "sign_adjust",
    "CodeDefinition",
    "TannerGraph",
    "build_hamming_71_64",
    "build_tanner",
    "encode",
    "hdd_decode",
    "DecodeResult",
    "DecoderWeights",
    "decode",
    "decode_batch",
    "reference_rbms",
    "BerPoint",
    "ScenarioConfig",
    "ber_confidence",
    "run_scenario",
    "DetectorModel",
    "QuantizerSpec",
    "build_quantizer",
    "quantize",
    "TrainConfig",
    "TrainReport",
    "train",
]
