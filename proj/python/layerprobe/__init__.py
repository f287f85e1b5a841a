from ._layerprobe import (
    EERResult,
    EncoderModel,
    LayerprobeError,
    compute_eer,
    decode_wav,
    read_container,
    softmax_normalize,
    synth_utterance,
    write_container,
    write_toy_encoder,
)

__all__ = [
    "EERResult",
    "EncoderModel",
    "LayerprobeError",
    "compute_eer",
    "decode_wav",
    "read_container",
    "softmax_normalize",
    "synth_utterance",
    "write_container",
    "write_toy_encoder",
]
