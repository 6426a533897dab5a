"""pxby: one token stream for text, sprites, audio, and control actions,
with LSTM sequence models (predictive / autoregressive / diffusion) and
an optimal-control data suite."""

__version__ = "0.1.0"

from .palette import Palette, load_palette, nearest_palette_index, quantize_frames, rgb_to_lab
from .tokenizer import (ACTION_BASE, LINE_BREAK_ID, MODALITY_SWITCH_ID, PAD_ID,
                        PALETTE_BASE, TEXT_BASE, VOCAB_SIZE, Record, Segment,
                        TokenStream, Tokenizer, dequantize_actions,
                        quantize_actions)
from .sequence import (WindowedDataset, build_context_2d, create_sequence_data,
                       record_context_array, reduce_modalities, reduce_stream,
                       window)
from .embed import PxByEmbed
from .model import SeqModel, SeqModelConfig, generate
from .training import Adam, TrainConfig, class_weights, process_epoch, train_model

__all__ = [
    "Adam", "ACTION_BASE", "LINE_BREAK_ID", "MODALITY_SWITCH_ID", "PAD_ID",
    "PALETTE_BASE", "Palette", "PxByEmbed", "Record", "Segment", "SeqModel",
    "SeqModelConfig", "TEXT_BASE", "TokenStream", "Tokenizer", "TrainConfig",
    "VOCAB_SIZE", "WindowedDataset", "build_context_2d", "class_weights",
    "create_sequence_data", "dequantize_actions", "generate", "load_palette",
    "nearest_palette_index", "process_epoch", "quantize_actions",
    "quantize_frames", "record_context_array", "reduce_modalities",
    "reduce_stream", "rgb_to_lab", "train_model", "window",
]
