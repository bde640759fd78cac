"""Multi-state GVP network: encoder, conformer pooling, causal decoder, training."""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import GVP, GVPLayerNorm, MessageLayer
from .model import (DecoderGraph, IncrementalDecoder, ModelConfig, MultiStateGVP, PooledEmbedding,
                    SampledSequence, decode_logits, decoder_graph, encode, incremental_log_probs,
                    pool_conformations, recovery_and_perplexity, run_encoder, sample_sequences,
                    score_sequences, sequence_log_probs)
from .train import batch_loss, fit, make_optimizer, train_step


def gvp_forward(w: GVP, s, v):
    return w(s, v)
