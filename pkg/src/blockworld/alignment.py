"""Instruction-block alignment scoring and the source-selection loss.

Three interchangeable attention modules score every block against the
instruction; all share the input/output contract (block embeddings + encoded
instruction in, one real score per block out) and are selected by the config
key ``attention``:

* ``last_hidden`` - bilinear score against the final LSTM state.
* ``cnn`` - bilinear score against a multi-width convolution summary of the
  hidden-state sequence (max-pooled per filter, widths concatenated).
* ``dual`` - per-block word attention builds a block-conditioned context
  vector, then a second bilinear form scores block against its own context.

Softmax over the per-block scores gives the selection distribution; the
source loss is cross-entropy against the one-hot ground-truth block.
"""

from __future__ import annotations

import warnings

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import EncodedInstruction

ATTENTION_VARIANTS = ("last_hidden", "cnn", "dual")

PROB_FLOOR = 1e-12


class ProbabilityUnderflow(UserWarning):
    """Raised as a warning when a selection probability is clamped at the floor."""


def attend_last_hidden(blocks: Tensor, enc: EncodedInstruction, bilinear: Tensor,
                       summary_proj: Tensor | None = None) -> Tensor:
    """Bilinear scores against the last hidden state, one per block.

    ``summary_proj``, when given, first maps the summary vector through a
    square matrix; the reference role uses this as its independent context
    parameter while sharing ``bilinear``.
    """
    summary = enc.last_hidden
    if summary_proj is not None:
        summary = summary_proj @ summary
    return blocks @ (bilinear @ summary)


def encode_cnn(enc: EncodedInstruction, conv_weights: list[Tensor], conv_biases: list[Tensor]) -> Tensor:
    """Convolution summary of the hidden-state sequence.

    Each filter bank is convolved over the sequence with zero same-padding,
    max-pooled over positions, and the pooled vectors are concatenated in
    bank order.
    """
    pooled = [
        ad.maxpool_cols(ad.conv1d_same(enc.hidden_states, w, b))
        for w, b in zip(conv_weights, conv_biases)
    ]
    return pooled[0] if len(pooled) == 1 else ad.concat(pooled)


def attend_summary(blocks: Tensor, summary: Tensor, bilinear: Tensor) -> Tensor:
    """Bilinear scores of every block against one instruction summary vector."""
    return blocks @ (bilinear @ summary)


def attend_dual(blocks: Tensor, enc: EncodedInstruction, word_bilinear: Tensor,
                context_bilinear: Tensor) -> Tensor:
    """Two-stage attention: word-to-block weights, then block-to-context scores.

    For block i, word t: softmax over t of (block_i . word_bilinear . h_t)
    weights the hidden states into a context vector z_i; the final score is
    block_i . context_bilinear . z_i.
    """
    word_scores = (blocks @ word_bilinear) @ ad.transpose(enc.hidden_states)  # (n, m)
    weights = ad.softmax(word_scores, axis=1)
    contexts = weights @ enc.hidden_states  # (n, hidden)
    return ad.sum_axis(ad.apply("mul", blocks @ context_bilinear, contexts), axis=1)


def block_distribution(scores: Tensor) -> Tensor:
    """Softmax over blocks; invariant to adding a constant to all scores."""
    if scores.values.ndim != 1 or scores.values.size < 1:
        raise ValueError("scores must be a nonempty vector")
    return ad.softmax(scores, axis=-1)


def source_loss(dist: Tensor, truth: int) -> Tensor:
    """Cross-entropy against a one-hot ground truth: -log dist[truth].

    Probabilities are clamped at 1e-12 (with a warning) so a confidently
    wrong model yields a large finite loss instead of an infinity.
    """
    n = dist.values.shape[0]
    if not 0 <= truth < n:
        raise IndexError(f"truth index {truth} out of range [0, {n})")
    p = ad.take(dist, truth)
    if float(p.values) < PROB_FLOOR:
        warnings.warn(
            f"selection probability {float(p.values):.3e} clamped at {PROB_FLOOR}",
            ProbabilityUnderflow,
        )
    return -ad.log(ad.clamp_min(p, PROB_FLOOR))
