"""Full model forward pass: parameters, encoders, alignment, and target heads.

Parameter layout is a flat name -> Tensor dict. Joint training uses one
shared tower (empty prefix); non-joint training instantiates two disjoint
towers prefixed ``source.`` and ``target.`` so the two subtask losses touch
separate parameters while the code path stays identical.

Role sharing within a tower follows the alignment contract: the bilinear
block-instruction matrix of the active attention variant is shared between
the source and reference roles, while each role owns its context extractor
(its own convolution bank under ``cnn``, its own word-attention matrix under
``dual``, and a reference-side summary projection under ``last_hidden``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import alignment, autodiff as ad, encoders, target as target_mod
from .autodiff import Tensor
from .config import TrainConfig
from .encoders import EncodedInstruction, Vocabulary
from .world import WorldState, feature_matrix


def tower_prefixes(config: TrainConfig) -> tuple[str, str]:
    """(source tower, target tower) parameter prefixes."""
    if config.joint:
        return "", ""
    return "source.", "target."


def init_params(config: TrainConfig, vocab: Vocabulary, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh parameters: Xavier-uniform matrices, zero biases, +1 forget bias."""
    params: dict[str, Tensor] = {}

    def add(name, shape, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = ad.parameter(rng.uniform(-bound, bound, size=shape), name=name)

    def add_bias(name, size, values=None):
        params[name] = ad.parameter(values if values is not None else np.zeros(size), name=name)

    src_prefix, tgt_prefix = tower_prefixes(config)
    h, wd, bd, fd = config.hidden_dim, config.word_dim, config.block_dim, config.feature_dim()

    for prefix in dict.fromkeys((src_prefix, tgt_prefix)):
        add(prefix + "word_emb", (vocab.size, wd), vocab.size, wd)
        add(prefix + "lstm_wx", (wd, 4 * h), wd, 4 * h)
        add(prefix + "lstm_wh", (h, 4 * h), h, 4 * h)
        lstm_b = np.zeros(4 * h)
        lstm_b[h:2 * h] = 1.0  # forget gate opens at init
        add_bias(prefix + "lstm_b", 4 * h, lstm_b)
        add(prefix + "block_w", (fd, bd), fd, bd)
        add_bias(prefix + "block_b", bd)

        serves_source = prefix == src_prefix
        serves_target = prefix == tgt_prefix

        if config.attention == "last_hidden":
            add(prefix + "score_bilinear", (bd, h), bd, h)
            if serves_target:
                add(prefix + "ref_summary_proj", (h, h), h, h)
        elif config.attention == "cnn":
            add(prefix + "score_bilinear", (bd, config.summary_dim), bd, config.summary_dim)
            roles = (["src"] if serves_source else []) + (["ref"] if serves_target else [])
            for role in roles:
                for k in config.cnn_widths:
                    add(f"{prefix}{role}_conv_w{k}", (k, h, config.cnn_filters),
                        k * h, config.cnn_filters)
                    add_bias(f"{prefix}{role}_conv_b{k}", config.cnn_filters)
        else:  # dual
            add(prefix + "context_bilinear", (bd, h), bd, h)
            if serves_source:
                add(prefix + "src_word_attn", (bd, h), bd, h)
            if serves_target:
                add(prefix + "ref_word_attn", (bd, h), bd, h)

        if serves_target:
            add(prefix + "offset_w1", (config.summary_dim, config.offset_hidden),
                config.summary_dim, config.offset_hidden)
            add_bias(prefix + "offset_b1", config.offset_hidden)
            add(prefix + "offset_w2", (config.offset_hidden, 3), config.offset_hidden, 3)
            add_bias(prefix + "offset_b2", 3)
    return params


@dataclass
class ModelOutputs:
    """Everything one forward pass produces for one example."""

    source_dist: Tensor  # (n,) probabilities over blocks
    ref_dist: Tensor  # (n,) probabilities over blocks
    offset_center: Tensor  # (3,)
    summary: np.ndarray  # detached target-side instruction summary
    positions: np.ndarray  # (n, 3) block positions the distributions refer to


def _score_role(
    role: str,
    prefix: str,
    blocks: Tensor,
    enc: EncodedInstruction,
    params: dict[str, Tensor],
    config: TrainConfig,
) -> tuple[Tensor, Tensor | None]:
    """Per-block scores for one role; returns (scores, summary used)."""
    if config.attention == "last_hidden":
        proj = params[prefix + "ref_summary_proj"] if role == "ref" else None
        scores = alignment.attend_last_hidden(blocks, enc, params[prefix + "score_bilinear"], proj)
        return scores, None
    if config.attention == "cnn":
        summary = alignment.encode_cnn(
            enc,
            [params[f"{prefix}{role}_conv_w{k}"] for k in config.cnn_widths],
            [params[f"{prefix}{role}_conv_b{k}"] for k in config.cnn_widths],
        )
        scores = alignment.attend_summary(blocks, summary, params[prefix + "score_bilinear"])
        return scores, summary
    scores = alignment.attend_dual(blocks, enc, params[f"{prefix}{role}_word_attn"],
                                   params[prefix + "context_bilinear"])
    return scores, None


def forward(
    params: dict[str, Tensor],
    config: TrainConfig,
    token_ids: np.ndarray,
    world: WorldState,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> ModelOutputs:
    """Run the full model on one example.

    In train mode dropout is live and ``rng`` is required; in eval mode the
    pass is deterministic.
    """
    if train and config.dropout > 0.0 and rng is None:
        raise ValueError("train-mode forward needs an rng for dropout")
    src_prefix, tgt_prefix = tower_prefixes(config)
    feats = feature_matrix(world, config.features)

    def encode(prefix):
        enc = encoders.encode_instruction(token_ids, params, prefix,
                                          dropout=config.dropout, train=train, rng=rng)
        blocks = encoders.embed_blocks(feats, params, prefix)
        return enc, blocks

    enc_src, blocks_src = encode(src_prefix)
    if tgt_prefix == src_prefix:
        enc_tgt, blocks_tgt = enc_src, blocks_src
    else:
        enc_tgt, blocks_tgt = encode(tgt_prefix)

    src_scores, _ = _score_role("src", src_prefix, blocks_src, enc_src, params, config)
    ref_scores, ref_summary = _score_role("ref", tgt_prefix, blocks_tgt, enc_tgt, params, config)

    summary = ref_summary if ref_summary is not None else enc_tgt.last_hidden
    center = target_mod.offset_mean(summary, params, tgt_prefix)

    return ModelOutputs(
        source_dist=alignment.block_distribution(src_scores),
        ref_dist=alignment.block_distribution(ref_scores),
        offset_center=center,
        summary=summary.values.copy(),
        positions=world.blocks.copy(),
    )
