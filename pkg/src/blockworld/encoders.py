"""Instruction and block encoders.

The instruction is tokenized, embedded, and run through a single-layer
unidirectional LSTM (zero initial state, no peepholes, forget-gate bias
initialized to +1 by the trainer). Dropout is applied to the embedded tokens
and to the hidden-state sequence, i.e. before and after the LSTM layer, in
train mode only. Block feature rows are embedded through one fully-connected
sigmoid layer.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PAD_ID = 0
UNK_ID = 1

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


def split_words(text: str) -> list[str]:
    """Lowercase word tokens; punctuation acts as a boundary and is dropped."""
    if not text or not text.strip():
        raise ValueError("empty instruction")
    words = _TOKEN_RE.findall(text.lower())
    if not words:
        raise ValueError(f"instruction has no word tokens: {text!r}")
    return words


@dataclass
class Vocabulary:
    """Dense token ids with reserved PAD=0 and UNK=1."""

    token_to_id: dict[str, int] = field(default_factory=lambda: {"<pad>": PAD_ID, "<unk>": UNK_ID})

    def __post_init__(self):
        if self.token_to_id.get("<pad>") != PAD_ID or self.token_to_id.get("<unk>") != UNK_ID:
            raise ValueError("vocabulary must reserve <pad>=0 and <unk>=1")
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(ids))):
            raise ValueError("vocabulary ids must be dense in [0, size)")

    @classmethod
    def build(cls, texts, min_freq: int = 1) -> "Vocabulary":
        counts: dict[str, int] = {}
        for text in texts:
            for tok in split_words(text):
                counts[tok] = counts.get(tok, 0) + 1
        mapping = {"<pad>": PAD_ID, "<unk>": UNK_ID}
        for tok in sorted(counts):
            if counts[tok] >= min_freq:
                mapping[tok] = len(mapping)
        return cls(mapping)

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def encode(self, words) -> np.ndarray:
        return np.array([self.token_to_id.get(w, UNK_ID) for w in words], dtype=np.intp)

    def to_json(self) -> str:
        return json.dumps(self.token_to_id, sort_keys=True)

    @classmethod
    def from_json(cls, blob: str) -> "Vocabulary":
        return cls(json.loads(blob))


def tokenize(text: str, vocab: Vocabulary) -> np.ndarray:
    """Token id sequence for an instruction; out-of-vocabulary words map to UNK."""
    return vocab.encode(split_words(text))


@dataclass
class EncodedInstruction:
    """Per-word LSTM hidden states and the final state summary."""

    hidden_states: Tensor  # (m, hidden_dim)
    last_hidden: Tensor  # (hidden_dim,)

    @property
    def length(self) -> int:
        return self.hidden_states.values.shape[0]


def lstm_step(
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    w_input: Tensor,
    w_hidden: Tensor,
    bias: Tensor,
) -> tuple[Tensor, Tensor]:
    """One LSTM cell update built from primitives; gate order is i, f, g, o.

    The production encoder uses the fused ``lstm_seq`` kernel below; this
    unfused form is kept as its independently checkable reference.
    """
    hidden = h_prev.values.shape[0]
    gates = ad.apply("add", ad.apply("add", x @ w_input, h_prev @ w_hidden), bias)
    i_gate = ad.sigmoid(ad.slice1d(gates, 0, hidden))
    f_gate = ad.sigmoid(ad.slice1d(gates, hidden, 2 * hidden))
    g_cell = ad.tanh(ad.slice1d(gates, 2 * hidden, 3 * hidden))
    o_gate = ad.sigmoid(ad.slice1d(gates, 3 * hidden, 4 * hidden))
    c_new = ad.apply("add", ad.apply("mul", f_gate, c_prev), ad.apply("mul", i_gate, g_cell))
    h_new = ad.apply("mul", o_gate, ad.tanh(c_new))
    return h_new, c_new


def _stable_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def _fwd_lstm_seq(x_seq, w_input, w_hidden, bias):
    # Whole recurrence as one tape node: zero initial state, gates i, f, g, o.
    if x_seq.ndim != 2 or w_input.ndim != 2 or w_hidden.ndim != 2 or bias.ndim != 1:
        raise ad.AutodiffError("lstm_seq: expected (m,wd), (wd,4h), (h,4h), (4h,)")
    m = x_seq.shape[0]
    hidden = w_hidden.shape[0]
    if w_input.shape[1] != 4 * hidden or bias.shape[0] != 4 * hidden:
        raise ad.AutodiffError("lstm_seq: gate dimension mismatch")
    pre = x_seq @ w_input + bias
    states = np.empty((m, hidden))
    cells = np.empty((m, hidden))
    gates_i = np.empty((m, hidden))
    gates_f = np.empty((m, hidden))
    gates_g = np.empty((m, hidden))
    gates_o = np.empty((m, hidden))
    tanh_c = np.empty((m, hidden))
    h_prev = np.zeros(hidden)
    c_prev = np.zeros(hidden)
    for t in range(m):
        z = pre[t] + h_prev @ w_hidden
        i = _stable_sigmoid(z[:hidden])
        f = _stable_sigmoid(z[hidden:2 * hidden])
        g = np.tanh(z[2 * hidden:3 * hidden])
        o = _stable_sigmoid(z[3 * hidden:])
        c_prev = f * c_prev + i * g
        tc = np.tanh(c_prev)
        h_prev = o * tc
        states[t], cells[t] = h_prev, c_prev
        gates_i[t], gates_f[t], gates_g[t], gates_o[t], tanh_c[t] = i, f, g, o, tc
    ctx = (x_seq, w_input, w_hidden, states, cells,
           gates_i, gates_f, gates_g, gates_o, tanh_c)
    return states, ctx


def _bwd_lstm_seq(grad_states, ctx):
    x_seq, w_input, w_hidden, states, cells, gi, gf, gg, go, tanh_c = ctx
    m, hidden = states.shape
    d_pre = np.empty((m, 4 * hidden))
    dh_next = np.zeros(hidden)
    dc_next = np.zeros(hidden)
    for t in range(m - 1, -1, -1):
        dh = grad_states[t] + dh_next
        dc = dh * go[t] * (1.0 - tanh_c[t] ** 2) + dc_next
        c_prev = cells[t - 1] if t > 0 else 0.0
        d_pre[t, :hidden] = dc * gg[t] * gi[t] * (1.0 - gi[t])
        d_pre[t, hidden:2 * hidden] = dc * c_prev * gf[t] * (1.0 - gf[t])
        d_pre[t, 2 * hidden:3 * hidden] = dc * gi[t] * (1.0 - gg[t] ** 2)
        d_pre[t, 3 * hidden:] = dh * tanh_c[t] * go[t] * (1.0 - go[t])
        dh_next = d_pre[t] @ w_hidden.T
        dc_next = dc * gf[t]
    dx = d_pre @ w_input.T
    dw_input = x_seq.T @ d_pre
    dw_hidden = states[:-1].T @ d_pre[1:] if m > 1 else np.zeros_like(w_hidden)
    return dx, dw_input, dw_hidden, d_pre.sum(axis=0)


ad.register_op("lstm_seq", _fwd_lstm_seq, _bwd_lstm_seq)


def lstm_seq(x_seq: Tensor, w_input: Tensor, w_hidden: Tensor, bias: Tensor) -> Tensor:
    """All LSTM hidden states for an embedded token sequence, one tape node."""
    return ad.apply("lstm_seq", x_seq, w_input, w_hidden, bias)


def encode_instruction(
    token_ids: np.ndarray,
    params: dict[str, Tensor],
    prefix: str = "",
    *,
    dropout: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> EncodedInstruction:
    """Run the LSTM over a token id sequence.

    Dropout (train mode) multiplies the embedded tokens before the recurrence
    and the stacked hidden states after it, with inverted scaling.
    """
    token_ids = np.asarray(token_ids, dtype=np.intp)
    if token_ids.size == 0:
        raise ValueError("token sequence is empty")
    emb = params[prefix + "word_emb"]
    if int(token_ids.max()) >= emb.values.shape[0]:
        raise IndexError(f"token id {int(token_ids.max())} outside vocabulary of {emb.values.shape[0]}")

    x_seq = ad.gather_rows(emb, token_ids)
    if train and dropout > 0.0:
        x_seq = ad.dropout(x_seq, 1.0 - dropout, rng)

    stacked = lstm_seq(x_seq, params[prefix + "lstm_wx"],
                       params[prefix + "lstm_wh"], params[prefix + "lstm_b"])
    if train and dropout > 0.0:
        stacked = ad.dropout(stacked, 1.0 - dropout, rng)
    last = ad.row(stacked, token_ids.size - 1)
    return EncodedInstruction(hidden_states=stacked, last_hidden=last)


def embed_blocks(feature_rows: np.ndarray, params: dict[str, Tensor], prefix: str = "") -> Tensor:
    """Embeddings for all blocks at once: sigmoid(F @ W + b), rows in block order."""
    f = ad.tensor(feature_rows)
    return ad.sigmoid(ad.apply("add", f @ params[prefix + "block_w"], params[prefix + "block_b"]))


def embed_block(feature_vector: np.ndarray, params: dict[str, Tensor], prefix: str = "") -> Tensor:
    """Embedding of a single block's feature vector; componentwise in (0, 1)."""
    out = embed_blocks(np.asarray(feature_vector, dtype=np.float64)[None, :], params, prefix)
    return ad.row(out, 0)
