"""Finite-difference audit of every primitive op and composite model path.

Each check draws random small instances and compares the tape gradient with
central differences via :func:`blockworld.autodiff.grad_check`. Composite
paths (LSTM step, the three attention variants feeding the selection loss,
the offset head, and the full joint loss in expectation mode) differentiate
through a flat parameter vector that is sliced and reshaped into every
weight the path touches, so shared-parameter accumulation is exercised too.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad, model as model_mod
from .alignment import attend_dual, attend_last_hidden, attend_summary, block_distribution, encode_cnn, source_loss
from .config import TrainConfig
from .data import InstructionRecord
from .encoders import EncodedInstruction, Vocabulary, lstm_step
from .target import offset_mean
from .world import WorldState

DEFAULT_TOLERANCE = 1e-4


def _piecewise(shapes):
    """Helpers to route one flat vector into tensors of the given shapes."""
    sizes = [int(np.prod(s)) for s in shapes]

    def split(flat):
        pieces = []
        offset = 0
        for shape, size in zip(shapes, sizes):
            piece = ad.slice1d(flat, offset, offset + size)
            pieces.append(ad.reshape(piece, shape) if len(shape) > 1 else piece)
            offset += size
        return pieces

    return split, sum(sizes)


def _op_checks(rng):
    """(name, f, point) triples covering every primitive op kind."""
    n, m, d, f_dim, k = 3, 4, 5, 2, 3
    vec = rng.normal(size=d)
    mat = rng.normal(size=(m, d))
    mat2 = rng.normal(size=(d, n))
    pos_vec = rng.uniform(0.5, 2.0, size=d)
    mask = (rng.random((m, d)) < 0.8) / 0.8
    conv_w = rng.normal(size=(k, d, f_dim))
    conv_b = rng.normal(size=f_dim)
    idx = rng.integers(0, m, size=6)
    u_md = rng.normal(size=(m, d))
    u_mf = rng.normal(size=(m, f_dim))
    u_mn = rng.normal(size=(m, n))
    u_dm = rng.normal(size=(d, m))
    u_3d = rng.normal(size=(3, d))
    u_m = rng.normal(size=m)
    u_d = rng.normal(size=d)
    u_2d = rng.normal(size=2 * d)
    u_f = rng.normal(size=f_dim)
    u_3 = rng.normal(size=3)
    u_6 = rng.normal(size=6)
    u_rows = rng.normal(size=(6, d))

    def dot(x, const):
        return ad.apply("matmul", x, ad.tensor(const)) if x.values.ndim == 1 \
            else ad.tsum(ad.apply("mul", x, ad.tensor(const)))

    return [
        ("add", lambda x: dot(ad.apply("add", x, ad.tensor(mat)), u_md), ad.tensor(rng.normal(size=(m, d)))),
        ("add_broadcast", lambda x: dot(ad.apply("add", ad.tensor(mat), x), u_md), ad.tensor(vec)),
        ("sub", lambda x: dot(ad.apply("sub", ad.tensor(mat), x), u_md), ad.tensor(rng.normal(size=(m, d)))),
        ("mul", lambda x: dot(ad.apply("mul", x, ad.tensor(mat)), u_md), ad.tensor(rng.normal(size=(m, d)))),
        ("neg", lambda x: dot(ad.apply("neg", x), u_d), ad.tensor(vec)),
        ("scale", lambda x: dot(ad.apply("scale", x, factor=-1.7), u_d), ad.tensor(vec)),
        ("matmul_mm", lambda x: dot(x @ ad.tensor(mat2), u_mn), ad.tensor(mat)),
        ("matmul_mv", lambda x: dot(ad.tensor(mat) @ x, u_m), ad.tensor(vec)),
        ("matmul_vm", lambda x: dot(x @ ad.tensor(mat2.T), u_d), ad.tensor(rng.normal(size=n))),
        ("matmul_dot", lambda x: x @ ad.tensor(vec), ad.tensor(rng.normal(size=d))),
        ("transpose", lambda x: dot(ad.transpose(x), u_md.T), ad.tensor(mat)),
        ("sigmoid", lambda x: dot(ad.sigmoid(x), u_d), ad.tensor(vec)),
        ("tanh", lambda x: dot(ad.tanh(x), u_d), ad.tensor(vec)),
        ("exp", lambda x: dot(ad.exp(x), u_d), ad.tensor(vec)),
        ("log", lambda x: dot(ad.log(x), u_d), ad.tensor(pos_vec)),
        ("softmax", lambda x: dot(ad.softmax(x, axis=-1), u_d), ad.tensor(vec)),
        ("softmax_rows", lambda x: dot(ad.softmax(x, axis=1), u_md), ad.tensor(mat)),
        ("concat", lambda x: dot(ad.concat([x, ad.tensor(vec)]), u_2d), ad.tensor(vec + 1)),
        ("stack_rows", lambda x: dot(ad.stack_rows([x, ad.tensor(vec), x]), u_3d), ad.tensor(vec - 1)),
        ("gather_rows", lambda x: dot(ad.gather_rows(x, idx), u_rows), ad.tensor(mat)),
        ("gather", lambda x: dot(ad.gather(x, idx % d), u_6), ad.tensor(vec)),
        ("take", lambda x: ad.take(x, 2), ad.tensor(vec)),
        ("row", lambda x: dot(ad.row(x, 1), u_d), ad.tensor(mat)),
        ("slice1d", lambda x: dot(ad.slice1d(x, 1, 4), u_3), ad.tensor(vec)),
        ("reshape", lambda x: dot(ad.reshape(x, (d, m)), u_dm), ad.tensor(mat)),
        ("sum", lambda x: ad.tsum(x), ad.tensor(mat)),
        ("sum_axis", lambda x: dot(ad.sum_axis(x, axis=1), u_m), ad.tensor(mat)),
        ("conv1d_same", lambda x: dot(ad.conv1d_same(x, ad.tensor(conv_w), ad.tensor(conv_b)), u_mf), ad.tensor(mat)),
        ("conv1d_weights", lambda x: dot(ad.conv1d_same(ad.tensor(mat), x, ad.tensor(conv_b)), u_mf), ad.tensor(conv_w)),
        ("maxpool_cols", lambda x: dot(ad.maxpool_cols(x), u_f), ad.tensor(rng.normal(size=(m, f_dim)))),
        ("dropout", lambda x: dot(ad.apply("dropout", x, ad.tensor(mask)), u_md), ad.tensor(rng.normal(size=(m, d)))),
        ("sq_norm", lambda x: ad.sq_norm(x), ad.tensor(vec)),
        ("l2_norm", lambda x: ad.l2_norm(x), ad.tensor(vec + 3.0)),
        ("clamp_min", lambda x: dot(ad.apply("clamp_min", x, floor=0.0), u_d), ad.tensor(pos_vec)),
    ]


def check_primitive_ops(rng: np.random.Generator, instances: int = 100) -> dict[str, float]:
    """Worst finite-difference error per op over random instances."""
    worst: dict[str, float] = {}
    for _ in range(instances):
        for name, f, point in _op_checks(rng):
            err = ad.grad_check(f, point)
            worst[name] = max(worst.get(name, 0.0), err)
    return worst


def _tiny_dims():
    return {
        "wd": 4, "h": 5, "bd": 4, "n": 3, "m": 4,
        "widths": (2, 3), "filters": 2, "od": 4,
    }


def check_lstm_step(rng, instances=100) -> float:
    dims = _tiny_dims()
    wd, h = dims["wd"], dims["h"]
    worst = 0.0
    for _ in range(instances):
        shapes = [(wd, 4 * h), (h, 4 * h), (4 * h,), (wd,), (h,), (h,)]
        split, total = _piecewise(shapes)
        u, v = rng.normal(size=h), rng.normal(size=h)

        def f(flat):
            wx, wh, b, x, h0, c0 = split(flat)
            h1, c1 = lstm_step(x, h0, c0, wx, wh, b)
            return ad.apply("add", h1 @ ad.tensor(u), c1 @ ad.tensor(v))

        worst = max(worst, ad.grad_check(f, ad.tensor(rng.normal(scale=0.6, size=total))))
    return worst


def _random_encoded(rng, m, h):
    states = ad.tensor(rng.normal(size=(m, h)))
    return EncodedInstruction(hidden_states=states, last_hidden=ad.row(states, m - 1))


def check_attention(variant: str, rng, instances=100) -> float:
    """Gradient of source_loss(softmax(scores)) through one attention path."""
    dims = _tiny_dims()
    n, m, h, bd = dims["n"], dims["m"], dims["h"], dims["bd"]
    widths, filters = dims["widths"], dims["filters"]

    if variant == "last_hidden":
        shapes = [(n, bd), (m, h), (bd, h), (h, h)]
    elif variant == "cnn":
        shapes = [(n, bd), (m, h), (bd, filters * len(widths))]
        shapes += [(k, h, filters) for k in widths] + [(filters,) for _ in widths]
    elif variant == "dual":
        shapes = [(n, bd), (m, h), (bd, h), (bd, h)]
    else:
        raise ValueError(f"unknown attention variant {variant!r}")
    split, total = _piecewise(shapes)

    def scores_from(pieces):
        blocks, states = pieces[0], pieces[1]
        enc = EncodedInstruction(states, ad.row(states, m - 1))
        if variant == "last_hidden":
            return attend_last_hidden(blocks, enc, pieces[2], pieces[3])
        if variant == "cnn":
            conv_ws = pieces[3:3 + len(widths)]
            conv_bs = pieces[3 + len(widths):]
            return attend_summary(blocks, encode_cnn(enc, conv_ws, conv_bs), pieces[2])
        return attend_dual(blocks, enc, pieces[2], pieces[3])

    worst = 0.0
    for _ in range(instances):
        truth = int(rng.integers(n))

        def f(flat, truth=truth):
            return source_loss(block_distribution(scores_from(split(flat))), truth)

        worst = max(worst, ad.grad_check(f, ad.tensor(rng.normal(scale=0.6, size=total))))
    return worst


def check_offset_head(rng, instances=100) -> float:
    dims = _tiny_dims()
    sd, od = dims["h"], dims["od"]
    worst = 0.0
    for _ in range(instances):
        shapes = [(sd,), (sd, od), (od,), (od, 3), (3,)]
        split, total = _piecewise(shapes)
        u = rng.normal(size=3)

        def f(flat):
            summary, w1, b1, w2, b2 = split(flat)
            params = {"offset_w1": w1, "offset_b1": b1, "offset_w2": w2, "offset_b2": b2}
            return offset_mean(summary, params) @ ad.tensor(u)

        worst = max(worst, ad.grad_check(f, ad.tensor(rng.normal(scale=0.6, size=total))))
    return worst


def _joint_fixture(rng, attention):
    config = TrainConfig(
        attention=attention, inference="expectation", word_dim=4, hidden_dim=5,
        block_dim=4, cnn_widths=(2, 3), cnn_filters=2, offset_hidden=4,
        dropout=0.0, local_sigma=0.0, global_sigma=0.0,
    )
    vocab = Vocabulary.build(["move the block left edge corner front"])
    world = WorldState(
        np.column_stack([rng.uniform(1, 7, 3), np.zeros(3), rng.uniform(1, 7, 3)]),
        np.zeros(2), np.array([8.0, 8.0]))
    record = InstructionRecord("move the block left", world, int(rng.integers(3)),
                               rng.normal(size=3))
    return config, vocab, record


def check_joint_loss(rng, instances=100, attention="cnn", step=1e-5) -> float:
    """Full joint loss (expectation mode) differentiated through all parameters.

    Central differences perturb each parameter array in place rather than
    slicing one flat vector, so the numeric passes pay only for the forward.
    """
    from .training import example_loss

    worst = 0.0
    for _ in range(instances):
        config, vocab, record = _joint_fixture(rng, attention)
        params = model_mod.init_params(config, vocab, rng)

        with ad.Tape() as tape:
            loss = example_loss(record, params, config, vocab, train=False)
        tape.backward(loss)
        analytic = tape.gradients_by_name(params)

        def value():
            return float(example_loss(record, params, config, vocab, train=False).values)

        for name, p in params.items():
            flat = p.values.reshape(-1)
            a_flat = analytic[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = value()
                flat[i] = orig - step
                lo = value()
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * step)
                denom = max(1.0, abs(a_flat[i]), abs(numeric))
                worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst


def gradient_audit(seed: int = 0, instances: int = 100,
                   joint_instances: int | None = None) -> dict[str, float]:
    """Run the full audit; returns worst error per check name."""
    rng = np.random.default_rng(seed)
    results = dict(check_primitive_ops(rng, instances))
    results["path/lstm_step"] = check_lstm_step(rng, instances)
    for variant in ("last_hidden", "cnn", "dual"):
        results[f"path/attend_{variant}"] = check_attention(variant, rng, instances)
    results["path/offset_head"] = check_offset_head(rng, instances)
    results["path/joint_loss_expectation"] = check_joint_loss(
        rng, joint_instances if joint_instances is not None else instances)
    return results
