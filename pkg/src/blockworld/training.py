"""Joint optimization of the source and target losses over shared parameters.

One trainer owns the parameter dict for the whole run. Each step builds a
fresh tape over a mini-batch, averages per-example (source + target) losses,
and applies an Adam update with decoupled weight decay on every trainable and
global-norm clipping on the LSTM gradients only. In sampling mode the target
term is the annealed sample-averaging loss whose sample count follows the
configured schedule; a linear-regression baseline on the detached instruction
summary discounts the score-function term.

Checkpoints are NumPy ``.npz`` archives: one array entry per named parameter
plus a ``__meta__`` JSON string holding a format version, the config, and the
vocabulary.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad, model as model_mod, target as target_mod
from .alignment import source_loss
from .autodiff import Tape, Tensor
from .config import TrainConfig
from .data import Dataset, InstructionRecord
from .encoders import Vocabulary, tokenize
from .target import AnnealSchedule, LinearBaseline
from .world import add_noise

CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteGradient(UserWarning):
    """A step was skipped because a gradient was not finite."""


@dataclass
class OptimizerState:
    """Adam first/second moment accumulators mirroring the parameter shapes."""

    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "OptimizerState":
        return cls(
            first={k: np.zeros_like(p.values) for k, p in params.items()},
            second={k: np.zeros_like(p.values) for k, p in params.items()},
        )


def clip_lstm_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> dict[str, np.ndarray]:
    """Scale the LSTM parameter gradients so their global norm is <= clip_norm."""
    lstm_keys = [k for k in grads if "lstm_" in k]
    total = np.sqrt(sum(float((grads[k] ** 2).sum()) for k in lstm_keys))
    if total <= clip_norm or total == 0.0:
        return grads
    scale = clip_norm / total
    out = dict(grads)
    for k in lstm_keys:
        out[k] = grads[k] * scale
    return out


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    config: TrainConfig,
) -> bool:
    """One optimizer step; returns False (and warns) on non-finite gradients.

    LSTM gradients are norm-clipped first; decoupled weight decay then shrinks
    every trainable before the bias-corrected Adam update.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            warnings.warn(f"non-finite gradient for {k}; step skipped", NonFiniteGradient)
            return False
    grads = clip_lstm_gradients(grads, config.clip_norm)
    state.step += 1
    t = state.step
    lr = config.learning_rate
    for k, p in params.items():
        g = grads[k]
        if config.weight_decay > 0.0:
            p.values *= 1.0 - lr * config.weight_decay
        m = state.first[k] = ADAM_BETA1 * state.first[k] + (1 - ADAM_BETA1) * g
        v = state.second[k] = ADAM_BETA2 * state.second[k] + (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        p.values -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return True


def example_loss(
    record: InstructionRecord,
    params: dict[str, Tensor],
    config: TrainConfig,
    vocab: Vocabulary,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
    n_samples: int = 1,
    baseline: LinearBaseline | None = None,
    token_ids: np.ndarray | None = None,
) -> Tensor:
    """Source cross-entropy plus the configured target loss for one example."""
    world, target = record.world, record.target
    if train and (config.local_sigma > 0 or config.global_sigma > 0):
        world, target = add_noise(world, target, config.local_sigma, config.global_sigma, rng)
    ids = tokenize(record.instruction, vocab) if token_ids is None else token_ids
    out = model_mod.forward(params, config, ids, world, train=train, rng=rng)

    l_src = source_loss(out.source_dist, record.source)
    if config.inference == "expectation":
        predicted = target_mod.expected_position(out.ref_dist, out.positions, out.offset_center)
        l_tgt = target_mod.expectation_loss(predicted, target)
    else:
        base = baseline.predict(out.summary) if baseline is not None else 0.0
        l_tgt = target_mod.intermediate_loss(
            out.ref_dist, out.offset_center, out.positions, target,
            n_samples, config.sigma_o, rng, baseline_value=base)
        if baseline is not None:
            baseline.update(out.summary, float(l_tgt.values))
    return ad.apply("add", l_src, l_tgt)


def example_sampling_gradient(
    record: InstructionRecord,
    params: dict[str, Tensor],
    config: TrainConfig,
    vocab: Vocabulary,
    k: int,
    rng: np.random.Generator,
    baseline: LinearBaseline | None = None,
):
    """Policy-gradient estimate for one example; (named grads, reward stats)."""
    ids = tokenize(record.instruction, vocab)

    def build():
        out = model_mod.forward(params, config, ids, record.world)
        return out.ref_dist, out.offset_center, out.positions, out.summary

    return target_mod.sampling_gradient(build, params, record.target, k,
                                        config.sigma_o, rng, baseline=baseline)


def joint_loss(
    batch,
    params: dict[str, Tensor],
    config: TrainConfig,
    vocab: Vocabulary,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
    n_samples: int = 1,
    baseline: LinearBaseline | None = None,
) -> Tensor:
    """Mean over the batch of per-example joint losses."""
    if not batch:
        raise ValueError("batch is empty")
    total = None
    for item in batch:
        record, ids = item if isinstance(item, tuple) else (item, None)
        loss = example_loss(record, params, config, vocab, train=train, rng=rng,
                            n_samples=n_samples, baseline=baseline, token_ids=ids)
        total = loss if total is None else ad.apply("add", total, loss)
    return ad.apply("scale", total, factor=1.0 / len(batch))


@dataclass
class Checkpoint:
    """Trained parameters plus everything needed to run them."""

    config: TrainConfig
    vocab: Vocabulary
    params: dict[str, Tensor]
    dev_metrics: dict | None = None
    history: list = field(default_factory=list)

    def clone_params(self) -> dict[str, Tensor]:
        return {k: ad.parameter(p.values.copy(), name=k) for k, p in self.params.items()}


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.token_to_id,
        "dev_metrics": ckpt.dev_metrics,
    }
    arrays = {f"param/{k}": p.values for k, p in ckpt.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as archive:
        if "__meta__" not in archive:
            raise ValueError(f"{path}: not a checkpoint (missing __meta__)")
        meta = json.loads(archive["__meta__"].tobytes().decode())
        version = meta.get("version")
        if version is None or version > CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        params = {
            name[len("param/"):]: ad.parameter(archive[name], name=name[len("param/"):])
            for name in archive.files if name.startswith("param/")
        }
    return Checkpoint(
        config=TrainConfig.from_dict(meta["config"]),
        vocab=Vocabulary(meta["vocab"]),
        params=params,
        dev_metrics=meta.get("dev_metrics"),
    )


def train(dataset: Dataset, config: TrainConfig, *, quiet: bool = True,
          vocab: Vocabulary | None = None) -> Checkpoint:
    """Full training run; returns the best-dev checkpoint.

    Noising applies to the training split only. In sampling mode the target
    loss follows the annealing schedule. Model selection maximizes dev source
    accuracy minus dev target mean distance.
    """
    from .evaluation import evaluate  # local import avoids a cycle at module load

    train_split = dataset.subset("train")
    dev_split = dataset.subset("dev")
    if not train_split or not dev_split:
        raise ValueError("dataset needs non-empty train and dev splits")

    rng = np.random.default_rng(config.seed)
    if vocab is None:
        vocab = Vocabulary.build(r.instruction for r in train_split)
    params = model_mod.init_params(config, vocab, rng)
    state = OptimizerState.for_params(params)
    schedule = AnnealSchedule(config.anneal_samples, config.anneal_epochs_per_stage)
    baseline = None
    if config.inference == "sampling" and config.baseline == "linear":
        baseline = LinearBaseline(config.summary_dim, config.learning_rate)

    best_score = -np.inf
    best: Checkpoint | None = None
    history = []
    order = np.arange(len(train_split))
    running = Checkpoint(config, vocab, params)
    token_cache = [tokenize(r.instruction, vocab) for r in train_split]

    for epoch in range(config.epochs):
        n_samples = schedule.current(epoch) if config.inference == "sampling" else 1
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [(train_split[i], token_cache[i]) for i in order[start:start + config.batch_size]]
            with Tape() as tape:
                loss = joint_loss(batch, params, config, vocab, train=True, rng=rng,
                                  n_samples=n_samples, baseline=baseline)
            if not np.isfinite(loss.values):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            tape.backward(loss)
            grads = tape.gradients_by_name(params)
            adam_step(params, grads, state, config)
            epoch_loss += float(loss.values) * len(batch)
        epoch_loss /= len(order)

        report = evaluate([running], dev_split)
        score = report.source_accuracy - report.target_mean
        entry = {
            "epoch": epoch,
            "train_loss": epoch_loss,
            "dev_source_accuracy": report.source_accuracy,
            "dev_target_mean": report.target_mean,
            "anneal_n": n_samples,
        }
        history.append(entry)
        if not quiet:
            print(f"epoch {epoch:3d}  loss {epoch_loss:8.4f}  "
                  f"dev acc {report.source_accuracy:6.3f}  dev tgt {report.target_mean:6.3f}"
                  + (f"  N={n_samples}" if config.inference == "sampling" else ""))
        if score > best_score:
            best_score = score
            best = Checkpoint(config, vocab, running.clone_params(),
                              dev_metrics=report.summary(), history=list(history))
    best.history = history
    return best


def train_ensemble(dataset: Dataset, config: TrainConfig, size: int | None = None,
                   *, quiet: bool = True) -> list[Checkpoint]:
    """Train ``size`` members with seeds seed, seed+1, ... on the same data."""
    size = config.ensemble_size if size is None else size
    members = []
    for i in range(size):
        member_cfg = TrainConfig.from_dict({**config.to_dict(), "seed": config.seed + i})
        members.append(train(dataset, member_cfg, quiet=quiet))
    return members


def ensemble_predict(checkpoints, record: InstructionRecord) -> tuple[np.ndarray, np.ndarray]:
    """Average member source distributions and expected target positions.

    Members may mix attention variants but must agree on the vocabulary.
    """
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    first_vocab = checkpoints[0].vocab.token_to_id
    for ckpt in checkpoints[1:]:
        if ckpt.vocab.token_to_id != first_vocab:
            raise ValueError("ensemble members have incompatible vocabularies")
    dists = []
    positions = []
    for ckpt in checkpoints:
        ids = tokenize(record.instruction, ckpt.vocab)
        out = model_mod.forward(ckpt.params, ckpt.config, ids, record.world)
        dists.append(out.source_dist.values)
        predicted = target_mod.predict_expectation(
            out.ref_dist.values, out.positions, out.offset_center.values)
        positions.append(predicted.position)
    return np.mean(dists, axis=0), np.mean(positions, axis=0)
