"""Target position modeling: reference distribution plus Gaussian offset.

The target random variable is the sum of a categorical reference block
position and a 3D Gaussian offset with fixed isotropic covariance. Inference
is either the exact expectation (probability-weighted reference mean plus
offset mean) or a single sample of both variables. The sampling objective,
the expected distance between truth and sampled target, is non-differentiable
in the reference choice, so its gradient is estimated with a score-function
(likelihood-ratio) estimator with an optional learned linear-regression
baseline; an annealed sample-averaging loss interpolates between the
expectation and sampling regimes as the sample count shrinks to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor

DEFAULT_OFFSET_SIGMA = 0.5
DEFAULT_ANNEAL_SAMPLES = (20, 15, 10, 8, 6, 5, 4, 3, 2, 1)


def offset_mean(summary: Tensor, params: dict[str, Tensor], prefix: str = "") -> Tensor:
    """Offset distribution center: a two-layer head with a sigmoid inner layer."""
    inner = ad.sigmoid(ad.apply("add", summary @ params[prefix + "offset_w1"],
                                params[prefix + "offset_b1"]))
    return ad.apply("add", inner @ params[prefix + "offset_w2"], params[prefix + "offset_b2"])


@dataclass(frozen=True)
class TargetPrediction:
    """Predicted target position plus sampling provenance when applicable."""

    mode: str  # "expectation" or "sample"
    position: np.ndarray  # (3,)
    ref_index: int | None = None
    offset: np.ndarray | None = None


def predict_expectation(ref_probs: np.ndarray, positions: np.ndarray,
                        offset_center: np.ndarray) -> TargetPrediction:
    """Exact mean of the target variable: sum_i p_i * position_i + offset center."""
    ref_probs = np.asarray(ref_probs, dtype=np.float64)
    if not np.isclose(ref_probs.sum(), 1.0, atol=1e-6):
        raise ValueError(f"reference probabilities sum to {ref_probs.sum()}, not 1")
    pos = ref_probs @ np.asarray(positions, dtype=np.float64) + np.asarray(offset_center)
    return TargetPrediction(mode="expectation", position=pos)


def sample_reference_offsets(
    ref_probs: np.ndarray,
    offset_center: np.ndarray,
    sigma: float,
    size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``size`` (reference index, offset) pairs from the two distributions."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    idx = rng.choice(len(ref_probs), size=size, p=np.asarray(ref_probs, dtype=np.float64))
    offsets = np.asarray(offset_center, dtype=np.float64) + sigma * rng.standard_normal((size, 3))
    return idx, offsets


def predict_sample(ref_probs: np.ndarray, positions: np.ndarray, offset_center: np.ndarray,
                   sigma: float, rng: np.random.Generator) -> TargetPrediction:
    """One draw of reference block and offset; position is exactly their sum."""
    idx, offsets = sample_reference_offsets(ref_probs, offset_center, sigma, 1, rng)
    ref = int(idx[0])
    off = offsets[0]
    return TargetPrediction(mode="sample", position=np.asarray(positions)[ref] + off,
                            ref_index=ref, offset=off)


def expected_position(ref_dist: Tensor, positions: np.ndarray, offset_center: Tensor) -> Tensor:
    """Tape-tracked expectation of the target variable."""
    return ad.apply("add", ref_dist @ ad.tensor(np.asarray(positions, dtype=np.float64)),
                    offset_center)


def expectation_loss(predicted: Tensor, target: np.ndarray) -> Tensor:
    """Squared distance between ground truth and the expected position."""
    return ad.sq_norm(ad.apply("sub", ad.tensor(np.asarray(target, dtype=np.float64)), predicted))


@dataclass(frozen=True)
class AnnealSchedule:
    """Strictly decreasing sample sizes, dwelling a fixed number of epochs each."""

    sample_sizes: tuple[int, ...] = DEFAULT_ANNEAL_SAMPLES
    epochs_per_stage: int = 2

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sample_sizes)
        if not sizes or sizes[-1] != 1:
            raise ValueError("sample sizes must end at 1")
        if any(a <= b for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sample sizes must be strictly decreasing")
        if self.epochs_per_stage < 1:
            raise ValueError("epochs_per_stage must be >= 1")
        object.__setattr__(self, "sample_sizes", sizes)

    def current(self, epoch: int) -> int:
        """Sample count for an epoch; stays at 1 after the schedule ends."""
        if epoch < 0:
            raise ValueError("epoch must be >= 0")
        stage = epoch // self.epochs_per_stage
        if stage >= len(self.sample_sizes):
            return 1
        return self.sample_sizes[stage]


def anneal_next(schedule: AnnealSchedule, epoch: int) -> int:
    return schedule.current(epoch)


class LinearBaseline:
    """Linear regression from a detached summary vector to observed distance.

    Fitted by plain gradient steps on squared error; predictions feed the
    advantage term only and never backpropagate into the policy.
    """

    def __init__(self, feature_dim: int, learning_rate: float = 0.001):
        self.weights = np.zeros(feature_dim)
        self.bias = 0.0
        self.learning_rate = learning_rate

    def predict(self, features: np.ndarray) -> float:
        return float(self.weights @ np.asarray(features, dtype=np.float64) + self.bias)

    def update(self, features: np.ndarray, observed: np.ndarray | float) -> None:
        """One gradient step toward the mean observed distance for ``features``.

        The step is normalized by the squared feature norm (NLMS), which keeps
        the recursion stable for any feature scale and learning rate < 1.
        """
        features = np.asarray(features, dtype=np.float64)
        err = self.predict(features) - float(np.mean(observed))
        step = self.learning_rate * 2.0 * err / (1.0 + float(features @ features))
        self.weights -= step * features
        self.bias -= step


@dataclass
class RewardStats:
    """Per-call sampling statistics of the policy-gradient estimator."""

    distances: np.ndarray  # (k,)
    baseline_value: float
    ref_indices: np.ndarray  # (k,)

    @property
    def mean_reward(self) -> float:
        return float(-self.distances.mean())


def sampling_gradient(
    build_policy,
    params: dict[str, Tensor],
    target: np.ndarray,
    k: int,
    sigma: float,
    rng: np.random.Generator,
    baseline: LinearBaseline | None = None,
) -> tuple[dict[str, np.ndarray], RewardStats]:
    """Score-function estimate of the sampling-loss gradient from k draws.

    ``build_policy()`` runs the model forward under a fresh tape and returns
    ``(ref_dist, offset_center, positions, baseline_features)`` with the first
    two tracked tensors. Each draw contributes

        (dlog P(ref) - 1/2 d[(o - mu)' (o - mu) / sigma^2]) * (distance - b)

    and the estimate is the mean over draws. The baseline value is computed
    before the draws are consumed and updated from them afterwards, so it
    never correlates with the draws it discounts.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    target = np.asarray(target, dtype=np.float64)
    with Tape() as tape:
        ref_dist, center, positions, features = build_policy()
        idx, offsets = sample_reference_offsets(ref_dist.values, center.values, sigma, k, rng)
        sampled = np.asarray(positions, dtype=np.float64)[idx] + offsets
        distances = np.linalg.norm(target[None, :] - sampled, axis=1)

        base = baseline.predict(features) if baseline is not None else 0.0
        advantages = distances - base

        # Gather first: sampled entries have positive probability, while the
        # distribution may contain exact zeros elsewhere.
        log_picked = ad.log(ad.gather(ref_dist, idx))  # (k,)
        if sigma > 0.0:
            diff = ad.apply("sub", ad.tensor(offsets), center)  # (k, 3) - (3,)
            quad = ad.apply("scale", ad.sum_axis(ad.apply("mul", diff, diff), axis=1),
                            factor=1.0 / (2.0 * sigma * sigma))
            per_sample = ad.apply("sub", log_picked, quad)
        else:
            per_sample = log_picked  # degenerate offset: the draw is the center itself
        weighted = ad.apply("mul", per_sample, ad.tensor(advantages))
        surrogate = ad.apply("scale", ad.tsum(weighted), factor=1.0 / k)
    tape.backward(surrogate)
    grads = tape.gradients_by_name(params)

    if baseline is not None:
        baseline.update(features, distances)
    return grads, RewardStats(distances=distances, baseline_value=base, ref_indices=idx)


def intermediate_loss(
    ref_dist: Tensor,
    offset_center: Tensor,
    positions: np.ndarray,
    target: np.ndarray,
    n_samples: int,
    sigma: float,
    rng: np.random.Generator,
    baseline_value: float = 0.0,
) -> Tensor:
    """Annealed sample-averaging loss on the active tape.

    Draws ``n_samples`` (reference, offset) pairs, predicts their average, and
    returns the distance to ground truth. The value is exactly that distance;
    backward additionally carries a score-function term for the reference
    draws so the reference distribution trains despite the discrete sampling,
    while the offset path is differentiable through the distribution center.
    At ``n_samples == 1`` the value equals the single-draw sampling distance;
    as the count grows it converges on the distance to the exact expectation.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    target = np.asarray(target, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64)

    idx, offsets = sample_reference_offsets(
        ref_dist.values, offset_center.values, sigma, n_samples, rng)
    sampled = positions[idx] + offsets  # same arithmetic as predict_sample
    prediction = sampled.mean(axis=0)

    # The offset path re-enters differentiably through a delta that is exactly
    # zero at the sampled point, so the reported value is the plain distance.
    delta = ad.apply("sub", offset_center, ad.tensor(offset_center.values))
    distance = ad.l2_norm(ad.apply("sub", ad.tensor(target - prediction), delta))

    advantage = float(distance.values) - baseline_value
    score_sum = ad.tsum(ad.log(ad.gather(ref_dist, idx)))
    surrogate = ad.apply("scale", score_sum, factor=advantage)
    return ad.apply("add", distance, ad.zero_value(surrogate))
