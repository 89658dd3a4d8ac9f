"""Metric computation over dataset splits."""

import numpy as np
import pytest

from blockworld.config import TrainConfig
from blockworld.data import InstructionRecord, generate_synthetic
from blockworld.encoders import Vocabulary
from blockworld.evaluation import evaluate
from blockworld.model import init_params
from blockworld.training import Checkpoint
from blockworld.world import WorldState


def build_checkpoint(records, seed=0, **kw):
    cfg = TrainConfig(word_dim=8, hidden_dim=10, block_dim=6, cnn_filters=4,
                      cnn_widths=(2, 3), offset_hidden=5, ensemble_size=1, seed=seed, **kw)
    vocab = Vocabulary.build([r.instruction for r in records])
    params = init_params(cfg, vocab, np.random.default_rng(seed))
    return Checkpoint(cfg, vocab, params)


def scripted_report(records, sources, targets):
    """Metric oracle: replicate the definitions with plain loops."""
    correct = sum(int(p == r.source) for p, r in zip(sources, records))
    src_d = [float(np.linalg.norm(r.world.blocks[p] - r.world.blocks[r.source]))
             for p, r in zip(sources, records)]
    tgt_d = [float(np.linalg.norm(np.asarray(t) - r.target)) for t, r in zip(targets, records)]
    return (correct / len(records), float(np.median(src_d)), float(np.mean(src_d)),
            float(np.median(tgt_d)), float(np.mean(tgt_d)))


def two_block_record(instruction="move the leftmost block behind the rightmost block"):
    world = WorldState(np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]),
                       np.array([-1.0, -1.0]), np.array([5.0, 5.0]))
    return InstructionRecord(instruction, world, 0, np.array([3.0, 0.0, 1.0]))


def test_perfect_predictions_are_zero_error():
    records = [two_block_record(), two_block_record("place the rightmost block behind it")]
    records[1] = InstructionRecord(records[1].instruction, records[1].world, 1,
                                   records[1].target)
    sources = [r.source for r in records]
    targets = [r.target for r in records]
    acc, sm, sme, tm, tme = scripted_report(records, sources, targets)
    assert acc == 1.0 and sm == sme == tm == tme == 0.0


def test_two_point_median_mean_arithmetic():
    # 1 of 2 correct, the wrong pick 3.0 away: accuracy .5, median = mean = 1.5.
    records = [two_block_record(), two_block_record()]
    sources = [0, 1]  # second prediction picks the block 3.0 away
    targets = [r.target for r in records]
    acc, s_med, s_mean, _, _ = scripted_report(records, sources, targets)
    assert acc == 0.5
    assert s_med == pytest.approx(1.5)
    assert s_mean == pytest.approx(1.5)


def test_majority_correct_source_median_is_zero():
    records = [two_block_record() for _ in range(5)]
    sources = [0, 0, 0, 1, 1]  # 60% correct
    targets = [r.target for r in records]
    _, s_med, _, _, _ = scripted_report(records, sources, targets)
    assert s_med == 0.0


def test_evaluate_matches_scripted_oracle():
    dataset = generate_synthetic(18, max_blocks=5, rng=2)
    records = dataset.subset("dev")
    ckpt = build_checkpoint([r for r in dataset.records])
    report = evaluate([ckpt], records)

    from blockworld.training import ensemble_predict

    sources, targets = [], []
    for r in records:
        dist, pos = ensemble_predict([ckpt], r)
        sources.append(int(np.argmax(dist)))
        targets.append(pos)
    expected = scripted_report(records, sources, targets)
    got = (report.source_accuracy, report.source_median, report.source_mean,
           report.target_median, report.target_mean)
    assert np.allclose(got, expected, atol=1e-12)
    assert len(report.rows) == len(records)


def test_report_invariant_to_example_order():
    dataset = generate_synthetic(16, max_blocks=5, rng=3)
    records = dataset.subset("dev")
    ckpt = build_checkpoint(dataset.records)
    fwd = evaluate([ckpt], records).summary()
    rev = evaluate([ckpt], list(reversed(records))).summary()
    assert fwd == rev


def test_expectation_evaluation_is_deterministic():
    dataset = generate_synthetic(16, max_blocks=5, rng=4)
    ckpt = build_checkpoint(dataset.records)
    records = dataset.subset("dev")
    assert evaluate([ckpt], records).summary() == evaluate([ckpt], records).summary()


def test_sampled_evaluation_requires_rng_and_single_member():
    dataset = generate_synthetic(16, max_blocks=5, rng=5)
    ckpt = build_checkpoint(dataset.records)
    records = dataset.subset("dev")
    with pytest.raises(ValueError):
        evaluate([ckpt], records, sampled=True)
    with pytest.raises(ValueError):
        evaluate([ckpt, ckpt], records, sampled=True, rng=np.random.default_rng(0))
    r1 = evaluate([ckpt], records, sampled=True, rng=np.random.default_rng(7))
    r2 = evaluate([ckpt], records, sampled=True, rng=np.random.default_rng(7))
    assert r1.summary() == r2.summary()
    assert any(row["sampled_reference"] is not None for row in r1.rows)


def test_empty_split_rejected():
    dataset = generate_synthetic(8, max_blocks=5, rng=6)
    ckpt = build_checkpoint(dataset.records)
    with pytest.raises(ValueError):
        evaluate([ckpt], [])
