"""End to end: generate data, train both inference modes, evaluate, ensemble.

This is a scaled-down tour (600 records, 12 epochs, two seeds per mode), so
expect a few minutes of CPU time and accuracy around 70-90%; the acceptance
suite runs the full-size version (2000 records, 30 epochs) into the mid-90s.

Run:  python demos/06_train_synthetic.py
"""

import numpy as np

import blockworld as bw

dataset = bw.generate_synthetic(600, max_blocks=8, rng=7)
print(f"{len(dataset.records)} records; example instruction:")
print(" ", dataset.records[0].instruction)

base = dict(word_dim=32, hidden_dim=48, block_dim=24, cnn_filters=12, cnn_widths=(2, 3, 4),
            offset_hidden=16, epochs=12, batch_size=16, ensemble_size=1,
            learning_rate=0.003, global_sigma=0.0)

members = {}
for mode in ("expectation", "sampling"):
    members[mode] = []
    for seed in (0, 1):
        cfg = bw.TrainConfig(inference=mode, seed=seed, **base)
        ckpt = bw.train(dataset, cfg)
        members[mode].append(ckpt)
        rep = bw.evaluate([ckpt], dataset.subset("test")).summary()
        print(f"{mode:<12} seed {seed}: accuracy {rep['source_accuracy']:.3f}  "
              f"target mean {rep['target_mean']:.3f}")

print("\ntwo-member ensembles (mean distribution, mean position):")
for mode, ckpts in members.items():
    rep = bw.evaluate(ckpts, dataset.subset("test")).summary()
    print(f"{mode:<12} ensemble: accuracy {rep['source_accuracy']:.3f}  "
          f"target mean {rep['target_mean']:.3f}")

mixed = [members["expectation"][0], members["sampling"][0]]
rep = bw.evaluate(mixed, dataset.subset("test")).summary()
print(f"mixed-mode   ensemble: accuracy {rep['source_accuracy']:.3f}  "
      f"target mean {rep['target_mean']:.3f}")

record = dataset.subset("test")[0]
ckpt = members["sampling"][0]
ids = bw.tokenize(record.instruction, ckpt.vocab)
out = bw.forward(ckpt.params, ckpt.config, ids, record.world)
sampled = bw.predict_sample(out.ref_dist.values, out.positions,
                            out.offset_center.values, ckpt.config.sigma_o,
                            np.random.default_rng(0))
print(f"\ninterpretable sampled prediction for: {record.instruction!r}")
print(f"  source block {int(np.argmax(out.source_dist.values))}, "
      f"reference block {sampled.ref_index}, target {np.round(sampled.position, 2)}")
print(f"  ground truth: source {record.source}, target {np.round(record.target, 2)}")
