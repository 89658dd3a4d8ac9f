"""Block-world geometry: the 12 spatial features and training-time noising.

Run:  python demos/02_world_features.py
"""

import numpy as np

from blockworld import WorldState, add_noise, detect_stack, featurize

world = WorldState(
    blocks=np.array([
        [1.0, 0.0, 2.0],   # near the front-left corner
        [8.0, 0.0, 8.5],   # near the back-right corner
        [5.0, 0.0, 5.0],   # dead center
        [5.0, 1.0, 5.0],   # stacked on top of the center block
    ]),
    board_min=np.array([0.0, 0.0]),
    board_max=np.array([10.0, 10.0]),
)

names = ["front-left", "back-right", "center", "stack-top"]
print("block        coords              corner distances                edge distances        stack")
for i, name in enumerate(names):
    f = featurize(world, i)
    corners = " ".join(f"{d:5.2f}" for d in f.board_distances[:4])
    edges = " ".join(f"{d:5.2f}" for d in f.board_distances[4:])
    print(f"{name:<12} {np.array2string(f.coords, precision=1):<19} {corners}   {edges}   {f.stack_flag:.0f}")

print("\nstack flags:", [detect_stack(world, i) for i in range(world.n_blocks)])

# Noising perturbs each block horizontally and shifts only the target globally.
rng = np.random.default_rng(7)
target = np.array([6.0, 0.0, 5.0])
noisy, moved = add_noise(world, target, local_sigma=0.1, global_sigma=1.0, rng=rng)
print("\nblock drift under local noise (x, z):")
print(np.round(noisy.blocks[:, [0, 2]] - world.blocks[:, [0, 2]], 3))
print("target shift under global noise:", np.round(moved - target, 3))
print("stack survives noising:", [detect_stack(noisy, i) for i in range(4)])
