"""Tape-based reverse-mode differentiation in five small scenes.

Run:  python demos/01_autodiff_basics.py
"""

import numpy as np

from blockworld import autodiff as ad

# Scene 1: a scalar chain rule, d(x^2)/dx at x = 3.
x = ad.parameter(3.0, name="x")
with ad.Tape() as tape:
    loss = ad.apply("mul", x, x)
tape.backward(loss)
print("d(x^2)/dx at 3      :", tape.grad(x))

# Scene 2: softmax always sums to one, so the gradient of its sum vanishes.
v = ad.parameter([0.5, -1.0, 2.0], name="v")
with ad.Tape() as tape:
    total = ad.tsum(ad.softmax(v))
tape.backward(total)
print("grad of sum(softmax):", tape.grad(v))

# Scene 3: a parameter feeding two branches accumulates both contributions.
w = ad.parameter([1.0, 2.0], name="w")
with ad.Tape() as tape:
    branch_a = ad.apply("scale", w, factor=3.0)
    branch_b = ad.apply("mul", w, w)
    loss = ad.tsum(ad.apply("add", branch_a, branch_b))
tape.backward(loss)
print("d(3w + w^2)/dw      :", tape.grad(w), "(expected 3 + 2w)")

# Scene 4: the finite-difference checker scores an arbitrary composition.
rng = np.random.default_rng(0)
bilinear = rng.normal(size=(4, 6))
block = rng.normal(size=4)


def alignment_score(hidden):
    return ad.tensor(block) @ (ad.tensor(bilinear) @ hidden)


err = ad.grad_check(alignment_score, ad.tensor(rng.normal(size=6)))
print("bilinear grad check :", f"{err:.2e} max relative error")

# Scene 5: non-finite values are rejected at op boundaries, not discovered later.
try:
    ad.log(ad.tensor([0.0]))
except ad.AutodiffError as exc:
    print("log(0) rejected     :", exc)
