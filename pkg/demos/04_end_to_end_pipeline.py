"""Train, protect, attack, verify: the whole pipeline at desk scale.

Uses the synthetic digit corpus (drop MNIST IDX files into ./data to run
on the real benchmark instead). Produces the no-key degradation table and
checks the exact-recovery guarantee on every test sample.
"""

import time

import numpy as np

from pufbnn import DeviceModel, PufDevice, evaluate
from pufbnn.attack import eval_with_wrong_key, eval_without_key, format_tables, report_tables
from pufbnn.bnn import forward_batch
from pufbnn.crossbar import crossbar_forward_batch
from pufbnn.data import binarize_batch, synthetic_digits
from pufbnn.protect import SchemeId, protect_model, protected_forward_batch, unprotect
from pufbnn.train import TrainConfig, finalize, train_ste

print("== data ==")
train_set = synthetic_digits(600, seed=0)
test_set = synthetic_digits(200, seed=1)
print(f"{len(train_set)} train / {len(test_set)} test synthetic digit images")

print("\n== training (straight-through estimator) ==")
config = TrainConfig(layer_sizes=(784, 128, 128, 128, 10), epochs=10, seed=0)
t0 = time.time()
shadow, history = train_ste(config, train_set, test_set)
model = finalize(shadow)
print(f"per-epoch test accuracy: {[f'{h:.3f}' for h in history]} ({time.time()-t0:.0f}s)")

print("\n== protection ==")
device = PufDevice.generate(seed=99)
pm = protect_model(model, device, b"fab-batch-7/unit-42", SchemeId.ROW_INV_COL_SWAP)
print(f"schemes per layer: {[pl.scheme.name for pl in pm.layers]}")
print(f"declared key bits per layer: {list(pm.key_bits)}")
print(f"stored weights differ from the original: "
      f"{[not (pl.w_star == lw) for pl, (lw, _) in zip(pm.layers, model.layers)]}")

print("\n== inference paths ==")
x = binarize_batch(test_set.images)
plain = forward_batch(model, x)
with_key = protected_forward_batch(pm, device, x)
without_key = forward_batch(unprotect(pm, PufDevice.generate(seed=1000)), x)  # wrong device
print(f"with the correct device: {np.mean(with_key == plain):.1%} of predictions match plain")
print(f"attacker (no key), accuracy: {eval_without_key(pm, test_set):.1%} "
      f"(baseline {evaluate(model, test_set):.1%})")
print(f"wrong device, agreement with plain: {np.mean(without_key == plain):.1%}")

stats = eval_with_wrong_key(pm, device, test_set, flipped_bits=8, trials=5, seed=0)
print(f"8 flipped key bits: accuracy mean {stats['mean']:.1%} "
      f"range [{stats['min']:.1%}, {stats['max']:.1%}]")

print("\n== crossbar backend ==")
ideal = DeviceModel(g_on=1.0, g_off=0.0)
on_xbar = crossbar_forward_batch(pm, ideal, x, device)
print(f"ideal crossbar matches digital protected path: {np.array_equal(on_xbar, with_key)}")

print("\n== degradation table (2 key seeds per cell for speed) ==")
rows = report_tables(model, device, test_set, seeds=2)
print(format_tables(rows))

print("== exact-recovery check ==")
exact = np.array_equal(with_key, plain)
print(f"protected model + correct device reproduced every prediction: {exact}")
assert exact
