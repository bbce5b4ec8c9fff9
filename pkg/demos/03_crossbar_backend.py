"""The simulated RRAM crossbar: differential cells, currents, comparator.

Demonstrates weight mapping, current accumulation, the threshold-current
comparator replacing ADC + activation, exactness for ideal devices, and
graceful degradation under conductance variation.
"""

import numpy as np

from pufbnn import BinWeightMatrix, BipolarVec, DeviceModel, ThresholdVec
from pufbnn.bitops import pack_pm1_batch, xnor_popcount_matvec_batch
from pufbnn.bnn import sign_threshold_batch
from pufbnn.crossbar import (
    analog_matvec,
    comparator,
    encode_input,
    map_weights,
    thresholds_to_currents,
)

rng = np.random.default_rng(3)

print("== differential mapping ==")
w = BinWeightMatrix.from_pm1(np.array([[1], [-1]]))
array = map_weights(w, DeviceModel(g_on=1.0, g_off=0.0))
print(f"+1 cell pair (top, bottom) = ({array.g_top[0,0]}, {array.g_bottom[0,0]})")
print(f"-1 cell pair (top, bottom) = ({array.g_top[1,0]}, {array.g_bottom[1,0]})")
v_top, v_bottom = encode_input(BipolarVec.from_pm1([1, -1]))
print(f"input (+1, -1) drives line pairs {list(zip(v_top, v_bottom))}")

print("\n== currents and the comparator ==")
m, n = 8, 4
w_pm1 = rng.choice([-1, 1], size=(m, n))
b = ThresholdVec(2 * rng.integers(-3, 4, size=n))
dev = DeviceModel(g_on=1.0, g_off=0.1)
array = map_weights(BinWeightMatrix.from_pm1(w_pm1), dev)
config = thresholds_to_currents(b, m, dev)
x = rng.choice([-1, 1], size=m)
currents = analog_matvec(array, encode_input(x))
y = w_pm1.T @ x
print(f"digital products  y = {y.tolist()}")
print(f"column currents   I = {np.round(currents, 3).tolist()}")
print(f"threshold currents  = {np.round(config.i_th, 3).tolist()}")
print(f"comparator output   = {np.where(comparator(currents, config), 1, -1).tolist()}")
print(f"digital sign(y - B) = {np.where(y - b.values >= 0, 1, -1).tolist()}")

print("\n== exactness across on/off ratios (ideal devices) ==")
xs = np.where((np.arange(2**m)[:, None] >> np.arange(m)) & 1, 1, -1).astype(np.int8)
digital = sign_threshold_batch(
    xnor_popcount_matvec_batch(BinWeightMatrix.from_pm1(w_pm1), pack_pm1_batch(xs)), b
)
for g_on, g_off in ((1.0, 0.0), (10.0, 1.0), (2.0, 1.0)):
    dev = DeviceModel(g_on=g_on, g_off=g_off)
    arr = map_weights(BinWeightMatrix.from_pm1(w_pm1), dev)
    cfg = thresholds_to_currents(b, m, dev)
    mismatches = 0
    for row, want in zip(xs, digital):
        got = comparator(analog_matvec(arr, encode_input(row)), cfg)
        mismatches += int(not np.array_equal(got, want))
    print(f"g_on/g_off = {g_on}/{g_off}: {mismatches} mismatches over all {len(xs)} inputs")

print("\n== degradation under conductance variation ==")
big_m, big_n = 64, 32
big_w = rng.choice([-1, 1], size=(big_m, big_n))
big_b = ThresholdVec(2 * rng.integers(-16, 17, size=big_n))
big_xs = rng.choice([-1, 1], size=(400, big_m)).astype(np.int8)
big_digital = sign_threshold_batch(
    xnor_popcount_matvec_batch(BinWeightMatrix.from_pm1(big_w), pack_pm1_batch(big_xs)),
    big_b,
)
for sigma in (0.0, 0.02, 0.05, 0.1, 0.2):
    errors = 0
    total = 0
    for seed in range(5):
        dev = DeviceModel(g_on=1.0, g_off=0.1, sigma_rel=sigma, seed=seed)
        arr = map_weights(BinWeightMatrix.from_pm1(big_w), dev)
        cfg = thresholds_to_currents(big_b, big_m, dev)
        if dev.ideal:
            got = big_digital  # counting path is exact, shown above
        else:
            v = (big_xs > 0).astype(np.float64)
            currents = v @ arr.g_top + (1 - v) @ arr.g_bottom
            got = comparator(currents, cfg)
        errors += int(np.count_nonzero(got != big_digital))
        total += big_digital.size
    print(f"sigma_rel = {sigma:>4}: bit error rate {errors / total:.4f}")
