"""Packed bipolar arithmetic: how a BNN layer becomes XOR + popcount.

Walks through the storage format, the dot-product identity, the comparator
activation, and batch-norm folding into even integer thresholds.
"""

import numpy as np

from pufbnn import BinWeightMatrix, BipolarVec, ThresholdVec
from pufbnn.bnn import fold_batchnorm, sign_threshold
from pufbnn.bitops import xnor_popcount_matvec

rng = np.random.default_rng(1)

print("== packing ==")
x = BipolarVec.from_pm1([1, -1, -1, 1, 1, -1])
print(f"vector {x.to_pm1().tolist()} packs into words {[hex(int(w)) for w in x.words]}")
print("bit=1 encodes +1, bit=0 encodes -1, little-endian within each 64-bit word")

print("\n== xnor-popcount matvec ==")
w_pm1 = rng.choice([-1, 1], size=(6, 3))
w = BinWeightMatrix.from_pm1(w_pm1)
y = xnor_popcount_matvec(w, x)
naive = w_pm1.T @ x.to_pm1()
print(f"packed kernel:  y = {y.tolist()}")
print(f"naive products: y = {naive.tolist()}")
assert np.array_equal(y, naive)
print("they agree: <w, x> = m - 2*popcount(w XOR x) on the packed bits")
print(f"parity: every y_k here is even because the fan-in m=6 is even: {y % 2}")

print("\n== comparator activation ==")
b = ThresholdVec([0, 2, -2])
bits = sign_threshold(y, b)
print(f"sign(y - B) with B={b.values.tolist()} -> {bits.to_pm1().tolist()} (sign(0) = +1)")

print("\n== folding batch norm into thresholds ==")
gamma, beta, mu, var = [1.5], [-0.8], [2.1], [4.0]
b_folded, flip = fold_batchnorm(gamma, beta, mu, var, eps=1e-5, m=6)
t = mu[0] - beta[0] * np.sqrt(var[0] + 1e-5) / gamma[0]
print(f"real boundary t = mu - beta*sqrt(var+eps)/gamma = {t:.4f}")
print(f"folded even threshold B = {b_folded.values.tolist()}, column flip = {flip.tolist()}")
for y_val in range(-6, 7, 2):
    bn = gamma[0] * (y_val - mu[0]) / np.sqrt(var[0] + 1e-5) + beta[0]
    assert (bn >= 0) == (y_val - b_folded.values[0] >= 0)
print("decisions match real-valued batch norm on every even pre-activation")
print("(rounding toward an attainable even y emits RoundingGapWarning instead)")
