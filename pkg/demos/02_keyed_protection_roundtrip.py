"""The protection mechanism end to end on one layer.

Shows the column-inversion primitive, the three transformation schemes,
exact recovery with the right key, and garbage with a wrong key.
"""

import numpy as np

from pufbnn import BinWeightMatrix, PufDevice, ThresholdVec
from pufbnn.bitops import pack_pm1_batch, xnor_popcount_matvec_batch
from pufbnn.bnn import sign_threshold_batch
from pufbnn.protect import (
    SchemeId,
    build_key_schedule,
    invert_column,
    protect_layer,
    recover_column_output,
    _beta_batch,
    _psi_batch,
)
from pufbnn.puf import puf_response

rng = np.random.default_rng(7)

print("== the per-column primitive ==")
from pufbnn import BipolarVec

col = BipolarVec.from_pm1([1, 1, -1, 1])
b_k = 2
for r in (0, 1):
    col_star, b_star = invert_column(col, b_k, r)
    print(f"R={r}: column {col.to_pm1().tolist()} -> {col_star.to_pm1().tolist()}, "
          f"B {b_k} -> {b_star}")
x = np.array([1, -1, -1, 1])
for r in (0, 1):
    col_star, b_star = invert_column(col, b_k, r)
    y_star = int(col_star.to_pm1() @ x)
    bit = recover_column_output(1 if y_star - b_star >= 0 else -1, r)
    plain = 1 if int(col.to_pm1() @ x) - b_k >= 0 else -1
    print(f"R={r}: recovered bit {bit}, plain bit {plain}")

print("\n== whole-layer schemes ==")
m, n = 8, 6
w = BinWeightMatrix.from_pm1(rng.choice([-1, 1], size=(m, n)))
b = ThresholdVec(2 * rng.integers(-3, 4, size=n))
device = PufDevice.generate(seed=11)
challenge = b"demo-challenge"
xs = np.where((np.arange(2**m)[:, None] >> np.arange(m)) & 1, 1, -1).astype(np.int8)
plain = sign_threshold_batch(xnor_popcount_matvec_batch(w, pack_pm1_batch(xs)), b)

for scheme in (SchemeId.ROW_SWAP_INV, SchemeId.COL_SWAP_INV, SchemeId.ROW_INV_COL_SWAP):
    keys = build_key_schedule(
        puf_response(device, challenge), [(m, n)], [scheme]
    ).layers[0]
    w_star, b_star = protect_layer(w, b, keys)
    stored_differs = not np.array_equal(w_star.to_pm1(), w.to_pm1())

    x_star = _beta_batch(xs > 0, keys)
    y_star = xnor_popcount_matvec_batch(
        w_star, pack_pm1_batch(np.where(x_star, 1, -1).astype(np.int8))
    )
    recovered = _psi_batch(sign_threshold_batch(y_star, b_star), keys)
    exact = np.array_equal(recovered, plain)

    wrong = build_key_schedule(
        puf_response(PufDevice.generate(seed=12), challenge), [(m, n)], [scheme]
    ).layers[0]
    x_wrong = _beta_batch(xs > 0, wrong)
    y_wrong = xnor_popcount_matvec_batch(
        w_star, pack_pm1_batch(np.where(x_wrong, 1, -1).astype(np.int8))
    )
    garbled = _psi_batch(sign_threshold_batch(y_wrong, b_star), wrong)
    wrong_rate = float(np.mean(garbled != plain))

    print(f"{scheme.name:18s} stored differs: {stored_differs}, "
          f"right key exact over all {len(xs)} inputs: {exact}, "
          f"wrong-key bit error rate: {wrong_rate:.2f}")
