"""Keyed transforms against dense-matrix oracles and exhaustive recovery."""

import numpy as np
import pytest

from pufbnn.bitops import BinWeightMatrix, BipolarVec, pack_pm1_batch, xnor_popcount_matvec_batch
from pufbnn.bnn import BnnModel, OutputLayer, ThresholdVec, forward, sign_threshold_batch
from pufbnn.errors import DimensionError
from pufbnn.protect import (
    DiagonalSpec,
    PermutationSpec,
    SchemeId,
    build_key_schedule,
    invert_column,
    key_length_bits,
    key_length_formula,
    protect_cols,
    protect_layer,
    protect_model,
    protect_rowinv_colswap,
    protect_rows,
    protected_forward,
    recover_column_output,
    recover_output_cols,
    scheme_from_name,
    transform_input_rows,
    unprotect,
    unprotect_layer,
)
from pufbnn.puf import PufDevice, puf_response

rng = np.random.default_rng(20240917)


# --- independent dense-matrix oracle -------------------------------------

def dense_perm(swap_bits, dim):
    """Permutation matrix built directly from the pairwise-swap definition."""
    p = np.eye(dim, dtype=np.int64)
    for i, bit in enumerate(np.asarray(swap_bits)):
        if bit:
            p[[2 * i, 2 * i + 1]] = p[[2 * i + 1, 2 * i]]
    return p


def dense_protect(w_pm1, b_vals, keys):
    """Oracle: W* = P_R D_R W P_C D_C and B* = D_C (P_C B) + 2R_C."""
    m, n = w_pm1.shape
    p_r = dense_perm(keys.row_swap, m)
    d_r = np.diag(1 - 2 * keys.row_inv.astype(np.int64))
    p_c = dense_perm(keys.col_swap, n)
    d_c = np.diag(1 - 2 * keys.col_inv.astype(np.int64))
    w_star = p_r @ d_r @ w_pm1 @ p_c @ d_c
    b_star = d_c @ (p_c @ b_vals) + 2 * keys.col_inv.astype(np.int64)
    return w_star, b_star, (p_r, d_r, p_c, d_c)


def random_layer(m, n, local_rng):
    w = local_rng.choice([-1, 1], size=(m, n)).astype(np.int64)
    b = 2 * local_rng.integers(-m // 2, m // 2 + 1, size=n).astype(np.int64)
    return w, b


def random_keys(m, n, scheme, seed):
    response = puf_response(PufDevice.generate(seed=seed), f"k{seed}".encode())
    return build_key_schedule(response, [(m, n)], [scheme]).layers[0]


# --- sign-recovery identities ----------------------------------------------

def test_eq10_identity_exhaustive():
    """(-1)^R sign((-1)^R s - 2R) == sign(s) for all even s, R in {0,1}."""
    for s in range(-20, 21, 2):
        want = 1 if s >= 0 else -1
        for r in (0, 1):
            inner = ((-1) ** r) * s - 2 * r
            got = ((-1) ** r) * (1 if inner >= 0 else -1)
            assert got == want, (s, r)


def test_invert_column_identity_and_flip():
    col = BipolarVec.from_pm1([1, -1, 1, 1])
    same_col, same_b = invert_column(col, 4, 0)
    assert same_col == col and same_b == 4
    flipped, b_star = invert_column(col, 4, 1)
    assert flipped.to_pm1().tolist() == [-1, 1, -1, -1]
    assert b_star == -2  # (1 - 2*1)*4 + 2


def test_invert_column_rejects_odd_threshold():
    with pytest.raises(ValueError):
        invert_column(BipolarVec.from_pm1([1, 1]), 3, 1)


def test_invert_column_recovery_exhaustive():
    """Full single-column pipeline equals sign(s) for every even s."""
    for r in (0, 1):
        for s in range(-10, 11, 2):
            # choose y and B with y - B = s; column of +1s, input of +1s
            m, y = 10, 10
            b = y - s
            col = BipolarVec.from_pm1([1] * m)
            x = np.ones(m, dtype=np.int64)
            col_star, b_star = invert_column(col, b, r)
            y_star = int(col_star.to_pm1() @ x)
            protected_bit = 1 if y_star - b_star >= 0 else -1
            assert recover_column_output(protected_bit, r) == (1 if s >= 0 else -1)


def test_recover_column_output_cases():
    assert recover_column_output(1, 0) == 1
    assert recover_column_output(1, 1) == -1
    assert recover_column_output(-1, 1) == 1


# --- spec representations --------------------------------------------------

def test_permutation_self_inverse():
    for dim in (2, 4, 6, 10, 7):  # odd dims leave the tail fixed
        bits = rng.integers(0, 2, size=dim // 2).astype(np.uint8)
        p = PermutationSpec(dim, bits).as_matrix()
        assert np.array_equal(p @ p, np.eye(dim, dtype=np.int64))
        assert np.array_equal(p, p.T)


def test_permutation_fixed_points_match_zero_bits():
    spec = PermutationSpec(6, np.array([1, 0, 1], dtype=np.uint8))
    assert spec.index_map.tolist() == [1, 0, 2, 3, 5, 4]


def test_diagonal_is_involution():
    bits = rng.integers(0, 2, size=9).astype(np.uint8)
    d = DiagonalSpec(9, bits).as_matrix()
    assert np.array_equal(d @ d, np.eye(9, dtype=np.int64))


# --- scheme ops vs the dense oracle ----------------------------------------

@pytest.mark.parametrize("scheme", list(SchemeId))
def test_protect_layer_matches_dense_oracle(scheme):
    for trial in range(25):
        m = int(rng.choice([2, 4, 6, 8, 10]))
        n = int(rng.integers(1, 9))
        w, b = random_layer(m, n, rng)
        keys = random_keys(m, n, scheme, seed=trial * 13 + scheme.value)
        w_star, b_star = protect_layer(
            BinWeightMatrix.from_pm1(w), ThresholdVec(b), keys
        )
        oracle_w, oracle_b, _ = dense_protect(w, b, keys)
        assert np.array_equal(w_star.to_pm1(), oracle_w)
        assert np.array_equal(b_star.values, oracle_b)


@pytest.mark.parametrize("scheme", list(SchemeId))
def test_exact_recovery_exhaustive_small_dims(scheme):
    """Protected pipeline == plain pipeline on all inputs, zero tolerance."""
    for trial in range(20):
        m = int(rng.choice([2, 4, 6, 8]))
        n = int(rng.integers(1, 9))
        w, b = random_layer(m, n, rng)
        keys = random_keys(m, n, scheme, seed=trial * 7 + scheme.value)
        w_star, b_star = protect_layer(BinWeightMatrix.from_pm1(w), ThresholdVec(b), keys)
        _, _, (p_r, d_r, p_c, d_c) = dense_protect(w, b, keys)
        xs = np.where((np.arange(2**m)[:, None] >> np.arange(m)) & 1, 1, -1)
        plain = sign_threshold_batch(
            xnor_popcount_matvec_batch(BinWeightMatrix.from_pm1(w), pack_pm1_batch(xs)),
            ThresholdVec(b),
        )
        x_star = xs @ (p_r @ d_r).T  # beta via the dense oracle
        prot = sign_threshold_batch(
            xnor_popcount_matvec_batch(w_star, pack_pm1_batch(x_star.astype(np.int8))),
            b_star,
        )
        recovered = np.where(prot, 1, -1) @ (p_c @ d_c).T > 0  # psi via the oracle
        assert np.array_equal(recovered, plain), (scheme, m, n, trial)


def test_protect_rows_zero_key_is_identity():
    w, b = random_layer(6, 4, rng)
    w_star, b_star = protect_rows(
        BinWeightMatrix.from_pm1(w), ThresholdVec(b),
        np.zeros(3, dtype=np.uint8), np.zeros(6, dtype=np.uint8),
    )
    assert np.array_equal(w_star.to_pm1(), w)
    assert np.array_equal(b_star.values, b)


def test_protect_rows_hand_example():
    """swap_bits=(1,0), no inversion: rows reorder to r1, r0, r2, r3."""
    w = np.array([[1, 1], [-1, 1], [1, -1], [-1, -1]])
    w_star, b_star = protect_rows(
        BinWeightMatrix.from_pm1(w), ThresholdVec([0, 0]),
        np.array([1, 0], dtype=np.uint8), np.zeros(4, dtype=np.uint8),
    )
    assert np.array_equal(w_star.to_pm1(), w[[1, 0, 2, 3]])
    assert b_star.values.tolist() == [0, 0]  # row transforms never touch B


def test_protect_rows_changes_weights_with_high_probability():
    changed = 0
    for trial in range(100):
        local = np.random.default_rng(trial)
        w, b = random_layer(8, 4, local)
        keys = random_keys(8, 4, SchemeId.ROW_SWAP_INV, seed=trial + 500)
        w_star, _ = protect_rows(BinWeightMatrix.from_pm1(w), ThresholdVec(b),
                                 keys.row_swap, keys.row_inv)
        changed += not np.array_equal(w_star.to_pm1(), w)
    assert changed >= 99  # identity requires an all-zero 12-bit key draw


def test_transform_input_rows_preserves_products():
    """(W*)^T x* == W^T x exactly, for random keys and inputs."""
    for trial in range(50):
        m, n = 8, 5
        w, b = random_layer(m, n, rng)
        keys = random_keys(m, n, SchemeId.ROW_SWAP_INV, seed=trial)
        w_star, _ = protect_rows(BinWeightMatrix.from_pm1(w), ThresholdVec(b),
                                 keys.row_swap, keys.row_inv)
        x = rng.choice([-1, 1], size=m)
        x_star = transform_input_rows(BipolarVec.from_pm1(x), keys.row_swap, keys.row_inv)
        assert np.array_equal(w_star.to_pm1().T @ x_star.to_pm1(), w.T @ x)


def test_transform_input_rows_zero_key_identity():
    x = BipolarVec.from_pm1([1, -1, -1, 1])
    out = transform_input_rows(x, np.zeros(2, dtype=np.uint8), np.zeros(4, dtype=np.uint8))
    assert out == x


def test_wrong_row_key_breaks_products():
    """One flipped key bit must change some product (W*)^T x*."""
    m, n = 8, 5
    w, b = random_layer(m, n, np.random.default_rng(1))
    keys = random_keys(m, n, SchemeId.ROW_SWAP_INV, seed=99)
    w_star, _ = protect_rows(BinWeightMatrix.from_pm1(w), ThresholdVec(b),
                             keys.row_swap, keys.row_inv)
    bad_inv = keys.row_inv.copy()
    bad_inv[3] ^= 1
    found_mismatch = False
    for code in range(2**m):
        x = np.where((code >> np.arange(m)) & 1, 1, -1)
        x_star = transform_input_rows(BipolarVec.from_pm1(x), keys.row_swap, bad_inv)
        if not np.array_equal(w_star.to_pm1().T @ x_star.to_pm1(), w.T @ x):
            found_mismatch = True
            break
    assert found_mismatch


def test_protect_cols_zero_key_identity():
    w, b = random_layer(4, 4, rng)
    w_star, b_star = protect_cols(
        BinWeightMatrix.from_pm1(w), ThresholdVec(b),
        np.zeros(2, dtype=np.uint8), np.zeros(4, dtype=np.uint8),
    )
    assert np.array_equal(w_star.to_pm1(), w)
    assert np.array_equal(b_star.values, b)


def test_protect_cols_hand_example():
    """n=2, swap=(1), inv=(0,1), B=(2,4): swap then negate new column 1."""
    w = np.array([[1, -1], [1, 1], [-1, 1], [-1, -1]])
    w_star, b_star = protect_cols(
        BinWeightMatrix.from_pm1(w), ThresholdVec([2, 4]),
        np.array([1], dtype=np.uint8), np.array([0, 1], dtype=np.uint8),
    )
    assert b_star.values.tolist() == [4, 0]  # (B[1], -B[0] + 2)
    expected = np.column_stack([w[:, 1], -w[:, 0]])
    assert np.array_equal(w_star.to_pm1(), expected)


def test_recover_output_cols_zero_key_identity():
    bits = BipolarVec.from_pm1([1, -1, 1])
    out = recover_output_cols(bits, np.zeros(1, dtype=np.uint8), np.zeros(3, dtype=np.uint8))
    assert out == bits


def test_recover_output_cols_single_column_reduces_to_primitive():
    for r in (0, 1):
        for bit in (1, -1):
            vec = BipolarVec.from_pm1([bit])
            out = recover_output_cols(
                vec, np.zeros(0, dtype=np.uint8), np.array([r], dtype=np.uint8)
            )
            assert out.to_pm1()[0] == recover_column_output(bit, r)


def test_rowinv_colswap_reduces_to_row_scheme_when_swap_zero():
    w, b = random_layer(6, 4, rng)
    inv = rng.integers(0, 2, size=6).astype(np.uint8)
    via_combo, b_combo = protect_rowinv_colswap(
        BinWeightMatrix.from_pm1(w), ThresholdVec(b), inv, np.zeros(2, dtype=np.uint8)
    )
    via_rows, b_rows = protect_rows(
        BinWeightMatrix.from_pm1(w), ThresholdVec(b), np.zeros(3, dtype=np.uint8), inv
    )
    assert via_combo == via_rows
    assert np.array_equal(b_combo.values, b_rows.values)


def test_scheme_op_length_validation():
    w, b = random_layer(4, 4, rng)
    with pytest.raises(DimensionError):
        protect_rows(BinWeightMatrix.from_pm1(w), ThresholdVec(b),
                     np.zeros(3, dtype=np.uint8), np.zeros(4, dtype=np.uint8))
    with pytest.raises(DimensionError):
        protect_cols(BinWeightMatrix.from_pm1(w), ThresholdVec(b),
                     np.zeros(2, dtype=np.uint8), np.zeros(5, dtype=np.uint8))


def test_unprotect_layer_round_trip_all_schemes():
    for scheme in SchemeId:
        for trial in range(10):
            m = int(rng.choice([2, 4, 6, 8]))
            n = int(rng.integers(1, 9))
            w, b = random_layer(m, n, rng)
            keys = random_keys(m, n, scheme, seed=trial + 31 * scheme.value)
            packed_w, packed_b = BinWeightMatrix.from_pm1(w), ThresholdVec(b)
            w_star, b_star = protect_layer(packed_w, packed_b, keys)
            w_back, b_back = unprotect_layer(w_star, b_star, keys)
            assert w_back == packed_w and b_back == packed_b


# --- key schedule -----------------------------------------------------------

def test_key_length_formulas_match_tables():
    # rows scheme, fan-in 784: swap 392 + inversion 784
    assert key_length_formula(SchemeId.ROW_SWAP_INV, 784, 512) == "392+784"
    assert key_length_formula(SchemeId.ROW_SWAP_INV, 512, 512) == "256+512"
    # column scheme, width 512
    assert key_length_formula(SchemeId.COL_SWAP_INV, 784, 512) == "256+512"
    # combined scheme on FC1 and FC3
    assert key_length_formula(SchemeId.ROW_INV_COL_SWAP, 784, 512) == "784+256"
    assert key_length_formula(SchemeId.ROW_INV_COL_SWAP, 512, 512) == "512+256"
    assert key_length_bits(SchemeId.ROW_SWAP_INV, 784, 512) == 392 + 784
    assert key_length_bits(SchemeId.COL_SWAP_INV, 512, 512) == 256 + 512
    assert key_length_bits(SchemeId.ROW_INV_COL_SWAP, 512, 512) == 512 + 256


def test_schedule_bit_lengths_match_scheme():
    response = puf_response(PufDevice.generate(seed=77), b"sched")
    shape = [(784, 512), (512, 512), (512, 512)]
    schemes = [SchemeId.ROW_SWAP_INV, SchemeId.COL_SWAP_INV, SchemeId.ROW_INV_COL_SWAP]
    schedule = build_key_schedule(response, shape, schemes)
    spans = schedule.in_use_lengths()
    assert spans == [
        (0, "rowswap", 392), (0, "rowinv", 784),
        (1, "colswap", 256), (1, "colinv", 512),
        (2, "rowinv", 512), (2, "colswap", 256),
    ]
    assert schedule.total_in_use_bits == 392 + 784 + 256 + 512 + 512 + 256


def test_schedule_reuse_mode_shares_key_halves():
    response = puf_response(PufDevice.generate(seed=78), b"reuse")
    schedule = build_key_schedule(
        response, [(8, 6)], [SchemeId.ROW_SWAP_INV], reuse=True
    )
    keys = schedule.layers[0]
    assert np.array_equal(keys.row_swap, keys.row_inv[:4])
    assert key_length_bits(SchemeId.ROW_SWAP_INV, 8, 6, reuse=True) == 8


def test_schedule_flip_bits_round_trip():
    response = puf_response(PufDevice.generate(seed=79), b"flip")
    schedule = build_key_schedule(response, [(8, 6)], [SchemeId.ROW_SWAP_INV])
    flipped = schedule.flip_bits([0, 5, 11])
    assert flipped.layers[0].row_swap[0] != schedule.layers[0].row_swap[0]
    assert flipped.layers[0].row_inv[1] != schedule.layers[0].row_inv[1]
    back = flipped.flip_bits([0, 5, 11])
    assert np.array_equal(back.layers[0].row_inv, schedule.layers[0].row_inv)
    assert np.array_equal(back.layers[0].row_swap, schedule.layers[0].row_swap)


def test_scheme_names_round_trip():
    for name in ("rows", "cols", "rowinv-colswap", "none"):
        assert scheme_from_name(name) is not None
    with pytest.raises(ValueError):
        scheme_from_name("diagonal")


# --- whole-model protection -------------------------------------------------

def _toy_model(seed=0):
    local = np.random.default_rng(seed)
    w1, b1 = random_layer(6, 4, local)
    w2, b2 = random_layer(4, 4, local)
    wh = local.choice([-1, 1], size=(4, 3))
    bh = local.integers(-2, 3, size=3)
    return BnnModel(
        [(BinWeightMatrix.from_pm1(w1), ThresholdVec(b1)),
         (BinWeightMatrix.from_pm1(w2), ThresholdVec(b2))],
        OutputLayer(BinWeightMatrix.from_pm1(wh), bh),
    )


@pytest.mark.parametrize("scheme", [SchemeId.ROW_SWAP_INV, SchemeId.COL_SWAP_INV,
                                    SchemeId.ROW_INV_COL_SWAP, SchemeId.NONE])
def test_protected_forward_equals_plain_forward_exhaustive(scheme):
    model = _toy_model()
    device = PufDevice.generate(seed=4242)
    pm = protect_model(model, device, b"chal", scheme)
    for code in range(2**6):
        x = BipolarVec.from_pm1(np.where((code >> np.arange(6)) & 1, 1, -1))
        assert protected_forward(pm, device, x) == forward(model, x)


def test_protect_model_subset_of_layers():
    model = _toy_model(seed=5)
    device = PufDevice.generate(seed=55)
    pm = protect_model(model, device, b"c", SchemeId.COL_SWAP_INV, layer_indices=[1])
    assert pm.layers[0].scheme == SchemeId.NONE
    assert pm.layers[1].scheme == SchemeId.COL_SWAP_INV
    # untouched layer stores plain parameters
    assert pm.layers[0].w_star == model.layers[0][0]
    x = BipolarVec.from_pm1([1, -1, 1, 1, -1, -1])
    assert protected_forward(pm, device, x) == forward(model, x)


def test_unprotect_recovers_original_model():
    model = _toy_model(seed=6)
    device = PufDevice.generate(seed=66)
    pm = protect_model(model, device, b"c6", SchemeId.ROW_INV_COL_SWAP)
    assert unprotect(pm, device) == model


def test_wrong_device_changes_some_prediction():
    model = _toy_model(seed=7)
    right = PufDevice.generate(seed=700)
    wrong = PufDevice.generate(seed=701)
    pm = protect_model(model, right, b"c7", SchemeId.ROW_SWAP_INV)
    mismatches = sum(
        protected_forward(pm, wrong, BipolarVec.from_pm1(np.where((c >> np.arange(6)) & 1, 1, -1)))
        != forward(model, BipolarVec.from_pm1(np.where((c >> np.arange(6)) & 1, 1, -1)))
        for c in range(2**6)
    )
    assert mismatches > 0  # silently wrong, never raising


def test_protected_model_carries_no_key_material():
    model = _toy_model(seed=8)
    device = PufDevice.generate(seed=800)
    pm = protect_model(model, device, b"public-challenge", SchemeId.COL_SWAP_INV)
    assert pm.challenge == b"public-challenge"
    assert set(pm.__slots__) == {"layers", "output_layer", "challenge", "reuse", "key_bits"}


def test_distinct_responses_give_distinct_protected_models():
    """100 response pairs on a W with rows/cols distinct up to negation."""
    local = np.random.default_rng(123)
    while True:
        w = local.choice([-1, 1], size=(12, 10)).astype(np.int64)
        rows = {tuple(r) for r in w} | {tuple(-r) for r in w}
        cols = {tuple(c) for c in w.T} | {tuple(-c) for c in w.T}
        if len(rows) == 2 * 12 and len(cols) == 2 * 10:
            break
    b = 2 * local.integers(-3, 4, size=10)
    packed_w, packed_b = BinWeightMatrix.from_pm1(w), ThresholdVec(b)
    for scheme in (SchemeId.ROW_SWAP_INV, SchemeId.COL_SWAP_INV, SchemeId.ROW_INV_COL_SWAP):
        for pair in range(100):
            ka = random_keys(12, 10, scheme, seed=2000 + 2 * pair)
            kb = random_keys(12, 10, scheme, seed=2001 + 2 * pair)
            wa, ba = protect_layer(packed_w, packed_b, ka)
            wb, bb = protect_layer(packed_w, packed_b, kb)
            assert not (wa == wb and np.array_equal(ba.values, bb.values)), (scheme, pair)
