"""Model-theft evaluation harness.

The attacker of the threat model holds the protected parameters (W*, B*)
and the public challenge but can never query the PUF. Their best in-model
strategy is to run inference on the stolen parameters as-is, so
eval_without_key scores exactly that. eval_with_wrong_key extends the
no-key attack to key sensitivity by flipping chosen schedule bits.
report_tables reproduces the three accuracy-degradation tables over a
trained model, one row per protected-layer choice.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .bnn import BnnModel, evaluate
from .data import Dataset, binarize_batch
from .errors import EmptyDatasetError
from .protect import (
    ProtectedModel,
    PufDevice,
    SchemeId,
    as_plain_model,
    forward_batch_with_schedule,
    key_length_bits,
    key_length_formula,
    protect_model,
    scheme_name,
)

TABLE_ROWS = (("None", ()), ("FC 1", (0,)), ("FC 2", (1,)), ("FC 3", (2,)),
              ("FC 1,2,3", (0, 1, 2)))


def eval_without_key(pm: ProtectedModel, dataset: Dataset, t_pix: float = 0.5) -> float:
    """Accuracy of the stolen model run with all transforms as identity."""
    return evaluate(as_plain_model(pm), dataset, t_pix)


def eval_with_wrong_key(pm: ProtectedModel, device: PufDevice, dataset: Dataset,
                        flipped_bits: int, trials: int = 5, seed: int = 0,
                        t_pix: float = 0.5):
    """Accuracy statistics when `flipped_bits` random key bits are wrong.

    Returns a dict with mean/min/max over `trials` independent flip draws.
    flipped_bits == 0 reproduces the correct-key accuracy exactly.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty dataset")
    schedule = pm.schedule(device)
    total = schedule.total_in_use_bits
    if flipped_bits < 0 or flipped_bits > total:
        raise ValueError(f"flipped_bits must lie in [0, {total}], got {flipped_bits}")
    x = binarize_batch(dataset.images, t_pix)
    rng = np.random.default_rng(seed)
    accs = []
    for _ in range(max(1, trials) if flipped_bits else 1):
        trial_schedule = schedule
        if flipped_bits:
            positions = rng.choice(total, size=flipped_bits, replace=False)
            trial_schedule = schedule.flip_bits(positions)
        preds = forward_batch_with_schedule(pm, trial_schedule, x)
        accs.append(float(np.count_nonzero(preds == dataset.labels) / len(dataset)))
    return {
        "mean": float(np.mean(accs)),
        "min": float(np.min(accs)),
        "max": float(np.max(accs)),
        "accuracies": accs,
    }


@dataclass(frozen=True)
class TableRow:
    scheme: str
    protected_layers: str
    key_length_formula: str
    key_length_bits: int
    accuracy_mean: float
    accuracy_min: float
    accuracy_max: float
    seeds: int


def _row_key_length(scheme: SchemeId, shapes, layer_indices):
    """Key-length cell for one table row: formula string and total bits."""
    if not layer_indices:
        return "0", 0
    parts = [key_length_formula(scheme, *shapes[i]) for i in layer_indices]
    total = sum(key_length_bits(scheme, *shapes[i]) for i in layer_indices)
    return "+".join(parts), total


def report_tables(model: BnnModel, device: PufDevice, dataset: Dataset, out_csv=None,
                  seeds: int = 5, t_pix: float = 0.5,
                  schemes=(SchemeId.ROW_SWAP_INV, SchemeId.COL_SWAP_INV,
                           SchemeId.ROW_INV_COL_SWAP)):
    """No-key degradation tables for every (scheme, protected layers) cell.

    Each protected cell is measured over `seeds` independent challenges on
    the same device; the baseline row is the plain model's exact accuracy.
    Returns the rows; writes CSV to out_csv when given.
    """
    shapes = [(w.rows, w.cols) for w, _ in model.layers]
    baseline = evaluate(model, dataset, t_pix)
    rows = []
    for scheme in schemes:
        name = scheme_name(scheme)
        for row_label, layer_indices in TABLE_ROWS:
            formula, total_bits = _row_key_length(scheme, shapes, layer_indices)
            if not layer_indices:
                rows.append(TableRow(name, row_label, formula, total_bits,
                                     baseline, baseline, baseline, 0))
                continue
            accs = []
            for s in range(seeds):
                challenge = f"table:{name}:{row_label}:seed{s}".encode()
                pm = protect_model(model, device, challenge, scheme, layer_indices)
                accs.append(eval_without_key(pm, dataset, t_pix))
            rows.append(TableRow(
                name, row_label, formula, total_bits,
                float(np.mean(accs)), float(np.min(accs)), float(np.max(accs)), seeds,
            ))
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scheme", "protected_layers", "key_length_formula",
                             "key_length_bits", "accuracy_mean", "accuracy_min",
                             "accuracy_max", "seeds"])
            for r in rows:
                writer.writerow([r.scheme, r.protected_layers, r.key_length_formula,
                                 r.key_length_bits, f"{r.accuracy_mean:.6f}",
                                 f"{r.accuracy_min:.6f}", f"{r.accuracy_max:.6f}", r.seeds])
    return rows


def format_tables(rows) -> str:
    """Aligned text rendering of report_tables output, one block per scheme."""
    out = io.StringIO()
    headers = ["Protected layers", "Secret key length", "Accuracy w/o key (mean)",
               "min", "max"]
    for scheme in dict.fromkeys(r.scheme for r in rows):
        block = [r for r in rows if r.scheme == scheme]
        print(f"scheme: {scheme}", file=out)
        table = [headers] + [
            [r.protected_layers, r.key_length_formula,
             f"{100 * r.accuracy_mean:.2f}%", f"{100 * r.accuracy_min:.2f}%",
             f"{100 * r.accuracy_max:.2f}%"]
            for r in block
        ]
        widths = [max(len(row[c]) for row in table) for c in range(len(headers))]
        for row in table:
            print("  " + "  ".join(cell.ljust(w) for cell, w in zip(row, widths)),
                  file=out)
        print(file=out)
    return out.getvalue()
