"""Command-line entry point wiring the library end to end.

Exit codes: 0 success, 2 usage, 3 data/format error, 4 verification failure.
"""

from __future__ import annotations

import argparse
import binascii
import sys

import numpy as np

from . import attack, data
from .bnn import forward_batch
from .crossbar import DeviceModel, crossbar_forward_batch
from .errors import PufBnnError
from .modelio import read_model, read_protected, write_model, write_protected
from .protect import (
    protect_model,
    protected_forward_batch,
    scheme_from_name,
    unprotect,
)
from .puf import PufDevice
from .train import TrainConfig, finalize, train_ste

USAGE_ERROR, DATA_ERROR, VERIFY_ERROR = 2, 3, 4


def _load_dataset(args) -> data.Dataset:
    return data.load_split(args.data_dir, args.split)


def _add_dataset_args(p):
    p.add_argument("--data-dir", required=True, help="directory with MNIST-style IDX files")
    p.add_argument("--split", choices=["train", "test"], default="test")


def _add_crossbar_args(p):
    p.add_argument("--g-on", type=float, default=1.0, help="on-state conductance")
    p.add_argument("--g-off", type=float, default=0.0, help="off-state conductance")
    p.add_argument("--sigma-rel", type=float, default=0.0, help="relative conductance variation")
    p.add_argument("--device-seed", type=int, default=0, help="seed for conductance variation")


def _device_model(args) -> DeviceModel:
    return DeviceModel(args.g_on, args.g_off, args.sigma_rel, args.device_seed)


def cmd_train(args) -> int:
    if args.synthetic:
        train_set = data.synthetic_digits(args.synthetic, seed=args.seed)
        test_set = data.synthetic_digits(max(args.synthetic // 5, 10), seed=args.seed + 1)
    else:
        train_set = data.load_split(args.data_dir, "train")
        test_set = data.load_split(args.data_dir, "test")
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         learning_rate=args.lr, seed=args.seed, t_pix=args.t_pix)
    shadow, history = train_ste(config, train_set, test_set)
    model = finalize(shadow)
    write_model(model, args.out)
    for epoch, acc in enumerate(history, 1):
        print(f"epoch {epoch}: test accuracy {acc:.4f}")
    print(f"wrote {args.out} (final test accuracy {history[-1]:.4f})")
    return 0


def cmd_device(args) -> int:
    if args.action != "new":
        raise PufBnnError(f"unknown device action {args.action!r}")
    PufDevice.generate(args.seed).save(args.out)
    print(f"wrote device file {args.out}")
    return 0


def _parse_layers(selector: str, n_layers: int):
    if selector == "all":
        return list(range(n_layers))
    return [int(tok) - 1 for tok in selector.split(",")]


def cmd_protect(args) -> int:
    model = read_model(args.model)
    device = PufDevice.load(args.device)
    challenge = binascii.unhexlify(args.challenge)
    scheme = scheme_from_name(args.scheme)
    layer_indices = _parse_layers(args.layers, len(model.layers))
    pm = protect_model(model, device, challenge, scheme, layer_indices, reuse=args.reuse)
    write_protected(pm, args.out)
    lengths = [b for b in pm.key_bits if b]
    print(f"wrote {args.out} (scheme {args.scheme}, layers {args.layers}, "
          f"key bits per layer {lengths})")
    return 0


def _load_input(args) -> np.ndarray:
    path = args.input
    if path.endswith((".png", ".pgm", ".bmp")):
        from PIL import Image

        img = np.asarray(Image.open(path).convert("L"))
        if img.shape != (28, 28):
            raise PufBnnError(f"expected a 28x28 grayscale image, got {img.shape}")
        return img.reshape(1, -1)
    images, dims = data._parse_idx(data._read_file(path), data.IMAGE_MAGIC, path)
    flat = images.reshape(dims[0], -1)
    if not 0 <= args.index < dims[0]:
        raise PufBnnError(f"--index {args.index} out of range 0..{dims[0] - 1}")
    return flat[args.index : args.index + 1]


def cmd_infer(args) -> int:
    x = data.binarize_batch(_load_input(args), args.t_pix)
    if args.model.endswith(".bnnp"):
        pm = read_protected(args.model)
        if args.device is None:
            print("warning: protected model without --device; running the "
                  "attacker path on raw protected parameters", file=sys.stderr)
            model = attack.as_plain_model(pm)
            if args.backend == "crossbar":
                pred = crossbar_forward_batch(pm, _device_model(args), x)[0]
            else:
                pred = forward_batch(model, x)[0]
        else:
            device = PufDevice.load(args.device)
            if args.backend == "crossbar":
                pred = crossbar_forward_batch(pm, _device_model(args), x, device)[0]
            else:
                pred = protected_forward_batch(pm, device, x)[0]
    else:
        model = read_model(args.model)
        if args.backend == "crossbar":
            pred = crossbar_forward_batch(model, _device_model(args), x)[0]
        else:
            pred = forward_batch(model, x)[0]
    print(int(pred))
    return 0


def cmd_attack_eval(args) -> int:
    pm = read_protected(args.model)
    dataset = _load_dataset(args)
    acc = attack.eval_without_key(pm, dataset)
    lines = [("no_key", f"{acc:.6f}", "-", "-")]
    if args.device is not None:
        device = PufDevice.load(args.device)
        total = pm.schedule(device).total_in_use_bits
        for flips in (1, 8, 64, total):
            stats = attack.eval_with_wrong_key(pm, device, dataset, flips,
                                               trials=args.seeds, seed=args.seed)
            lines.append((f"wrong_key_{flips}_flips", f"{stats['mean']:.6f}",
                          f"{stats['min']:.6f}", f"{stats['max']:.6f}"))
    with open(args.out, "w") as fh:
        fh.write("attack,accuracy_mean,accuracy_min,accuracy_max\n")
        for row in lines:
            fh.write(",".join(row) + "\n")
    for row in lines:
        print(f"{row[0]}: mean {row[1]} min {row[2]} max {row[3]}")
    print(f"wrote {args.out}")
    return 0


def cmd_tables(args) -> int:
    model = read_model(args.model)
    device = PufDevice.load(args.device)
    dataset = _load_dataset(args)
    rows = attack.report_tables(model, device, dataset, out_csv=args.out, seeds=args.seeds)
    print(attack.format_tables(rows), end="")
    print(f"wrote {args.out}")
    return 0


def cmd_verify(args) -> int:
    pm = read_protected(args.model)
    device = PufDevice.load(args.device)
    dataset = _load_dataset(args)
    reference = read_model(args.plain) if args.plain else unprotect(pm, device)
    x = data.binarize_batch(dataset.images, args.t_pix)
    ref_preds = forward_batch(reference, x)
    backends = ["digital", "crossbar"] if args.backend == "both" else [args.backend]
    for backend in backends:
        if backend == "crossbar":
            preds = crossbar_forward_batch(pm, _device_model(args), x, device)
        else:
            preds = protected_forward_batch(pm, device, x)
        mismatches = int(np.count_nonzero(preds != ref_preds))
        if mismatches:
            print(f"FAIL [{backend}]: {mismatches} of {len(dataset)} predictions differ")
            return VERIFY_ERROR
        print(f"OK [{backend}]: protected model matches on all {len(dataset)} samples")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pufbnn",
        description="Train, protect and run binarized neural networks whose "
                    "weights are encrypted with a PUF-derived key.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a BNN and write a .bnnm model file")
    p.add_argument("--data-dir", help="directory with MNIST IDX files (may be gzipped)")
    p.add_argument("--synthetic", type=int, default=0, metavar="N",
                   help="train on N synthetic samples per class instead of --data-dir")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-pix", type=float, default=0.5, help="input binarization threshold")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("device", help="manage PUF device files")
    p.add_argument("action", choices=["new"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="deterministic secret for tests; default is OS entropy")
    p.set_defaults(func=cmd_device)

    p = sub.add_parser("protect", help="encrypt a model's weights with a device key")
    p.add_argument("--model", required=True)
    p.add_argument("--device", required=True)
    p.add_argument("--challenge", required=True, help="hex string, stored with the model")
    p.add_argument("--scheme", required=True,
                   choices=["rows", "cols", "rowinv-colswap", "rowinv", "colinv",
                            "rowswap", "colswap"])
    p.add_argument("--layers", default="all", help="'all' or comma list like 1,2,3")
    p.add_argument("--reuse", action="store_true",
                   help="single-key mode: reuse the first half of the inversion key for swaps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_protect)

    p = sub.add_parser("infer", help="classify one image")
    p.add_argument("--model", required=True, help=".bnnm or .bnnp file")
    p.add_argument("--device", help="device file; omit to run the attacker path")
    p.add_argument("--backend", choices=["digital", "crossbar"], default="digital")
    p.add_argument("--input", required=True, help="IDX images file or 28x28 image")
    p.add_argument("--index", type=int, default=0, help="image index within an IDX file")
    p.add_argument("--t-pix", type=float, default=0.5)
    _add_crossbar_args(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("attack-eval", help="no-key and wrong-key accuracy of a .bnnp")
    p.add_argument("--model", required=True, help=".bnnp file")
    _add_dataset_args(p)
    p.add_argument("--device", help="optional device file enabling the wrong-key sweep")
    p.add_argument("--seeds", type=int, default=5, help="trials per wrong-key point")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV report path")
    p.set_defaults(func=cmd_attack_eval)

    p = sub.add_parser("tables", help="reproduce the degradation tables from a plain model")
    p.add_argument("--model", required=True, help=".bnnm file")
    p.add_argument("--device", required=True)
    _add_dataset_args(p)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("verify", help="assert protected == plain predictions everywhere")
    p.add_argument("--model", required=True, help=".bnnp file")
    p.add_argument("--device", required=True)
    _add_dataset_args(p)
    p.add_argument("--plain", help="reference .bnnm; default reconstructs via the device")
    p.add_argument("--backend", choices=["digital", "crossbar", "both"], default="digital")
    p.add_argument("--t-pix", type=float, default=0.5)
    _add_crossbar_args(p)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and not args.synthetic and not args.data_dir:
        parser.error("train needs --data-dir or --synthetic")
    try:
        return args.func(args)
    except (PufBnnError, FileNotFoundError, binascii.Error, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
