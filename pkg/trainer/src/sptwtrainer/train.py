"""Training loop, held-out metrics, and per-SNR/SINR accuracy curves."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .model import RadarClassifier
from .records import DatasetUnreadable, RecordArrays, load_manifest, load_records, split_indices
from .weights_io import export_weights


class DivergedTraining(Exception):
    """Loss went NaN/Inf."""


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    patience: int = 5
    widths: tuple = (32, 64, 128, 128)
    hidden: int = 128


def _batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo : lo + batch_size]


@torch.no_grad()
def predict(model: RadarClassifier, features: np.ndarray, batch_size: int = 256) -> np.ndarray:
    model.eval()
    probs = np.empty(features.shape[0], dtype=np.float64)
    for idx in _batches(features.shape[0], batch_size):
        x = torch.from_numpy(features[idx])
        probs[idx] = torch.sigmoid(model(x)).numpy()
    return probs


def binary_metrics(labels: np.ndarray, probs: np.ndarray, threshold: float = 0.5) -> dict:
    preds = (probs >= threshold).astype(np.int64)
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    accuracy = (tp + tn) / max(len(labels), 1)
    precision = tp / max(tp + fp, 1)
    recall = tp / max(tp + fn, 1)
    return {"accuracy": accuracy, "precision": precision, "recall": recall,
            "tp": tp, "fp": fp, "fn": fn, "tn": tn}


def accuracy_by_bin(values: np.ndarray, labels: np.ndarray, probs: np.ndarray) -> list[dict]:
    """Per-bin accuracy; records without the metadata value land in a None bin."""
    preds = (probs >= 0.5).astype(np.int64)
    rows = []
    present = ~np.isnan(values)
    for value in sorted(set(np.round(values[present], 6))):
        mask = present & (np.round(values, 6) == value)
        acc = float(np.mean(preds[mask] == labels[mask]))
        rows.append({"bin_db": float(value), "accuracy": acc, "count": int(mask.sum())})
    if (~present).any():
        mask = ~present
        rows.append({"bin_db": None,
                     "accuracy": float(np.mean(preds[mask] == labels[mask])),
                     "count": int(mask.sum())})
    return rows


def train(data_dir, cfg: TrainConfig = TrainConfig(), out_weights=None, out_metrics=None,
          log=print) -> tuple[RadarClassifier, dict]:
    """Train on the manifest's train split, select on val, report on test."""
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir / "manifest.json")
    records = load_records(data_dir / manifest["record_file"])
    splits = split_indices(manifest)
    for name in ("train", "val", "test"):
        if name not in splits or splits[name].size == 0:
            raise DatasetUnreadable(f"manifest lacks a nonempty {name!r} split")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = RadarClassifier(widths=cfg.widths, hidden=cfg.hidden)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    loss_fn = torch.nn.BCEWithLogitsLoss()

    train_idx = splits["train"]
    x_train = records.features[train_idx]
    y_train = records.labels[train_idx].astype(np.float32)
    val_idx = splits["val"]

    best_val, best_state, stale = -1.0, None, 0
    for epoch in range(cfg.epochs):
        model.train()
        epoch_loss = 0.0
        for idx in _batches(len(train_idx), cfg.batch_size, rng):
            optimizer.zero_grad()
            logits = model(torch.from_numpy(x_train[idx]))
            loss = loss_fn(logits, torch.from_numpy(y_train[idx]))
            if not torch.isfinite(loss):
                raise DivergedTraining(f"loss diverged at epoch {epoch}")
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(idx)
        epoch_loss /= len(train_idx)

        val_probs = predict(model, records.features[val_idx])
        val_acc = binary_metrics(records.labels[val_idx], val_probs)["accuracy"]
        log(f"epoch {epoch + 1}/{cfg.epochs}: loss {epoch_loss:.4f} val acc {val_acc:.4f}")
        if val_acc > best_val:
            best_val, stale = val_acc, 0
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        else:
            stale += 1
            if stale >= cfg.patience:
                log(f"early stop after {epoch + 1} epochs")
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()

    test_idx = splits["test"]
    test_probs = predict(model, records.features[test_idx])
    metrics = binary_metrics(records.labels[test_idx], test_probs)
    metrics["val_accuracy"] = best_val
    metrics["per_snr"] = accuracy_by_bin(records.snr_db[test_idx],
                                         records.labels[test_idx], test_probs)
    metrics["per_sinr"] = accuracy_by_bin(records.sinr_db[test_idx],
                                          records.labels[test_idx], test_probs)

    if out_weights:
        export_weights(model, out_weights)
    if out_metrics:
        Path(out_metrics).write_text(json.dumps(metrics, indent=2) + "\n")
    return model, metrics


def eval_curves(model: RadarClassifier, records: RecordArrays, indices: np.ndarray,
                out_csv=None) -> dict:
    """Accuracy vs SNR and vs SINR over the given record subset."""
    probs = predict(model, records.features[indices])
    labels = records.labels[indices]
    curves = {
        "snr": accuracy_by_bin(records.snr_db[indices], labels, probs),
        "sinr": accuracy_by_bin(records.sinr_db[indices], labels, probs),
    }
    if out_csv:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["axis", "bin_db", "accuracy", "count"])
            for axis, rows in curves.items():
                for row in rows:
                    writer.writerow([axis, row["bin_db"], f"{row['accuracy']:.4f}",
                                     row["count"]])
    return curves


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sptw-train",
                                     description="train the radar detector")
    parser.add_argument("--data", required=True, help="dataset directory with manifest.json")
    parser.add_argument("--out", required=True, help="output SPTWNN weights path")
    parser.add_argument("--metrics", help="output metrics JSON path")
    parser.add_argument("--curves", help="output accuracy-vs-SNR/SINR CSV path")
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
                      seed=args.seed)
    try:
        model, metrics = train(args.data, cfg, out_weights=args.out,
                               out_metrics=args.metrics)
    except (DatasetUnreadable, DivergedTraining) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"test accuracy {metrics['accuracy']:.4f} precision {metrics['precision']:.4f} "
          f"recall {metrics['recall']:.4f}")
    if args.curves:
        manifest = load_manifest(Path(args.data) / "manifest.json")
        records = load_records(Path(args.data) / manifest["record_file"])
        eval_curves(model, records, split_indices(manifest)["test"], out_csv=args.curves)
    return 0


if __name__ == "__main__":
    sys.exit(main())
