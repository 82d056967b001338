"""Trainer acceptance: held-out quality on the synthetic corpus and weight parity.

The corpus is produced through the generator's public CLI so the trainer
touches only the published file formats. Run with -s to see the PASS lines.
"""

import json
import subprocess
import sys

import numpy as np
import pytest
import torch

from sptwtrainer.records import load_manifest, load_records, split_indices
from sptwtrainer.train import TrainConfig, accuracy_by_bin, eval_curves, train
from sptwtrainer.weights_io import import_weights

GEN_CONFIG = {
    "records_per_cell": 12,
    "seed": 3,
    "radar": {},
    "cellular": {"sample_rate_hz": 6e6},
}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    cfg = out / "gen.json"
    cfg.write_text(json.dumps(GEN_CONFIG))
    subprocess.run(
        [sys.executable, "-m", "spectwin.cli", "gen-dataset", "--out", str(out),
         "--config", str(cfg), "--split", "--seed", "3"],
        check=True, capture_output=True,
    )
    return out


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    weights_path = out / "detector.sptwnn"
    metrics_path = out / "metrics.json"
    model, metrics = train(
        corpus, TrainConfig(epochs=10, patience=3, seed=0),
        out_weights=weights_path, out_metrics=metrics_path,
    )
    return corpus, model, metrics, weights_path


def test_heldout_quality(trained):
    _, _, metrics, _ = trained
    assert metrics["accuracy"] >= 0.85
    assert metrics["precision"] >= metrics["recall"]
    high_snr = [row for row in metrics["per_snr"]
                if row["bin_db"] is not None and row["bin_db"] > 0]
    assert high_snr
    for row in high_snr:
        assert row["accuracy"] >= 0.90
    print(f"PASS: held-out quality (accuracy {metrics['accuracy']:.3f} >= 0.85, "
          f"precision {metrics['precision']:.3f} >= recall {metrics['recall']:.3f}, "
          "SNR>0 bins >= 0.90)")


def test_metrics_report_fields(trained):
    _, _, metrics, _ = trained
    for field in ("accuracy", "precision", "recall", "per_snr", "per_sinr"):
        assert field in metrics


def test_weight_parity_with_inference_engine(trained):
    from spectwin.detector import forward, load_weights

    corpus, model, _, weights_path = trained
    manifest = load_manifest(corpus / "manifest.json")
    records = load_records(corpus / manifest["record_file"])
    probes = records.features[:32]
    with torch.no_grad():
        ours = torch.sigmoid(model(torch.from_numpy(probes))).double().numpy()
    theirs = forward(probes, load_weights(weights_path))
    worst = float(np.abs(ours - theirs).max())
    assert worst < 1e-4
    print(f"PASS: cross-component weight parity (max |diff| {worst:.2e} < 1e-4 "
          "on 32 probes)")


def test_exported_weights_reimport(trained):
    corpus, model, _, weights_path = trained
    clone = import_weights(weights_path)
    x = torch.randn(4, 1024, 2)
    with torch.no_grad():
        assert torch.allclose(model(x), clone(x), atol=1e-6)


def test_eval_curves_plumbing(trained):
    corpus, model, _, _ = trained
    manifest = load_manifest(corpus / "manifest.json")
    records = load_records(corpus / manifest["record_file"])
    test_idx = split_indices(manifest)["test"]
    curves = eval_curves(model, records, test_idx)
    for axis in ("snr", "sinr"):
        counts = sum(row["count"] for row in curves[axis])
        assert counts == test_idx.size

    # injected all-correct predictions give accuracy 1.0 in every bin
    labels = records.labels[test_idx]
    perfect = labels.astype(np.float64)
    rows = accuracy_by_bin(records.snr_db[test_idx], labels, perfect)
    assert all(row["accuracy"] == 1.0 for row in rows)
