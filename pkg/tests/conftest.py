import time

import numpy as np
import pytest

from modecausal.cli import run

from modecausal.dataset import CodedDataset, simple_codebook


def make_dataset(columns, rows, n_levels=2, start=0):
    cb = simple_codebook(columns, n_levels, start)
    return CodedDataset(tuple(columns), np.asarray(rows, dtype=np.int64).reshape(-1, len(columns)), cb)


@pytest.fixture
def write_csv(tmp_path):
    def _write(text, name="data.csv"):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p
    return _write


@pytest.fixture(scope="session")
def survey_run(tmp_path_factory):
    """Full CLI pipeline on northlike data at survey scale."""
    root = tmp_path_factory.mktemp("survey")
    sim = run(["simulate", "--preset", "northlike", "--n", "12000", "--seed", "7", "--out", str(root / "sim")])
    data, cb = str(sim[0]), str(sim[1])
    disc = run(["discover", "--input", data, "--codebook", cb, "--knowledge", "resolved", "--out", str(root / "disc")])
    eff = run(["effects", "--input", data, "--codebook", cb, "--graph", str(disc[0]), "--seed", "7",
               "--out", str(root / "eff")])
    start = time.perf_counter()
    te = run(["train-explain", "--input", data, "--codebook", cb, "--seed", "7", "--out", str(root / "te")])
    seconds = time.perf_counter() - start
    cmp_out = run(["compare", "--effects", str(eff[1]), "--shap", str(te[2]), "--out", str(root / "cmp")])
    metrics = {}
    for line in te[0].read_text().splitlines()[1:]:
        key, _, value = line.partition(":")
        metrics[key.strip()] = value.strip()
    return {"sim": sim, "graph": disc[0], "effects": eff[1], "shap": te[2], "metrics": metrics,
            "seconds": seconds, "comparison": cmp_out}
