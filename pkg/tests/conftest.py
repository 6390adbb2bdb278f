from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

import pytest

from bespoke_axc.fxp import FxpFormat, fit_weight_format, quantize_model
from bespoke_axc.model_io import load_dataset, load_model, split

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
MODELS = sorted(p.stem for p in (FIXTURES / "models").glob("*.json"))
TREES = [m for m in MODELS if m.endswith("_dt")]
SUMS = [m for m in MODELS if not m.endswith("_dt")]
SPLIT_SEED = 2022


def dataset_of(name: str) -> str:
    return name.split("_")[0]


@lru_cache(maxsize=None)
def fixture(name: str):
    """(model, train, test, quantized model) with the fixture's flow settings."""
    m = load_model(FIXTURES / "models" / f"{name}.json")
    data = load_dataset(FIXTURES / "data" / f"{dataset_of(name)}.csv", m.input_count, m.class_count)
    train, test = split(data, 0.3, SPLIT_SEED)
    infmt = FxpFormat(8, 8, False) if m.kind == "decision-tree" else FxpFormat(4, 4, False)
    q = quantize_model(m, infmt, fit_weight_format(m, train.feature_ranges, infmt), train)
    return m, train, test, q


def fixture_args(name: str, out: Path, *extra: str) -> list[str]:
    return [
        "--model", str(FIXTURES / "models" / f"{name}.json"),
        "--data", str(FIXTURES / "data" / f"{dataset_of(name)}.csv"),
        "--config", str(FIXTURES / "configs" / f"{name}.json"),
        "--out-dir", str(out),
        *extra,
    ]


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def tmp_json(tmp_path):
    def make(obj, name="m.json"):
        return write_json(tmp_path / name, obj)
    return make
