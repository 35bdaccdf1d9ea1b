"""
Run Store
Writes and reads the run directory of one experiment:

    <run>/config.json            resolved config
    <run>/rounds.csv             one row per round
    <run>/datasets/round_XXX.json
    <run>/policies/round_XXX.npz
    <run>/summary.json
"""

from __future__ import annotations

import csv
import json
import os
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence

import numpy as np

from agents.gflownet import PolicyNet
from tools.errors import MissingDataError

ROUND_COLUMNS = [
    "round",
    "spent",
    "mean_topK",
    "diversity",
    "diverse_topK",
    "proposal_topK",
    "round_cost",
    "spent_exact",
    "n_queries",
    "fidelity_counts",
    "f_star_mean",
    "final_loss",
]


def format_number(value) -> str:
    if value is None:
        return ""
    if isinstance(value, Fraction):
        value = float(value)
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


class RunStore:
    """File layout of a single run directory."""

    def __init__(self, root: str):
        self.root = Path(root)

    @classmethod
    def create(cls, output_dir: str, run_name: str) -> "RunStore":
        store = cls(os.path.join(output_dir, run_name))
        for sub in ("datasets", "policies"):
            (store.root / sub).mkdir(parents=True, exist_ok=True)
        rounds = store.root / "rounds.csv"
        with open(rounds, "w", newline="") as f:
            csv.writer(f).writerow(ROUND_COLUMNS)
        return store

    @property
    def rounds_path(self) -> Path:
        return self.root / "rounds.csv"

    def write_config(self, config_json: str) -> None:
        (self.root / "config.json").write_text(config_json)

    def append_round(self, row: Mapping[str, object]) -> None:
        with open(self.rounds_path, "a", newline="") as f:
            csv.writer(f).writerow([format_number(row.get(col)) for col in ROUND_COLUMNS])

    def write_dataset(self, round_index: int, dataset: Dict) -> None:
        path = self.root / "datasets" / f"round_{round_index:03d}.json"
        path.write_text(json.dumps(dataset, indent=1) + "\n")

    def write_policy(self, round_index: int, net: PolicyNet) -> Path:
        path = self.root / "policies" / f"round_{round_index:03d}.npz"
        snapshot = net.to_dict()
        np.savez(
            path,
            meta=np.array([snapshot["n_inputs"], snapshot["n_actions"], snapshot["hidden_width"], snapshot["n_hidden"]]),
            names=np.array(snapshot["names"]),
            shapes=np.array(json.dumps(snapshot["shapes"])),
            vector=snapshot["vector"],
        )
        return path

    def write_summary(self, summary: Dict) -> None:
        (self.root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    def latest_policy(self) -> Path:
        policies = sorted((self.root / "policies").glob("round_*.npz"))
        if not policies:
            raise MissingDataError(f"{self.root} holds no policy snapshot")
        return policies[-1]


def load_policy(path: str) -> PolicyNet:
    with np.load(path) as data:
        n_inputs, n_actions, hidden_width, n_hidden = (int(v) for v in data["meta"])
        return PolicyNet.from_dict(
            {
                "n_inputs": n_inputs,
                "n_actions": n_actions,
                "hidden_width": hidden_width,
                "n_hidden": n_hidden,
                "names": [str(n) for n in data["names"]],
                "shapes": json.loads(str(data["shapes"])),
                "vector": data["vector"],
            }
        )


def load_rounds(run_dir: str) -> List[Dict[str, float]]:
    """Numeric columns of rounds.csv as one dict per round."""
    path = Path(run_dir) / "rounds.csv"
    if not path.exists():
        raise MissingDataError(f"{run_dir} has no rounds.csv")
    rows = []
    with open(path, newline="") as f:
        for record in csv.DictReader(f):
            row = {}
            for key in ("round", "spent", "mean_topK", "diversity", "diverse_topK", "proposal_topK", "round_cost"):
                if record.get(key):
                    row[key] = float(record[key])
            rows.append(row)
    return rows


def write_table(path: str, rows: Sequence[Mapping[str, object]], columns: Iterable[str]) -> None:
    columns = list(columns)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_number(row.get(col)) for col in columns])
