"""Ablation experiments on the synthetic face-proxy set, emitted as CSV tables.

    python scripts/run_experiments.py pairing --out results/pairing
    python scripts/run_experiments.py multitask --epochs 30 --out results/multitask
    python scripts/run_experiments.py contrastive --out results/contrastive

Each experiment trains one model per variant on the same held-out fold and
writes experiments.csv (frame PCC per dataset), per-variant cross-dataset
tables, PCC/F1 window tables and the raw EvalReport JSON files.
"""
import argparse
import dataclasses
import json
import logging
from pathlib import Path

import numpy as np

from painpair.dataset import PainDataset
from painpair.evaluation import (evaluate, write_cross_dataset_table, write_experiment_table,
                                 write_window_table)
from painpair.metrics import split_folds
from painpair.preprocess import clahe
from painpair.synth import gen_dataset
from painpair.training import TrainConfig, train

VARIANTS = {
    "pairing": {"same-person": {}, "random-person": {"pairing": "random"}},
    "multitask": {"multi-task": {}, "pspi-only": {"multitask_enabled": False}},
    "contrastive": {"without": {}, "with": {"contrastive_enabled": True}},
    "gate": {"sample gate": {}, "head gate": {"gate": "head"}},
    "batchnorm": {"batch statistics": {}, "affine only": {"batchnorm": "affine"}},
}


def build_data(args):
    cohorts = tuple(args.cohorts.split(","))
    records, frames = gen_dataset(args.subjects, args.frames, seed=args.seed, bias_mode=True,
                                  cohorts=cohorts)
    if args.clahe:
        # same 8-bit quantization the PGM round trip applies
        frames = np.stack([clahe(np.round(f * 255) / 255) for f in frames]).astype(np.float32)
    return PainDataset(records, frames)


def main():
    p = argparse.ArgumentParser(description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("experiment", choices=sorted(VARIANTS))
    p.add_argument("--out", default="results")
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--cohorts", default="Dementia")
    p.add_argument("--epochs", type=int, default=70)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--test-fold", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-clahe", dest="clahe", action="store_false")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = build_data(args)
    folds = split_folds(data.records, args.folds, args.seed)
    train_set = data.subset([s for s, f in folds.items() if f != args.test_fold])
    test_set = data.subset([s for s, f in folds.items() if f == args.test_fold])

    base = TrainConfig(epochs=args.epochs, seed=args.seed)
    reports = {}
    for name, overrides in VARIANTS[args.experiment].items():
        config = dataclasses.replace(base, **overrides)
        model, history = train(config, train_set)
        rep = evaluate(model, test_set, folds=folds, test_fold=args.test_fold, seed=args.seed)
        reports[name] = rep
        slug = name.replace(" ", "_")
        rep.to_json(out / f"report_{slug}.json")
        write_cross_dataset_table(out / f"cross_dataset_{slug}.csv", rep.cross_dataset)
        (out / f"history_{slug}.json").write_text(json.dumps(history, indent=1))
    write_experiment_table(out / "experiments.csv", reports)
    write_window_table(out / "pcc_windows.csv", reports, "pcc")
    write_window_table(out / "f1_windows.csv", reports, "f1")
    print((out / "experiments.csv").read_text())


if __name__ == "__main__":
    main()
