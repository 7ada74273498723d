"""Command-line front end: synth, train, eval, predict, criterion."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

log = logging.getLogger("painpair")

COMMANDS = ("train", "eval", "predict", "criterion", "synth")
CONFIG_ECHO = "config.txt"
CHECKPOINT_NAME = "model.ckpt"
REPORT_NAME = "report.json"

_BOOL_WORDS = {"on": True, "off": False, "true": True, "false": False, "1": True, "0": False,
               "yes": True, "no": False}


def _bool(text):
    try:
        return _BOOL_WORDS[str(text).strip().lower()]
    except KeyError:
        raise ValueError(f"expected on/off, got {text!r}") from None


def _choice(*options):
    def conv(text):
        text = str(text).strip()
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text
    return conv


# key -> (parser, default); file keys and --flags share these names
CONFIG_KEYS = {
    "data": (str, None),
    "out": (str, "runs/train"),
    "seed": (int, 0),
    "epochs": (int, 70),
    "batch_size": (int, 32),
    "learning_rate": (float, 1e-3),
    "weight_decay": (float, 1e-4),
    "dropout": (float, 0.25),
    "c": (float, 0.05),
    "contrastive": (_bool, False),
    "multitask": (_bool, True),
    "pairing": (_choice("same", "random"), "same"),
    "gate": (_choice("sample", "head"), "sample"),
    "batchnorm": (_choice("batch", "affine"), "batch"),
    "crop_pad": (int, 8),
    "flip_p": (float, 0.5),
    "elastic_alpha": (float, 20.0),
    "elastic_sigma": (float, 3.0),
    "fold": (int, -1),
    "n_folds": (int, 5),
    "n_refs": (int, 5),
    "clahe": (_bool, True),
    "clip_limit": (float, 2.0),
    "tiles": (int, 8),
    "frontal_threshold": (float, 0.5),
    "cache_dir": (str, None),
}
# run-location keys are left out of checkpoints so re-runs elsewhere stay byte-identical
_LOCATION_KEYS = ("out", "cache_dir", "data")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {COMMANDS}")

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> str:
        lines = [f"{k}={'' if v is None else _render(v)}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"

    def portable(self) -> dict:
        return {k: v for k, v in self.values.items() if k not in _LOCATION_KEYS}

    def train_config(self):
        from .training import Augmentation, TrainConfig

        v = self.values
        return TrainConfig(
            learning_rate=v["learning_rate"], weight_decay=v["weight_decay"],
            epochs=v["epochs"], batch_size=v["batch_size"], dropout_p=v["dropout"],
            contrastive_c=v["c"], contrastive_enabled=v["contrastive"],
            multitask_enabled=v["multitask"], pairing=v["pairing"], gate=v["gate"],
            batchnorm=v["batchnorm"], seed=v["seed"],
            augmentation=Augmentation(v["crop_pad"], v["flip_p"]),
            elastic_alpha=v["elastic_alpha"], elastic_sigma=v["elastic_sigma"])


def _render(v):
    if isinstance(v, bool):
        return "on" if v else "off"
    return repr(v) if isinstance(v, float) else str(v)


def _convert(key, raw, source):
    key = key.strip().replace("-", "_")
    if key not in CONFIG_KEYS:
        raise ConfigError(f"unknown key {key!r} in {source}; valid keys: "
                          + ", ".join(sorted(CONFIG_KEYS)))
    conv, _ = CONFIG_KEYS[key]
    raw = str(raw).strip()
    if raw == "":
        return key, None
    try:
        return key, conv(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {key!r} in {source}: {e}") from None


def read_config_file(path) -> dict:
    values = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        k, v = _convert(key, raw, f"{path}:{n}")
        values[k] = v
    return values


def parse_flags(args) -> dict:
    """``--key value`` pairs (``--key=value`` also accepted)."""
    values = {}
    it = iter(args)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"expected --key, got {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            try:
                raw = next(it)
            except StopIteration:
                raise ConfigError(f"flag --{key} needs a value") from None
        k, v = _convert(key, raw, f"flag --{key}")
        values[k] = v
    return values


def parse_config(path=None, flags=(), command: str = "train") -> RunConfig:
    """Defaults, then the key=value file, then ``--key value`` flags."""
    values = {k: default for k, (_, default) in CONFIG_KEYS.items()}
    if path is not None:
        values.update(read_config_file(path))
    values.update(parse_flags(list(flags)))
    return RunConfig(command, values)


# -- commands -------------------------------------------------------------------------

def _load_data(values, data=None):
    from .dataset import load_dataset

    return load_dataset(data or values["data"], use_clahe=values["clahe"],
                        clip_limit=values["clip_limit"], tiles=values["tiles"],
                        frontal_threshold=values["frontal_threshold"],
                        cache_dir=values.get("cache_dir"))


def run_train(cfg: RunConfig) -> int:
    from .metrics import split_folds
    from .model import save_checkpoint
    from .training import train

    v = cfg.values
    if not v["data"]:
        raise ConfigError("train needs data=<dir or annotations.csv>")
    if not Path(v["data"]).exists():
        raise FileNotFoundError(f"data path not found: {v['data']}")
    out = Path(v["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_ECHO).write_text(cfg.echo())
    (out / "seed").write_text(f"{v['seed']}\n")
    dataset = _load_data(v)
    folds = {}
    train_set = dataset
    if v["fold"] >= 0:
        folds = split_folds(dataset.records, v["n_folds"], v["seed"])
        train_set = dataset.subset([s for s, f in folds.items() if f != v["fold"]])
    tc = cfg.train_config()
    model, history = train(tc, train_set)
    save_checkpoint(out / CHECKPOINT_NAME, model, cfg.portable(), v["seed"],
                    extra={"folds": folds, "test_fold": v["fold"],
                           "train_subjects": train_set.subjects()})
    epochs = [{k: e[k] for k in e if k != "seconds"} for e in history["epochs"]]
    (out / "history.json").write_text(json.dumps(
        {"epochs": epochs, "contrastive_anomalies": history["contrastive_anomalies"]},
        indent=2, sort_keys=True) + "\n")
    print(json.dumps({"checkpoint": str(out / CHECKPOINT_NAME),
                      "final_loss": epochs[-1]["loss"] if epochs else None}))
    return 0


def run_eval(cfg: RunConfig, checkpoint, data, windows, out=None) -> int:
    from .evaluation import evaluate, write_cross_dataset_table, write_window_table
    from .model import load_checkpoint

    model, header = load_checkpoint(checkpoint)
    values = {**cfg.values, **header["config"]}
    dataset = _load_data(values, data)
    extra = header.get("extra", {})
    folds = extra.get("folds") or {}
    test_fold = extra.get("test_fold", -1)
    if test_fold is not None and test_fold >= 0:
        dataset = dataset.subset([s for s, f in folds.items() if f == test_fold])
    if len(dataset) == 0:
        raise ValueError("no evaluation frames")
    report = evaluate(model, dataset, windows=windows, n_refs=values["n_refs"],
                      seed=values["seed"], folds=folds, test_fold=test_fold)
    out = Path(out) if out else Path(checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / REPORT_NAME)
    write_window_table(out / "pcc_windows.csv", {"pairwise": report}, "pcc", windows)
    write_window_table(out / "f1_windows.csv", {"pairwise": report}, "f1", windows)
    write_cross_dataset_table(out / "cross_dataset.csv", report.cross_dataset)
    summary = {ds: e["pcc"]["frame"] for ds, e in report.datasets.items()}
    print(json.dumps({"report": str(out / REPORT_NAME), "pcc_frame": summary}))
    return 0


_IMAGE_SUFFIXES = (".pgm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def run_predict(cfg: RunConfig, checkpoint, ref_dir, target, dataset_id) -> int:
    from .model import load_checkpoint
    from .pain_scales import build_head_table
    from .preprocess import load_image, preprocess_frame
    from .training import predict_pspi

    model, header = load_checkpoint(checkpoint)
    values = {**cfg.values, **header["config"]}
    ref_dir = Path(ref_dir)
    if not ref_dir.is_dir():
        raise FileNotFoundError(f"reference directory not found: {ref_dir}")
    if not Path(target).exists():
        raise FileNotFoundError(f"target image not found: {target}")

    def prep(path):
        return preprocess_frame(load_image(path), use_clahe=values["clahe"],
                                clip_limit=values["clip_limit"], tiles=values["tiles"])

    ref_paths = sorted(p for p in ref_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not ref_paths:
        raise ValueError(f"no reference images in {ref_dir}")
    refs = np.stack([prep(p) for p in ref_paths]).astype(np.float32)
    tgt = prep(target).astype(np.float32)
    head = build_head_table().pspi_head(dataset_id)
    pspi = predict_pspi(model, refs, tgt, head)
    print(json.dumps({"pspi": pspi, "n_refs": len(refs), "head": head, "dataset": dataset_id}))
    return 0


def run_criterion(trials_path, source, out=None) -> int:
    from .criterion import criterion_report, load_trials, write_criterion_report

    if not Path(trials_path).exists():
        raise FileNotFoundError(f"trials file not found: {trials_path}")
    rows = criterion_report(load_trials(trials_path), source)
    if out:
        write_criterion_report(out, rows)
    else:
        write_criterion_report("/dev/stdout", rows)
    return 0


def run_synth(subjects, frames, out, bias, seed, cohorts) -> int:
    from .synth import gen_dataset, write_dataset

    records, imgs = gen_dataset(subjects, frames, seed=seed, bias_mode=bias, cohorts=cohorts)
    path = write_dataset(out, records, imgs)
    print(json.dumps({"annotations": str(path), "frames": len(records)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="painpair", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="train a pairwise model; extra --key value pairs "
                                     "override the config file",
                       allow_abbrev=False)  # keep --c from matching --config
    t.add_argument("--config", default=None)
    e = sub.add_parser("eval", help="evaluate a checkpoint on held-out subjects")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--windows", default="1,5,20")
    e.add_argument("--out", default=None)
    pr = sub.add_parser("predict", help="PSPI for one target frame against reference frames")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--ref-dir", required=True)
    pr.add_argument("--target", required=True)
    pr.add_argument("--dataset", default="Dementia", choices=["Dementia", "Control", "UNBC"])
    c = sub.add_parser("criterion", help="derive a PSPI pain cutoff from trial ratings")
    c.add_argument("--trials", required=True)
    c.add_argument("--source", choices=["vas", "observer"], default="observer")
    c.add_argument("--out", default=None)
    s = sub.add_parser("synth", help="write a synthetic face-proxy dataset")
    s.add_argument("--subjects", type=int, required=True)
    s.add_argument("--frames", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--bias", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cohorts", default="Dementia")
    return p


def _apply_threads():
    n = os.environ.get("PAINPAIR_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))


def dispatch(argv=None) -> int:
    args, rest = build_parser().parse_known_args(argv)
    if rest and args.command != "train":
        raise ConfigError(f"unrecognized arguments: {' '.join(rest)}")
    _apply_threads()
    if args.command == "train":
        if args.config is not None and not Path(args.config).exists():
            raise FileNotFoundError(f"config file not found: {args.config}")
        return run_train(parse_config(args.config, rest, "train"))
    if args.command == "eval":
        windows = tuple(float(w) for w in args.windows.split(",") if w.strip())
        if not Path(args.checkpoint).exists():
            raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
        return run_eval(parse_config(command="eval"), args.checkpoint, args.data, windows,
                        args.out)
    if args.command == "predict":
        if not Path(args.checkpoint).exists():
            raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
        return run_predict(parse_config(command="predict"), args.checkpoint, args.ref_dir,
                           args.target, args.dataset)
    if args.command == "criterion":
        return run_criterion(args.trials, args.source, args.out)
    cohorts = tuple(c.strip() for c in args.cohorts.split(",") if c.strip())
    return run_synth(args.subjects, args.frames, args.out, args.bias, args.seed, cohorts)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001 - report every failure on one line
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
