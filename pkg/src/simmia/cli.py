"""Command-line pipeline: every stage runs as a subcommand against a TOML
config, with flags overriding config values.

Every run owns an output directory and writes a manifest (settings digest,
toolkit version, seeds, artifact list) so artifacts are self-describing and
byte-reproducible. Exit codes: 0 success, 1 usage, 2 data or format problem,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

import numpy as np

from . import __version__, attacks, evalreport, stats, synth
from .errors import CapacityError, FormatError, SimmiaError, TrainingError
from .similarity import sample_reference_set
from .store import (
    EmbeddingDataset,
    Split,
    SplitCounts,
    assign_splits,
    load_dataset,
    save_dataset,
)
from .tinynet import TrainConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the toolkit reserves 2 for data errors."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def _load_config(path: Optional[str]) -> Dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FormatError(f"{p}: config file not found")
    try:
        with p.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(f"{p}: invalid TOML ({exc})") from None


def _get(config: Dict, section: str, key: str, override, default=None, required: bool = False):
    if override is not None:
        return override
    value = config.get(section, {}).get(key, default)
    if value is None and required:
        raise FormatError(f"missing required setting [{section}].{key}")
    return value


def _outdir(args, config: Dict) -> Path:
    out = _get(config, "output", "dir", args.out, required=True)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(outdir: Path, command: str, settings: Dict, artifacts: List[str]) -> None:
    canonical = json.dumps(settings, sort_keys=True, separators=(",", ":"))
    manifest = {
        "artifacts": sorted(artifacts),
        "command": command,
        "config_digest": hashlib.sha256(canonical.encode()).hexdigest(),
        "settings": settings,
        "toolkit_version": __version__,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _report_json(report: evalreport.EvalReport) -> str:
    payload = {
        "asr": report.asr,
        "auc": report.auc,
        "confusion": report.confusion,
        "meta": report.meta,
        "roc": [[fpr, tpr] for fpr, tpr in report.roc],
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _train_config(args, config: Dict) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(_get(config, "train", "learning_rate", getattr(args, "learning_rate", None), 1e-3)),
        epochs=int(_get(config, "train", "epochs", getattr(args, "epochs", None), 100)),
        batch_size=int(_get(config, "train", "batch_size", getattr(args, "batch_size", None), 128)),
        seed=int(_get(config, "train", "seed", getattr(args, "train_seed", None), 0)),
        optimizer=str(_get(config, "train", "optimizer", getattr(args, "optimizer", None), "adam")),
        beta1=float(_get(config, "train", "beta1", None, 0.9)),
        beta2=float(_get(config, "train", "beta2", None, 0.999)),
        eps=float(_get(config, "train", "eps", None, 1e-8)),
    )


def _attack_config(args, config: Dict) -> attacks.AttackConfig:
    return attacks.AttackConfig(
        train=_train_config(args, config),
        hidden_width=int(_get(config, "attack", "hidden_width", getattr(args, "hidden_width", None), 512)),
        hidden_layers=int(_get(config, "attack", "hidden_layers", getattr(args, "hidden_layers", None), 4)),
        margin=float(_get(config, "attack", "margin", None, 0.3)),
        max_negatives=int(_get(config, "attack", "max_negatives", None, 100)),
        sample_seed=int(_get(config, "attack", "sample_seed", getattr(args, "sample_seed", None), 0)),
    )


def _load_input(args, config: Dict) -> EmbeddingDataset:
    path = _get(config, "dataset", "path", args.input, required=True)
    fmt = _get(config, "dataset", "format", getattr(args, "format", None), "container")
    return load_dataset(path, fmt)


def _refs_for(args, config: Dict, ds: EmbeddingDataset):
    fraction = float(_get(config, "reference", "fraction", getattr(args, "fraction", None), 0.1))
    seed = int(_get(config, "reference", "seed", getattr(args, "refs_seed", None), 0))
    return sample_reference_set(ds, fraction, seed)


def _target_rows(ds: EmbeddingDataset, which: str) -> np.ndarray:
    if which == "attack_train":
        return ds.rows_in_split(Split.ATTACK_TRAIN)
    if which == "attack_eval":
        return ds.rows_in_split(Split.ATTACK_EVAL)
    if which == "all":
        return np.arange(ds.n, dtype=np.int64)
    raise FormatError(f"unknown target selection {which!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    outdir = _outdir(args, config)
    scfg = synth.SynthConfig(
        k=int(_get(config, "synth", "k", args.k, required=True)),
        dim=int(_get(config, "synth", "dim", args.dim, required=True)),
        per_identity_members=int(_get(config, "synth", "per_identity_members", args.per_identity_members, 100)),
        per_identity_nonmembers=int(_get(config, "synth", "per_identity_nonmembers", args.per_identity_nonmembers, 100)),
        sigma_train=float(_get(config, "synth", "sigma_train", args.sigma_train, required=True)),
        sigma_test=float(_get(config, "synth", "sigma_test", args.sigma_test, required=True)),
        center_scale=float(_get(config, "synth", "center_scale", args.center_scale, 2.0)),
        seed=int(_get(config, "synth", "seed", args.seed, 0)),
        layout=str(_get(config, "synth", "layout", args.layout, "mixed")),
        identity_scale_spread=float(_get(config, "synth", "identity_scale_spread", args.scale_spread, 1.0)),
        anisotropy=float(_get(config, "synth", "anisotropy", args.anisotropy, 1.0)),
    )
    ds, gt = synth.generate(scfg)
    save_dataset(ds, outdir / "dataset.emb1")
    save_dataset(synth.centers_dataset(gt), outdir / "centers.emb1")
    settings = {"synth": vars(scfg) if not hasattr(scfg, "__dataclass_fields__") else {
        f: getattr(scfg, f) for f in scfg.__dataclass_fields__}}
    _write_manifest(outdir, "synth", settings, ["dataset.emb1", "centers.emb1"])
    print(f"wrote {outdir / 'dataset.emb1'} ({ds.n} rows, dim {ds.dim}) and centers sidecar")
    return EXIT_OK


def cmd_ingest(args) -> int:
    config = _load_config(args.config)
    outdir = _outdir(args, config)
    ds = _load_input(args, config)
    save_dataset(ds, outdir / "dataset.emb1")
    _write_manifest(outdir, "ingest", {"input": str(args.input), "format": args.format},
                    ["dataset.emb1"])
    print(f"ingested {ds.n} rows (dim {ds.dim}) -> {outdir / 'dataset.emb1'}")
    return EXIT_OK


def cmd_split(args) -> int:
    config = _load_config(args.config)
    outdir = _outdir(args, config)
    ds = _load_input(args, config)
    counts = SplitCounts(
        attack_train_members=int(_get(config, "splits", "attack_train_members", args.attack_train_members, required=True)),
        attack_train_nonmembers=int(_get(config, "splits", "attack_train_nonmembers", args.attack_train_nonmembers, required=True)),
        attack_eval_members=int(_get(config, "splits", "attack_eval_members", args.attack_eval_members, required=True)),
        attack_eval_nonmembers=int(_get(config, "splits", "attack_eval_nonmembers", args.attack_eval_nonmembers, required=True)),
        reference_pool=int(_get(config, "splits", "reference_pool", args.reference_pool, required=True)),
    )
    seed = int(_get(config, "splits", "seed", args.seed, 0))
    out = assign_splits(ds, counts, seed)
    save_dataset(out, outdir / "dataset.emb1")
    settings = {"splits": {f: getattr(counts, f) for f in counts.__dataclass_fields__}, "seed": seed}
    _write_manifest(outdir, "split", settings, ["dataset.emb1"])
    print(f"assigned splits (seed {seed}) -> {outdir / 'dataset.emb1'}")
    return EXIT_OK


def cmd_simvec(args) -> int:
    config = _load_config(args.config)
    outdir = _outdir(args, config)
    ds = _load_input(args, config)
    refs = _refs_for(args, config, ds)
    rows = _target_rows(ds, args.targets)
    from .similarity import distance_matrix

    dm = distance_matrix(rows, refs, ds)
    path = outdir / "simvec.csv"
    with path.open("w", newline="") as fh:
        fh.write("target_row," + ",".join(f"a{int(r)}" for r in refs.row_ids) + "\n")
        for row_id, row in zip(rows, dm):
            fh.write(str(int(row_id)) + "," + ",".join(repr(float(v)) for v in row) + "\n")
    _write_manifest(outdir, "simvec",
                    {"fraction": refs.fraction, "refs_seed": refs.seed, "targets": args.targets},
                    ["simvec.csv"])
    print(f"wrote {dm.shape[0]}x{dm.shape[1]} distance matrix -> {path}")
    return EXIT_OK


def cmd_stats(args) -> int:
    config = _load_config(args.config)
    outdir = _outdir(args, config)
    ds = _load_input(args, config)
    refs = _refs_for(args, config, ds)
    rows = _target_rows(ds, args.targets)
    membership = ds.membership[rows]
    from .similarity import distance_matrix

    dm = distance_matrix(rows, refs, ds)
    per_ref = stats.per_reference_stats(dm, membership)
    with (outdir / "per_reference_stats.csv").open("w", newline="") as fh:
        fh.write("ref_index,anchor_row,mean_member,mean_nonmember,std_member,std_nonmember\n")
        for s in per_ref:
            fh.write(
                f"{s.ref_index},{int(refs.row_ids[s.ref_index])},"
                f"{s.mean_member:.10g},{s.mean_nonmember:.10g},"
                f"{s.std_member:.10g},{s.std_nonmember:.10g}\n"
            )

    mask_m = membership == 1
    per_target_mean = dm.mean(axis=1)
    per_target_std = dm.std(axis=1)
    with (outdir / "cdf_points.csv").open("w", newline="") as fh:
        fh.write("statistic,population,value,cumulative_fraction\n")
        for stat_name, values in (("mean", per_target_mean), ("std", per_target_std)):
            for pop, vals in (("member", values[mask_m]), ("nonmember", values[~mask_m])):
                for v, c in stats.stat_cdf(vals):
                    fh.write(f"{stat_name},{pop},{v:.10g},{c:.10g}\n")

    summary = stats.gap_summary(dm, membership)
    _write_manifest(
        outdir, "stats",
        {"fraction": refs.fraction, "refs_seed": refs.seed, "targets": args.targets,
         "mean_gap_auc": summary["mean_gap_auc"], "std_gap_auc": summary["std_gap_auc"]},
        ["per_reference_stats.csv", "cdf_points.csv"],
    )
    print(
        f"mean_gap_auc={summary['mean_gap_auc']:.4f} std_gap_auc={summary['std_gap_auc']:.4f} "
        f"({len(per_ref)} anchors, {dm.shape[0]} targets)"
    )
    return EXIT_OK


def cmd_train_attack(args) -> int:
    config = _load_config(args.config)
    outdir = _outdir(args, config)
    ds = _load_input(args, config)
    acfg = _attack_config(args, config)
    base, _ = attacks.parse_kind(args.kind)
    refs = None
    if base in (attacks.KIND_SD, attacks.KIND_AS_SD):
        refs = _refs_for(args, config, ds)
    model = attacks.train_attack(args.kind, ds, refs, acfg)
    save_model(path := outdir / "model.atk1", model=model)
    artifacts = ["model.atk1"]
    if model.loss_curve:
        with (outdir / "loss_curve.csv").open("w", newline="") as fh:
            fh.write("epoch,mean_loss\n")
            for i, loss in enumerate(model.loss_curve):
                fh.write(f"{i},{loss:.10g}\n")
        artifacts.append("loss_curve.csv")
    settings = {
        "kind": args.kind,
        "train": {f: getattr(acfg.train, f) for f in acfg.train.__dataclass_fields__},
        "attack": {"hidden_width": acfg.hidden_width, "hidden_layers": acfg.hidden_layers,
                   "margin": acfg.margin, "max_negatives": acfg.max_negatives,
                   "sample_seed": acfg.sample_seed},
        "reference": None if refs is None else {"fraction": refs.fraction, "seed": refs.seed,
                                                "n_anchors": refs.n},
    }
    _write_manifest(outdir, "train-attack", settings, artifacts)
    print(f"trained {args.kind} -> {path}")
    return EXIT_OK


def save_model(path: Path, model) -> None:
    attacks.save_model(model, path)


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    outdir = _outdir(args, config)
    ds = _load_input(args, config)
    model = attacks.load_model(args.model)
    report = attacks.evaluate_attack(model, ds)
    (outdir / "report.json").write_text(_report_json(report))
    evalreport.write_roc_csv(report, outdir / "roc.csv")
    _write_manifest(outdir, "eval", {"model": str(args.model), "asr": report.asr,
                                     "auc": report.auc}, ["report.json", "roc.csv"])
    print(f"asr={report.asr:.4f} auc={report.auc:.4f} on {sum(report.confusion.values())} targets")
    return EXIT_OK


def cmd_compare(args) -> int:
    config = _load_config(args.config)
    outdir = _outdir(args, config)
    ds = _load_input(args, config)
    kinds = args.kinds or config.get("compare", {}).get("kinds", ["sd", "as_sd", "fe"])
    seeds = args.seeds or config.get("compare", {}).get("seeds")
    acfg = _attack_config(args, config)
    refs = _refs_for(args, config, ds)
    table = evalreport.compare_attacks(ds, refs, kinds, acfg, seeds=seeds)
    text = table.to_text()
    (outdir / "compare.txt").write_text(text)
    table.write_csv(outdir / "compare.csv")
    _write_manifest(
        outdir, "compare",
        {"kinds": list(kinds), "seeds": list(seeds) if seeds else [acfg.train.seed],
         "fraction": refs.fraction, "refs_seed": refs.seed},
        ["compare.txt", "compare.csv"],
    )
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    outdir = _outdir(args, config)
    ds = _load_input(args, config)
    fractions = args.fractions or config.get("sweep", {}).get("fractions", [0.01, 0.04, 0.2, 1.0])
    kinds = args.kinds or config.get("sweep", {}).get("kinds", ["sd", "as_sd", "fe"])
    seeds = args.seeds or config.get("sweep", {}).get("seeds", [0])
    acfg = _attack_config(args, config)
    table = evalreport.fraction_sweep(ds, [float(f) for f in fractions], kinds, acfg,
                                      [int(s) for s in seeds])
    text = table.to_text()
    (outdir / "sweep.txt").write_text(text)
    table.write_csv(outdir / "sweep.csv")
    _write_manifest(outdir, "sweep",
                    {"fractions": [float(f) for f in fractions], "kinds": list(kinds),
                     "seeds": [int(s) for s in seeds]},
                    ["sweep.txt", "sweep.csv"])
    sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle(args) -> int:
    config = _load_config(args.config)
    outdir = _outdir(args, config)
    ds = _load_input(args, config)
    centers_path = _get(config, "dataset", "centers", args.centers, required=True)
    centers_ds = load_dataset(centers_path)
    scfg = synth.SynthConfig(
        k=centers_ds.n, dim=centers_ds.dim, per_identity_members=1,
        per_identity_nonmembers=1, sigma_train=0.0, sigma_test=0.0,
    )
    gt = synth.ground_truth_from_dataset(centers_ds, scfg)
    report = synth.oracle_threshold_attack(ds, gt, kernel=args.kernel)
    (outdir / "report.json").write_text(_report_json(report))
    evalreport.write_roc_csv(report, outdir / "roc.csv")
    _write_manifest(outdir, "oracle", {"kernel": args.kernel, "centers": str(centers_path),
                                       "asr": report.asr, "auc": report.auc},
                    ["report.json", "roc.csv"])
    print(f"oracle asr={report.asr:.4f} auc={report.auc:.4f} (kernel {args.kernel})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="simmia", description=__doc__)
    parser.add_argument("--version", action="version", version=f"simmia {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    def common(p: argparse.ArgumentParser, needs_input: bool = True) -> None:
        p.add_argument("--config", help="TOML config file; flags override its values")
        p.add_argument("-o", "--out", help="output directory")
        if needs_input:
            p.add_argument("--input", help="input dataset (EMB1 container)")

    p = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    common(p, needs_input=False)
    p.add_argument("--k", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--per-identity-members", type=int, dest="per_identity_members")
    p.add_argument("--per-identity-nonmembers", type=int, dest="per_identity_nonmembers")
    p.add_argument("--sigma-train", type=float, dest="sigma_train")
    p.add_argument("--sigma-test", type=float, dest="sigma_test")
    p.add_argument("--center-scale", type=float, dest="center_scale")
    p.add_argument("--seed", type=int)
    p.add_argument("--layout", choices=["mixed", "coherent"])
    p.add_argument("--scale-spread", type=float, dest="scale_spread")
    p.add_argument("--anisotropy", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="convert CSV/JSONL records to the EMB1 container")
    common(p)
    p.add_argument("--format", choices=["csv", "jsonl", "container"], default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="assign attack_train/attack_eval/reference_pool splits")
    common(p)
    p.add_argument("--attack-train-members", type=int, dest="attack_train_members")
    p.add_argument("--attack-train-nonmembers", type=int, dest="attack_train_nonmembers")
    p.add_argument("--attack-eval-members", type=int, dest="attack_eval_members")
    p.add_argument("--attack-eval-nonmembers", type=int, dest="attack_eval_nonmembers")
    p.add_argument("--reference-pool", type=int, dest="reference_pool")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("simvec", help="dump the target-by-anchor distance matrix as CSV")
    common(p)
    p.add_argument("--fraction", type=float)
    p.add_argument("--refs-seed", type=int, dest="refs_seed")
    p.add_argument("--targets", choices=["attack_train", "attack_eval", "all"],
                   default="attack_eval")
    p.set_defaults(func=cmd_simvec)

    p = sub.add_parser("stats", help="per-anchor member/non-member statistics and CDF export")
    common(p)
    p.add_argument("--fraction", type=float)
    p.add_argument("--refs-seed", type=int, dest="refs_seed")
    p.add_argument("--targets", choices=["attack_train", "attack_eval", "all"],
                   default="attack_eval")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train-attack", help="train one attack and write its checkpoint")
    common(p)
    p.add_argument("--kind", required=True, choices=list(attacks.ALL_KIND_NAMES))
    p.add_argument("--fraction", type=float)
    p.add_argument("--refs-seed", type=int, dest="refs_seed")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--train-seed", type=int, dest="train_seed")
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--hidden-width", type=int, dest="hidden_width")
    p.add_argument("--hidden-layers", type=int, dest="hidden_layers")
    p.add_argument("--sample-seed", type=int, dest="sample_seed")
    p.set_defaults(func=cmd_train_attack)

    p = sub.add_parser("eval", help="evaluate a trained attack checkpoint on attack_eval")
    common(p)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train and compare multiple attacks")
    common(p)
    p.add_argument("--kinds", nargs="+", choices=list(attacks.ALL_KIND_NAMES))
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--refs-seed", type=int, dest="refs_seed")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--train-seed", type=int, dest="train_seed")
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--hidden-width", type=int, dest="hidden_width")
    p.add_argument("--hidden-layers", type=int, dest="hidden_layers")
    p.add_argument("--sample-seed", type=int, dest="sample_seed")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="reference-fraction sweep over anchor-dependent attacks")
    common(p)
    p.add_argument("--fractions", nargs="+", type=float)
    p.add_argument("--kinds", nargs="+", choices=["sd", "as_sd", "fe"])
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--hidden-width", type=int, dest="hidden_width")
    p.add_argument("--hidden-layers", type=int, dest="hidden_layers")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="known-center threshold attack on synthetic data")
    common(p)
    p.add_argument("--centers", help="ground-truth sidecar container")
    p.add_argument("--kernel", choices=list(synth.KERNELS), default="inverse_distance")
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"simmia: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, CapacityError) as exc:
        print(f"simmia: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as exc:
        print(f"simmia: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
