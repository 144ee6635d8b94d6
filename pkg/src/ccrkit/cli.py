"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.  Every command that
writes artifacts also writes ``manifest.json`` into its output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
from pathlib import Path

import matplotlib
import numpy as np
import scipy

from . import __version__
from . import adsb
from . import cdm as cdm_mod
from .checks import TOLERANCE, run_all
from .cmdclf import CommandClassifierModel, train_classifier
from .config import ConfigError, RunConfig, load_config
from .corpus import (
    CorpusConfig,
    RegionModel,
    default_region_model,
    generate_command_pairs,
    generate_corpus,
    pairs_from_samples,
    read_jsonl,
    split_dataset,
    write_jsonl,
)
from .corruption import NoiseConfig, clip_samples, corrupt_samples, drop_transcript
from .experiments import export_csv, missing_table, read_csv, run_suite
from .fusion import Components, FusionModel, identify, train_identifier
from .matcher import MatcherModel, train_matcher
from .plotting import plot_experiments

log = logging.getLogger("ccrkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; route it through our exit-code contract
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n\n{self.format_help()}")


# ---------------------------------------------------------------------------
# helpers


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    return cfg


def _region(cfg: RunConfig) -> RegionModel:
    f = cfg.corpus.region_file
    return RegionModel.from_dict(json.loads(Path(f).read_text("utf-8"))) if f else default_region_model()


def _seed(args, cfg: RunConfig) -> int:
    return args.seed if args.seed is not None else cfg.seeds[0]


def _out_dir(args, cfg: RunConfig | None = None) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output_dir if cfg else ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out_dir: Path, argv: list[str], cfg: RunConfig | None, seeds, artifacts) -> Path:
    """Records what produced the directory; merged per subcommand so reruns overwrite."""
    path = Path(out_dir) / "manifest.json"
    manifest = json.loads(path.read_text("utf-8")) if path.exists() else {}
    manifest.setdefault("versions", {})
    manifest["versions"] = {
        "ccrkit": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }
    manifest.setdefault("commands", {})[argv[0]] = {
        "argv": argv,
        "config_digest": cfg.digest() if cfg else None,
        "config": cfg.to_dict() if cfg else None,
        "seeds": list(seeds),
        "artifacts": sorted(str(a) for a in artifacts),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _save(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj.to_dict()), encoding="utf-8")
    return path


def _load(cls, path):
    return cls.from_dict(json.loads(Path(path).read_text("utf-8")))


def _train_config(args, section):
    """Hyperparameter section with ``--epochs``/``--lr`` overrides applied."""
    changes = {k: getattr(args, k) for k in ("epochs", "lr") if getattr(args, k, None) is not None}
    return dataclasses.replace(section, **changes)


def _components(args) -> Components:
    return Components(
        _load(MatcherModel, args.matcher),
        _load(CommandClassifierModel, args.cmdclf),
        _load(cdm_mod.Cdm, args.cdm),
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, argv) -> int:
    cfg = _config(args)
    c = cfg.corpus
    out = _out_dir(args, cfg)
    written = []
    for seed in cfg.seeds:
        corpus = generate_corpus(
            seed, c.size, _region(cfg),
            config=CorpusConfig(c.plane_count_min, c.plane_count_max, c.p_callsign_first, c.p_two_commands),
        )
        for name, part in zip(("train", "val", "test"), split_dataset(corpus, c.split, seed)):
            path = out / f"seed{seed}" / f"{name}.jsonl"
            path.parent.mkdir(parents=True, exist_ok=True)
            write_jsonl(part, path)
            written.append(path)
    write_manifest(out, argv, cfg, cfg.seeds, written)
    print(f"wrote {len(written)} files under {out}")
    return 0


def cmd_corrupt(args, argv) -> int:
    cfg = load_config(args.config)
    samples = read_jsonl(args.input)
    if args.clip_n:
        samples = clip_samples(samples, args.clip_n)
    if args.target_wer:
        c = cfg.corruption
        noise = NoiseConfig(args.target_wer, c.op_mix, seed=args.seed or 0,
                            p_confusable=c.p_confusable, calibration_size=c.calibration_size)
        samples = corrupt_samples(samples, noise)
    if args.drop_transcripts:
        samples = [drop_transcript(s) for s in samples]
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(samples, out)
    write_manifest(out.parent, argv, cfg, [args.seed or 0], [out])
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_train_matcher(args, argv) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    model = train_matcher(read_jsonl(args.train), read_jsonl(args.val),
                          _train_config(args, cfg.models.matcher), seed=seed)
    path = _save(model, args.output)
    write_manifest(path.parent, argv, cfg, [seed], [path])
    print(f"matcher saved to {path}")
    return 0


def cmd_train_cmdclf(args, argv) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    model = train_classifier(read_jsonl(args.train), read_jsonl(args.val),
                             _train_config(args, cfg.models.cmdclf), seed=seed)
    path = _save(model, args.output)
    write_manifest(path.parent, argv, cfg, [seed], [path])
    print(f"command classifier saved to {path}")
    return 0


def cmd_build_cdm(args, argv) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    sec = cfg.models.cdm
    if args.samples:
        pairs = pairs_from_samples(read_jsonl(args.samples))
    else:
        pairs = generate_command_pairs([seed, 51], _region(cfg),
                                       args.pairs_per_command or sec.pairs_per_command)
    cdm = cdm_mod.build_cdm(pairs, cdm_mod.FilterConfig(args.filter or sec.filter), args.dims or sec.dims)
    path = _save(cdm, args.output)
    write_manifest(path.parent, argv, cfg, [seed], [path])
    print(f"CDM ({len(pairs)} pairs) saved to {path}")
    return 0


def cmd_train_fusion(args, argv) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    fusion = train_identifier(read_jsonl(args.train), read_jsonl(args.val), _components(args),
                              _train_config(args, cfg.models.fusion), seed=seed)
    path = _save(fusion, args.output)
    write_manifest(path.parent, argv, cfg, [seed], [path])
    print(f"fusion model saved to {path}")
    return 0


def cmd_identify(args, argv) -> int:
    components = _components(args)
    fusion = _load(FusionModel, args.fusion)
    samples = read_jsonl(args.input)
    rows, correct = [], 0
    for s in samples:
        icao, ranked = identify(s, components, fusion)
        correct += icao == s.gold_icao
        rows.append({"id": s.id, "predicted": icao, "gold": s.gold_icao,
                     "top": [{"callsign": c.callsign, "score": c.fused} for c in ranked[: args.top]]})
    text = "".join(json.dumps(r) + "\n" for r in rows)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if samples:
        print(f"call-sign accuracy {correct / len(samples):.4f} over {len(samples)} samples",
              file=sys.stderr)
    return 0


def cmd_eval(args, argv) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    cache = Path(args.cache) if args.cache else None
    records = run_suite(cfg, cache_dir=cache, jobs=args.jobs)
    csv_path = out / "results.csv"
    export_csv(records, csv_path)
    written = [csv_path]
    if any(r.experiment == "missing" for r in records):
        table = out / "missing_transcript.md"
        table.write_text(missing_table(records), encoding="utf-8")
        written.append(table)
    if not args.no_plots:
        written += plot_experiments(records, out / "figures")
    write_manifest(out, argv, cfg, cfg.seeds, written)
    print(f"{len(records)} records written to {csv_path}")
    return 0


def cmd_plot(args, argv) -> int:
    records = read_csv(args.csv)
    out = Path(args.out) if args.out else Path(args.csv).parent / "figures"
    written = plot_experiments(records, out)
    write_manifest(out, argv, None, sorted({r.seed for r in records}), written)
    for p in written:
        print(p)
    return 0


def cmd_fetch_adsb(args, argv) -> int:
    origin = adsb.AirportOrigin(args.lat0, args.lon0)
    raw = adsb.fetch_states(args.adsb_source, args.time, adsb.degree_bbox(origin))
    states = adsb.parse_state_vectors(raw)
    t = args.time if args.time is not None else max((s.time for s in states), default=0.0)
    planes = adsb.states_to_planes(states, origin, t)
    doc = {"time": t, "origin": [args.lat0, args.lon0],
           "planes": [{"callsign": p.callsign, "x": p.x, "y": p.y, "z": p.z, "t": p.t} for p in planes]}
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    write_manifest(out.parent, argv, None, [], [out])
    print(f"{len(planes)} planes inside the box written to {out}")
    return 0


def cmd_gradcheck(args, argv) -> int:
    ok = True
    for res in run_all(args.seed or 0):
        r = res.report
        print(f"{res.name}: max relative error {r.max_rel_error:.3e} over {r.checked} entries "
              f"(worst {r.worst}, {r.skipped_kinks} skipped at kinks)")
        ok &= res.ok
    print("PASS" if ok else f"FAIL: tolerance {TOLERANCE:g}")
    return 0 if ok else 2


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ccrkit", description="Call-sign recognition toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    def add(name, fn, help_, config=True, seed=True):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=fn)
        if config:
            sp.add_argument("--config", help="JSON run configuration (defaults when omitted)")
        if seed:
            sp.add_argument("--seed", type=int, help="overrides the configured seeds")
        return sp

    def add_schedule(sp):
        sp.add_argument("--epochs", type=int, help="overrides the configured epoch count")
        sp.add_argument("--lr", type=float, help="overrides the configured learning rate")

    sp = add("gen-data", cmd_gen_data, "generate the synthetic corpus as train/val/test JSONL")
    sp.add_argument("--out", help="output directory (default: config output_dir)")

    sp = add("corrupt", cmd_corrupt, "apply ASR noise, front clipping or transcript removal")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--target-wer", type=float, default=0.0)
    sp.add_argument("--clip-n", type=int, default=0)
    sp.add_argument("--drop-transcripts", action="store_true")

    for name, fn, what in (("train-matcher", cmd_train_matcher, "call-sign matcher"),
                           ("train-cmdclf", cmd_train_cmdclf, "command classifier")):
        sp = add(name, fn, f"train the {what}")
        sp.add_argument("--train", required=True)
        sp.add_argument("--val", required=True)
        sp.add_argument("--output", required=True)
        add_schedule(sp)

    sp = add("build-cdm", cmd_build_cdm, "build command distribution maps")
    sp.add_argument("--samples", help="JSONL samples to take coordinate-command pairs from "
                                      "(default: synthetic pairs from the region model)")
    sp.add_argument("--filter", choices=cdm_mod.FILTER_KINDS)
    sp.add_argument("--dims", choices=("2d", "3d"))
    sp.add_argument("--pairs-per-command", type=int, help="synthetic pairs drawn per command type")
    sp.add_argument("--output", required=True)

    def add_components(sp):
        sp.add_argument("--matcher", required=True)
        sp.add_argument("--cmdclf", required=True)
        sp.add_argument("--cdm", required=True)

    sp = add("train-fusion", cmd_train_fusion, "train the fusion identifier on frozen components")
    sp.add_argument("--train", required=True)
    sp.add_argument("--val", required=True)
    sp.add_argument("--output", required=True)
    add_schedule(sp)
    add_components(sp)

    sp = add("identify", cmd_identify, "predict call-signs for JSONL samples", config=False, seed=False)
    sp.add_argument("--input", required=True)
    add_components(sp)
    sp.add_argument("--fusion", required=True)
    sp.add_argument("--top", type=int, default=3, help="ranked candidates to print per sample")
    sp.add_argument("--output", "--out", dest="output", help="JSONL predictions (default: stdout)")

    sp = add("eval", cmd_eval, "run the experiment suite and write CSV, table and SVG figures")
    sp.add_argument("--out", help="output directory (default: config output_dir)")
    sp.add_argument("--jobs", type=int, default=1, help="seeds evaluated concurrently")
    sp.add_argument("--cache", help="directory for trained-model checkpoints")
    sp.add_argument("--no-plots", action="store_true")

    sp = add("plot", cmd_plot, "render SVG figures from a results CSV", config=False, seed=False)
    sp.add_argument("--csv", required=True)
    sp.add_argument("--out")

    sp = add("fetch-adsb", cmd_fetch_adsb, "fetch and localise ADS-B state vectors", config=False, seed=False)
    sp.add_argument("--adsb-source", required=True, help="file path or /states/all URL")
    sp.add_argument("--lat0", type=float, required=True)
    sp.add_argument("--lon0", type=float, required=True)
    sp.add_argument("--time", type=int, help="unix time to query and align to")
    sp.add_argument("--output", required=True)

    add("gradcheck", cmd_gradcheck, "finite-difference gradient checks of all networks", config=False)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    sub_argv = argv[argv.index(args.command):]
    try:
        return args.func(args, sub_argv)
    except (ConfigError, ValueError, OSError, KeyError, adsb.FetchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
