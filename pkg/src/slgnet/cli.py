"""Command-line entry point: ``slg <command>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import autodiff as ad
from .lgm import FileEmbedder, embed_caption, write_caption_file, write_embedding_file
from .netpbm import NetpbmError, read_netpbm, write_pgm, write_ppm

log = logging.getLogger("slg")


def _dump(obj, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, sort_keys=False)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _load_config(path: Optional[str], coarse_grid: bool = False, base=None):
    from .harness.config import RunConfig

    cfg = base or RunConfig()
    if path:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise SystemExit(f"{path}: config must be a JSON object")
        cfg = cfg.replace(**raw)
    if coarse_grid:
        cfg = cfg.replace(patch_size=16)
    return cfg


def _embedder(args, cfg):
    from .harness.train import default_embedder

    return FileEmbedder(args.embeddings) if getattr(args, "embeddings", None) else default_embedder(cfg)


def cmd_gradcheck(args) -> int:
    from .harness.gradcheck import gradcheck

    report = gradcheck(args.module, seed=args.seed)
    for r in report.results:
        status = "ok" if r.max_rel_error < report.tolerance else "FAIL"
        print(f"{r.name:18s} max_rel_error={r.max_rel_error:.3e} checked={r.n_checked:4d} {status}")
        if status == "FAIL":
            for entry, err, a, n in r.worst:
                print(f"    {entry}: rel {err:.3e} analytic {a:.6e} numeric {n:.6e}")
    print(f"total {report.seconds:.1f}s")
    if args.out:
        _dump(report.to_dict(), args.out)
    return 0 if report.passed else 1


def cmd_train(args) -> int:
    from .harness.persist import save_model
    from .harness.train import build_datasets, train
    from .plotting import figure_path, plot_history

    cfg = _load_config(args.config, args.coarse_grid)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    datasets = build_datasets(cfg, cfg.optim.seed, _embedder(args, cfg))
    model, part, report = train(cfg, args.mode, datasets=datasets)
    out = report.to_dict()
    if args.out:
        _dump(out, args.out)
        plot_history(report.history, figure_path(args.out, "curves"), title=args.mode)
    else:
        print(json.dumps({k: out[k] for k in ("token_ap", "loss", "params_total", "params_trainable", "condition_breakdown")}, indent=2))
    if args.ckpt:
        save_model(args.ckpt, model, part, cfg, args.mode)
    return 0


def cmd_eval(args) -> int:
    from .harness.persist import load_model
    from .harness.train import build_datasets, evaluate

    model, part, cfg, mode = load_model(args.ckpt)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    _, val = build_datasets(cfg, cfg.optim.seed, _embedder(args, cfg))
    metrics = evaluate(model, val)
    _dump(
        {
            "mode": mode,
            "token_ap": metrics["token_ap"],
            "loss": metrics["loss"],
            "params_total": part.params_total,
            "params_trainable": part.params_trainable,
            "condition_breakdown": metrics["condition_breakdown"],
        },
        args.out,
    )
    return 0


def cmd_ablate(args) -> int:
    from .harness.ablation import STABILITY_EPOCH, ablate, desk_config
    from .plotting import figure_path, plot_ablation_table, plot_tuning_curves

    seeds = _parse_seeds(args.seeds)
    cfg = _load_config(args.config, base=desk_config())
    result = ablate(seeds, cfg)
    report = result.to_dict()
    _dump(report, args.out)
    plot_ablation_table(report["table"], figure_path(args.out, "table"))
    plot_tuning_curves(report["tuning"], figure_path(args.out, "tuning"), STABILITY_EPOCH)
    for name, c in report["criteria"].items():
        print(f"{name:20s} {'PASS' if c['pass'] else 'FAIL'}")
    return 0


def _parse_seeds(text: str) -> List[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise SystemExit(f"--seeds must be comma-separated integers, got {text!r}") from exc


PAIR_FILES = ("visible.ppm", "thermal.pgm")


def cmd_demo_structure(args) -> int:
    from .harness.data import make_sample
    from .plotting import plot_structure_maps
    from .structure import StructureEncoder

    src, dst = Path(args.inp), Path(args.out)
    if args.make_example:
        src.mkdir(parents=True, exist_ok=True)
        s = make_sample(args.seed, 0, condition="night")
        write_ppm(src / PAIR_FILES[0], s.visible)
        write_pgm(src / PAIR_FILES[1], s.thermal[0], normalize=False)
    try:
        visible = read_netpbm(src / PAIR_FILES[0])
        thermal = read_netpbm(src / PAIR_FILES[1])
    except FileNotFoundError as exc:
        raise SystemExit(f"pair directory needs {PAIR_FILES[0]} and {PAIR_FILES[1]}: {exc}") from exc
    except NetpbmError as exc:
        raise SystemExit(str(exc)) from exc
    if visible.ndim != 3 or thermal.ndim != 2 or visible.shape[1:] != thermal.shape:
        raise SystemExit(f"misaligned pair: visible {visible.shape}, thermal {thermal.shape}")
    enc = StructureEncoder(width=8, seed=args.seed)
    with ad.no_grad():
        pyr = enc.forward(visible[None], thermal[None, None])
    dst.mkdir(parents=True, exist_ok=True)
    maps = {"grad_v": [], "grad_t": [], "grad_ref": [], "gate_v": [], "gate_t": []}
    for l, a in enumerate(pyr.alignment, 1):
        for kind, t in (("grad_v", a.grad_v), ("grad_t", a.grad_t), ("grad_ref", a.grad_ref), ("gate_v", a.gate_v), ("gate_t", a.gate_t)):
            img = t.data[0, 0]
            maps[kind].append(img)
            write_pgm(dst / f"level{l}_{kind}.pgm", img)
    plot_structure_maps(maps, dst / "structure.png")
    print(f"wrote {5 * len(pyr.alignment)} maps to {dst}")
    return 0


def cmd_export_captions(args) -> int:
    from .harness.data import synthesize
    from .harness.train import default_embedder

    cfg = _load_config(args.config)
    bcfg = cfg.model.backbone
    samples = synthesize(
        args.n, cfg.data.condition_mix, args.seed, bcfg.image_size, bcfg.grid, cfg.data.caption_policy
    )
    write_caption_file(args.captions, {s.sample_id: s.caption for s in samples})
    if args.embeddings:
        emb = default_embedder(cfg)
        table = {}
        for s in samples:
            mats = embed_caption(s.caption, emb)
            table[s.sample_id] = dict(zip(("env", "type", "obj", "therm"), mats))
        write_embedding_file(args.embeddings, table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    from .harness.gradcheck import CASES
    from .harness.model import MODES

    p = argparse.ArgumentParser(prog="slg", description="Structure- and language-guided RGB/IR adapter on a toy backbone.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference check of every module's backward pass")
    g.add_argument("--module", default="all", choices=["all", *CASES])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="also write the JSON report here")
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="train one mode on the synthetic task")
    t.add_argument("--mode", required=True, choices=MODES)
    t.add_argument("--config", help="JSON run config; unknown keys are rejected")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="JSON report path (a curves figure is written next to it)")
    t.add_argument("--ckpt", help="save the trained model here")
    t.add_argument("--embeddings", help="caption-embedding JSON keyed by sample id")
    t.add_argument("--coarse-grid", action="store_true", help="patch size 16 instead of 8 (4x4 tokens on 64x64)")
    t.add_argument("--paper-ratio", dest="coarse_grid", action="store_true", help=argparse.SUPPRESS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on its validation split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--embeddings")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="component x caption-policy grid, tuning paradigms, caption causality")
    a.add_argument("--seeds", default="1,2,3")
    a.add_argument("--out", required=True)
    a.add_argument("--config", help="overrides on top of the desk-scale ablation schedule")
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("demo-structure", help="write gradient and gate maps of an image pair as PGM")
    d.add_argument("--in", dest="inp", required=True, help=f"directory holding {PAIR_FILES[0]} and {PAIR_FILES[1]}")
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--make-example", action="store_true", help="first write a synthetic night pair into --in")
    d.set_defaults(func=cmd_demo_structure)

    c = sub.add_parser("export-captions", help="write synthetic captions (JSONL) and their embeddings (JSON)")
    c.add_argument("--n", type=int, default=16)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--config")
    c.add_argument("--captions", required=True)
    c.add_argument("--embeddings")
    c.set_defaults(func=cmd_export_captions)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    from .harness.config import ConfigError
    from .checkpoint import CheckpointError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"slg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
