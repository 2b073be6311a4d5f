"""Command-line surface.

Subcommands cover the full pipeline: field fitting, anchor fusion,
training, evaluation, the episode and ablation harnesses, synthetic
world generation, and the gradient self-check. Every command is a pure
function of its input files, flags, and seed; diagnostics go to stderr
and machine-readable output goes to files only.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import report as rpt
from .anchors import build_class_fields, build_clip_field, fuse_anchors
from .embd import labels_from_meta, read_embd, write_embd
from .errors import (
    EmbdFormatError,
    NumericalError,
    SpheretuneError,
    ValidationError,
)
from .evaluation import EpisodeSpec, base_to_novel, predict, run_episodes
from .gradcheck import TOLERANCE, run_gradcheck
from .losses import PromptState
from .manifold import EmbeddingMatrix
from .synth import ablation_config, ablation_suite, generate_world
from .training import train
from .vmf import estimate_vmf

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _ensure_dir(path: str | Path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_matrix(path: str, expect_normalized: bool = True):
    matrix, meta = read_embd(path)
    if expect_normalized and not matrix.normalized:
        raise ValidationError(f"{path}: rows must be L2-normalized (flag bit unset)")
    return matrix, meta


def cmd_fit_vmf(args) -> int:
    matrix, _ = _read_matrix(args.input)
    params = estimate_vmf(matrix, eps=args.eps)
    rpt.write_json(args.out, rpt.vmf_params_doc(params))
    _log(f"fit-vmf: kappa={params.kappa:.6g} R={params.mean_resultant_length:.6g} d={params.dims}")
    return EXIT_OK


def _load_prompt_files(prompts_dir: str) -> list:
    """Per-class prompt matrices, ordered by sidecar class_index."""
    directory = Path(prompts_dir)
    files = sorted(directory.glob("*.embd"))
    if not files:
        raise ValidationError(f"no .embd files in {prompts_dir}")
    entries = []
    for f in files:
        matrix, meta = _read_matrix(str(f))
        index = meta.get("class_index") if meta else None
        if index is None:
            raise ValidationError(f"{f}: sidecar with class_index is required")
        entries.append((int(index), f.name, matrix))
    entries.sort(key=lambda e: e[0])
    indices = [e[0] for e in entries]
    if indices != list(range(len(entries))):
        raise ValidationError(f"class_index values must be dense 0..C-1, got {indices}")
    return [e[2] for e in entries]


def cmd_anchors(args) -> int:
    vocab, _ = _read_matrix(args.vocab)
    prompts = _load_prompt_files(args.prompts)
    clip_field = build_clip_field(vocab, eps=args.eps)
    class_fields = build_class_fields(prompts, eps=args.eps)
    anchor_set = fuse_anchors(clip_field, class_fields, kappa_cap=args.kappa_cap)
    meta = {
        "kind": "anchors",
        "classes": anchor_set.classes,
        "dims": anchor_set.dims,
        "vocabulary_field": rpt.vmf_params_doc(clip_field),
        "class_fields": [rpt.vmf_params_doc(f) for f in class_fields],
    }
    write_embd(anchor_set.anchor_matrix(), args.out, meta=meta)
    _log(f"anchors: wrote {anchor_set.classes} anchors (d={anchor_set.dims}) to {args.out}")
    return EXIT_OK


def _load_anchor_set(path: str):
    matrix, meta = _read_matrix(path)
    if not meta or "class_fields" not in meta or "vocabulary_field" not in meta:
        raise ValidationError(f"{path}: anchors sidecar with field provenance is required")

    def params(doc):
        from .manifold import UnitVector
        from .vmf import VmfParams

        return VmfParams(
            mu=UnitVector(np.asarray(doc["mu"], dtype=np.float64)),
            kappa=float(doc["kappa"]),
            mean_resultant_length=doc.get("mean_resultant_length"),
            label=doc.get("label"),
        )

    from .anchors import AnchorSet

    return AnchorSet(
        clip_field=params(meta["vocabulary_field"]),
        class_fields=tuple(params(doc) for doc in meta["class_fields"]),
        anchors=matrix.data,
    )


def _load_labeled_images(images_path: str, labels_path: str):
    matrix, _ = _read_matrix(images_path)
    meta = cfgmod.load_json(labels_path, "labels file")
    labels = labels_from_meta(meta, matrix.rows)
    return matrix, labels, meta


def cmd_train(args) -> int:
    images, labels, _ = _load_labeled_images(args.images, args.labels)
    anchors = _load_anchor_set(args.anchors)
    cfg = cfgmod.train_config_from_dict(cfgmod.load_json(args.config, "train config"))
    out = _ensure_dir(args.out)
    rpt.write_json(out / "config.json", cfgmod.train_config_to_dict(cfg))

    result = train(images, labels, anchors, cfg)
    rpt.write_train_report(result, out)
    final = result.final_state
    write_embd(
        EmbeddingMatrix(final.normalized_prompts(), normalized=True),
        out / "prompts.embd",
        meta={"kind": "prompts", "classes": final.classes, "dims": final.dims,
              "state": rpt.prompt_state_doc(final)},
    )
    if not args.no_figures:
        rpt.render_train_curves(out / "training.png", result)
    last = result.steps[-1]
    _log(f"train: {cfg.total_steps} steps, final loss {last.loss:.6g}, "
         f"final batch accuracy {last.batch_accuracy:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    images, labels, _ = _load_labeled_images(args.images, args.labels)
    prompts, _ = _read_matrix(args.prompts)
    if labels.size and labels.max() >= prompts.rows:
        raise ValidationError(f"label {labels.max()} out of range for {prompts.rows} prompt rows")
    pred, _probs = predict(images, prompts.data, tau_cls=args.tau_cls)
    classes = prompts.rows
    confusion = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    accuracy = float(np.mean(pred == labels))
    out = _ensure_dir(args.out)
    row_totals = confusion.sum(axis=1)
    per_class = np.divide(np.diag(confusion), row_totals,
                          out=np.zeros(classes), where=row_totals > 0)
    rpt.write_json(out / "eval.json", {
        "accuracy": accuracy,
        "per_class_accuracy": [float(a) for a in per_class],
        "samples": int(labels.size),
        "tau_cls": args.tau_cls,
    })
    header = ["true_class"] + [f"pred_{c}" for c in range(classes)]
    rows = [[c] + [int(v) for v in confusion[c]] for c in range(classes)]
    rpt.write_csv(out / "confusion.csv", header, rows)
    _log(f"eval: accuracy {accuracy:.4f} over {labels.size} samples")
    return EXIT_OK


def cmd_episodes(args) -> int:
    images, labels, _ = _load_labeled_images(args.images, args.labels)
    anchors = _load_anchor_set(args.anchors)
    cfg = cfgmod.train_config_from_dict(cfgmod.load_json(args.config, "train config"))
    shots, base_spec, config_rows = cfgmod.episodes_job_from_dict(
        cfgmod.load_json(args.spec, "episodes spec")
    )
    out = _ensure_dir(args.out)
    rpt.write_json(out / "config.json", cfgmod.train_config_to_dict(cfg))

    names, results = [], []
    for row in config_rows:
        row_cfg = ablation_config(cfg, (row["sce"], row["anchor"], row["contrast"]))
        row_results = []
        for k in shots:
            espec = replace(base_spec, shots=k)
            row_results.append(run_episodes(images, labels, anchors, espec, row_cfg))
        names.append(row["name"])
        results.append(row_results)
    rpt.write_episodes_csv(out / "episodes.csv", names, shots, results)
    if not args.no_figures:
        rpt.render_episode_curves(out / "episodes.png", names, shots, results)
    for name, row_results in zip(names, results):
        cells = ", ".join(
            f"K={k}: {r.accuracy_mean:.4f}+-{r.accuracy_std:.4f}" for k, r in zip(shots, row_results)
        )
        _log(f"episodes[{name}]: {cells}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = cfgmod.world_spec_from_dict(cfgmod.load_json(args.world, "world spec"))
    world = generate_world(spec)
    out = _ensure_dir(args.out)
    rpt.write_json(out / "world.json", cfgmod.world_spec_to_dict(spec))
    write_embd(world.vocab, out / "vocab.embd", meta={"kind": "vocabulary"})
    prompts_dir = _ensure_dir(out / "prompts")
    for c, prompts in enumerate(world.prompts_per_class):
        write_embd(
            prompts,
            prompts_dir / f"class_{c:03d}.embd",
            meta={"kind": "prompts", "class_index": c, "class_name": f"class_{c}"},
        )
    write_embd(
        world.images,
        out / "images.embd",
        meta={
            "kind": "images",
            "labels": [int(v) for v in world.labels],
            "class_names": [f"class_{c}" for c in range(spec.classes)],
        },
    )
    rpt.write_json(out / "ground_truth.json", {
        "class_directions": [[float(x) for x in row] for row in world.class_directions],
        "prompt_directions": [[float(x) for x in row] for row in world.prompt_directions],
        "image_directions": [[float(x) for x in row] for row in world.image_directions],
    })
    _log(f"synth: wrote world (C={spec.classes}, d={spec.dims}) to {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    spec = cfgmod.world_spec_from_dict(cfgmod.load_json(args.world, "world spec"))
    cfg = cfgmod.train_config_from_dict(cfgmod.load_json(args.config, "train config"))
    shots = tuple(int(s) for s in args.shots.split(","))
    table = ablation_suite(spec, cfg, shots=shots, trials=args.trials)
    out = _ensure_dir(args.out)
    rpt.write_json(out / "config.json", cfgmod.train_config_to_dict(cfg))
    rpt.write_json(out / "world.json", cfgmod.world_spec_to_dict(spec))
    rpt.write_ablation_csv(out / "ablation.csv", table)
    if not args.no_figures:
        rpt.render_ablation_bars(out / "ablation.png", table)
    acc = table.accuracy()
    for name, row in zip(table.row_names, acc):
        _log(f"ablate[{name}]: " + ", ".join(f"K={k}: {a:.4f}" for k, a in zip(table.shots, row)))
    return EXIT_OK


def cmd_base_to_novel(args) -> int:
    images, labels, _ = _load_labeled_images(args.images, args.labels)
    anchors = _load_anchor_set(args.anchors)
    cfg = cfgmod.train_config_from_dict(cfgmod.load_json(args.config, "train config"))
    base = [int(s) for s in args.base.split(",")]
    novel = [int(s) for s in args.novel.split(",")]
    spec = EpisodeSpec(shots=args.shots, trials=args.trials, seed=args.seed)
    result = base_to_novel(images, labels, anchors, base, novel, spec, cfg)
    out = _ensure_dir(args.out)
    rpt.write_json(out / "base_to_novel.json", rpt.base_novel_doc(result))
    _log(f"base-to-novel: base {result.base_accuracy:.4f}, novel {result.novel_accuracy:.4f}, "
         f"HM {result.harmonic_mean:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.instances == 1:
        from .gradcheck import check_instance

        inst = check_instance(args.d, args.classes, args.batch, seed=args.seed)
        worst = inst.worst
        by_part = inst.errors
    else:
        report = run_gradcheck(
            instances=args.instances,
            seed=args.seed,
            max_dims=args.d,
            max_classes=args.classes,
            max_batch=args.batch,
        )
        worst = report.worst
        by_part = report.worst_by_part
    for part, err in by_part.items():
        _log(f"gradcheck[{part}]: max relative error {err:.3e}")
    if args.out:
        rpt.write_json(args.out, {"worst": worst, "by_part": by_part, "tolerance": TOLERANCE})
    if worst > TOLERANCE:
        _log(f"gradcheck FAILED: {worst:.3e} > {TOLERANCE:.1e}")
        raise NumericalError(f"gradient check failed: {worst:.3e} > {TOLERANCE:.1e}")
    _log(f"gradcheck passed: worst {worst:.3e} <= {TOLERANCE:.1e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spheretune",
        description="Hyperspherical prompt optimization: vMF fields, fused anchors, three-loss training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-vmf", help="fit a vMF field to an embedding file")
    p.add_argument("--input", required=True)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_vmf)

    p = sub.add_parser("anchors", help="estimate fields and fuse per-class anchors")
    p.add_argument("--vocab", required=True)
    p.add_argument("--prompts", required=True, help="directory of per-class prompt .embd files")
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--kappa-cap", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_anchors)

    p = sub.add_parser("train", help="train prompts against labeled images")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="classify labeled images with trained prompts")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--prompts", required=True)
    p.add_argument("--tau-cls", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("episodes", help="K-shot episode table over configs")
    p.add_argument("--spec", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_episodes)

    p = sub.add_parser("synth", help="generate a synthetic world to EMBD files")
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="run the loss-configuration ablation table")
    p.add_argument("--world", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--shots", default="1,4,16")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("base-to-novel", help="train on base classes, score novel zero-shot")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--base", required=True, help="comma-separated base class indices")
    p.add_argument("--novel", required=True, help="comma-separated novel class indices")
    p.add_argument("--shots", type=int, default=16)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_base_to_novel)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmbdFormatError as exc:
        _log(f"error: {type(exc).__name__}: {exc}")
        return EXIT_IO
    except OSError as exc:
        _log(f"i/o error: {exc}")
        return EXIT_IO
    except NumericalError as exc:
        _log(f"numerical failure: {type(exc).__name__}: {exc}")
        return EXIT_NUMERICAL
    except SpheretuneError as exc:
        _log(f"error: {type(exc).__name__}: {exc}")
        return EXIT_VALIDATION


def entry() -> None:
    sys.exit(main())
