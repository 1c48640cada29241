"""``ssrcnn`` command line.

Every subcommand shares the run flags (seed, config, sizes, profile...)
and writes its artifacts atomically with a version + resolved-config
header. Failures exit nonzero with a JSON object on stderr.
"""
from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import io as _io
import json
import logging
import math
import os
from pathlib import Path
import sys

import numpy as np
from scipy.special import expit

from . import __version__
from .assignment import two_stage_assign
from .calibration import FrequencyTable, logit_adjust, predicate_counts, adaptive_gammas, object_triplet_counts
from .config import ConfigError, RunConfig
from .fit import fit_direct, random_predictions
from .heads import HeadDims, cascade_forward, init_head_weights, init_queries, load_weights, save_weights
from .io import (Dataset, PredictionImage, SchemaError, Vocab, atomic_write_text, header, load_predictions,
                 load_scene_file, load_seen_set, predictions_to_json, save_scene_file, write_json)
from .losses import Criterion, FocalParams
from .metrics import evaluate, mean_recall_at_k, recall_at_k, weighted_score
from .synth import PerturbModel, SceneConfig, generate_scene, perturb_detections, synthetic_predictions
from .types import RankedTriplet

log = logging.getLogger("ssrcnn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ----------------------------------------------------------------------------
# configuration plumbing

def _k_list(text: str) -> list[int]:
    try:
        ks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid K list {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("K values must be positive integers")
    return ks


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run options")
    g.add_argument("--seed", type=int)
    g.add_argument("--config", help="JSON or YAML RunConfig file; flags override it")
    g.add_argument("--images", type=int)
    g.add_argument("--queries", type=int, help="triplet query slots N")
    g.add_argument("--heads", type=int, help="cascaded heads")
    g.add_argument("--tau", type=float)
    g.add_argument("--mu", type=float)
    g.add_argument("--k-at", type=_k_list, action="append", help="repeatable; accepts 20,50,100")
    g.add_argument("--profile", choices=("vg", "oi"))
    g.add_argument("--graph-constraint", choices=("on", "off"))
    g.add_argument("--jobs", type=int)
    g.add_argument("--out", help="output file")


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    ks = None
    if args.k_at:
        ks = tuple(sorted({k for group in args.k_at for k in group}))
    gc = None if args.graph_constraint is None else args.graph_constraint == "on"
    return cfg.override(seed=args.seed, images=args.images, queries=args.queries, heads=args.heads,
                        tau=args.tau, mu=args.mu, k_at=ks, profile=args.profile, graph_constraint=gc,
                        jobs=args.jobs, steps=getattr(args, "steps", None))


def scene_config(cfg: RunConfig) -> SceneConfig:
    return SceneConfig(min_objects=cfg.min_objects, max_objects=cfg.max_objects,
                       num_object_classes=cfg.num_object_classes, num_predicates=cfg.num_predicates,
                       relation_density=cfg.relation_density, max_relations=cfg.max_relations,
                       label_skew=cfg.label_skew, seed=cfg.seed, channels=cfg.toy.channels)


def perturb_model(cfg: RunConfig) -> PerturbModel:
    return PerturbModel(jitter=cfg.jitter, flip_prob=cfg.flip_prob, drop_prob=cfg.drop_prob,
                        spurious_rate=cfg.spurious_rate, seed=cfg.seed)


def criterion(cfg: RunConfig, scenes=None) -> Criterion:
    gamma = cfg.focal.gamma
    if cfg.focal.adaptive:
        if not scenes:
            raise ConfigError("adaptive focal gamma needs a dataset to count triplet frequencies")
        counts = object_triplet_counts(scenes, cfg.num_object_classes)
        gamma = adaptive_gammas(FrequencyTable.from_counts(counts, smoothing=1.0).freqs, cfg.mu, cfg.focal.clamp)
    return Criterion(coeffs=cfg.coeffs, obj_focal=FocalParams(cfg.focal.alpha, gamma),
                     rel_focal=FocalParams(cfg.focal.alpha, cfg.focal.gamma),
                     cls_cost=cfg.cls_cost, mode=cfg.assign_mode)


def _pmap(fn, items, jobs: int):
    """Order-preserving map, in worker processes when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


def _out_path(args, default: str) -> Path:
    return Path(args.out or default)


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_suffix(suffix)


def _write_csv(path: Path, header_row, rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header_row)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def _table(rows: list[tuple], title: str = "") -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    lines = [title] if title else []
    for r in rows:
        lines.append("  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)
                               for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines)


def _fmt(v) -> str:
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.2f}"


def _scenes(args, cfg: RunConfig):
    """Scenes from ``--data`` if given, else generated from the seed."""
    if getattr(args, "data", None):
        ds = load_scene_file(args.data)
        scenes = ds.scenes if args.images is None else ds.scenes[:cfg.images]
        return scenes, ds.vocab
    sc = scene_config(cfg)
    scenes = [generate_scene(sc, i)[0] for i in range(cfg.images)]
    return scenes, Vocab.default(cfg.num_object_classes, cfg.num_predicates)


# ----------------------------------------------------------------------------
# subcommands

def _gen_one(job):
    cfg, i, exact = job
    scene, _ = generate_scene(scene_config(cfg), i)
    m = PerturbModel(0, 0, 0, 0, 0, cfg.seed) if exact else perturb_model(cfg)
    trips, logits = synthetic_predictions(scene, m, cfg.num_object_classes, cfg.num_predicates, i)
    return scene, PredictionImage(scene.image_id, scene.width, scene.height, trips, logits)


def cmd_gen(args, cfg: RunConfig) -> dict:
    results = _pmap(_gen_one, [(cfg, i, args.exact) for i in range(cfg.images)], cfg.jobs)
    vocab = Vocab.default(cfg.num_object_classes, cfg.num_predicates)
    out = _out_path(args, "dataset.json")
    save_scene_file(out, Dataset([s for s, _ in results], vocab), cfg.to_dict())
    written = [str(out)]
    if args.predictions:
        write_json(args.predictions, predictions_to_json([p for _, p in results], vocab, cfg.to_dict()))
        written.append(args.predictions)
    return {"written": written, "images": cfg.images}


def _assign_one(job):
    cfg, crit, scene, index = job
    preds = random_predictions(cfg.queries, cfg.num_object_classes, cfg.num_predicates, cfg.seed + index)
    aux = perturb_detections(scene, perturb_model(cfg), cfg.num_object_classes, index)
    res = two_stage_assign(preds, scene, aux, crit)
    return {"image_id": scene.image_id, "num_gt": len(res.gt_triplets), "num_aux": len(aux), **res.to_dict()}


def cmd_assign(args, cfg: RunConfig) -> dict:
    scenes, _ = _scenes(args, cfg)
    if not scenes:
        raise ConfigError("no images to assign")
    crit = criterion(cfg, scenes)
    images = _pmap(_assign_one, [(cfg, crit, s, i) for i, s in enumerate(scenes)], cfg.jobs)
    out = _out_path(args, "assignment.json")
    write_json(out, {**header(cfg.to_dict()), "images": images})
    return {"written": [str(out)], "images": len(images)}


def _fit_one(job):
    cfg, crit, scene, index = job
    preds = random_predictions(cfg.queries, cfg.num_object_classes, cfg.num_predicates, cfg.seed + index)
    aux = perturb_detections(scene, perturb_model(cfg), cfg.num_object_classes, index)
    res = fit_direct(preds, scene, aux, crit, steps=cfg.steps, lr=cfg.lr, box_lr_scale=cfg.box_lr_scale)
    return scene, res


def cmd_fit(args, cfg: RunConfig) -> dict:
    scenes, vocab = _scenes(args, cfg)
    if len(vocab.objects) != cfg.num_object_classes or len(vocab.predicates) != cfg.num_predicates:
        cfg = cfg.override(num_object_classes=len(vocab.objects), num_predicates=len(vocab.predicates))
    crit = criterion(cfg, scenes)
    results = _pmap(_fit_one, [(cfg, crit, s, i) for i, s in enumerate(scenes)], cfg.jobs)
    out = _out_path(args, "fit.json")
    images, rows, pred_images = [], [], []
    for scene, res in results:
        traj = [{"step": s.step, "loss": s.loss, "R@20": s.recall} for s in res.trajectory]
        images.append({"image_id": scene.image_id, "reached_step": res.reached(1.0), "trajectory": traj})
        rows += [(scene.image_id, s.step, f"{s.loss:.10g}", f"{s.recall:.6g}") for s in res.trajectory]
        ranked = res.preds.ranked()
        logits = _ranked_logits(res.preds, ranked)
        pred_images.append(PredictionImage(scene.image_id, scene.width, scene.height, ranked, logits))
    write_json(out, {**header(cfg.to_dict()), "images": images})
    _write_csv(_sibling(out, ".csv"), ["image", "step", "loss", "R@20"], rows)
    written = [str(out), str(_sibling(out, ".csv"))]
    if args.predictions:
        write_json(args.predictions, predictions_to_json(pred_images, vocab, cfg.to_dict()))
        written.append(args.predictions)
    reached = sum(im["reached_step"] is not None for im in images)
    return {"written": written, "images": len(images), "reached_R@20=1": reached}


def _ranked_logits(preds, ranked: list[RankedTriplet]):
    """Relation logits aligned with ``preds.ranked()`` order (same stable sort)."""
    scores = np.array([r.score for r in ranked])
    order = np.argsort(-_slot_scores(preds), kind="stable")
    assert np.allclose(_slot_scores(preds)[order], scores)
    return [preds.rel_logits[i].copy() for i in order]


def _slot_scores(preds):
    return (expit(preds.sub_logits).max(axis=1) * expit(preds.obj_logits).max(axis=1)
            * expit(preds.rel_logits).max(axis=1))


def _load_eval_inputs(args):
    ds = load_scene_file(args.gt)
    preds, _ = load_predictions(args.pred, ds.vocab)
    if len(preds) != len(ds.scenes):
        raise SchemaError("images", f"{len(preds)} prediction images for {len(ds.scenes)} GT images")
    for i, (p, s) in enumerate(zip(preds, ds.scenes)):
        if p.image_id != s.image_id:
            raise SchemaError(f"images[{i}].id", f"prediction image {p.image_id!r} != GT image {s.image_id!r}")
    return ds, preds


def cmd_eval(args, cfg: RunConfig) -> dict:
    ds, preds = _load_eval_inputs(args)
    seen = load_seen_set(args.seen, ds.vocab) if args.seen else None
    report = evaluate([p.triplets for p in preds], [s.triplets() for s in ds.scenes], cfg.k_at,
                      cfg.profile, seen, cfg.use_graph_constraint)
    pct = report.as_percent()
    out = _out_path(args, "metrics.json")
    write_json(out, {**header(cfg.to_dict()), **pct})
    rows = [(ds.vocab.predicates[c], row["num_gt"], pct["per_category"][str(c)]["recall"],
             pct["per_category"][str(c)]["ap_rel"], pct["per_category"][str(c)]["ap_phr"])
            for c, row in sorted(report.per_category.items())]
    _write_csv(_sibling(out, ".csv"), ["predicate", "num_gt", "R@50", "AP_rel", "AP_phr"], rows)
    table = [("metric",) + tuple(f"@{k}" for k in report.recall)]
    for name, key in (("R", "R"), ("mR", "mR"), ("zR", "zR")):
        table.append((name,) + tuple(_fmt(pct[key][str(k)]) for k in report.recall))
    print(_table(table))
    print(_table([("wmAP_rel", _fmt(pct["wmAP_rel"])), ("wmAP_phr", _fmt(pct["wmAP_phr"])),
                  ("score", _fmt(pct["score"]))]))
    return {"written": [str(out), str(_sibling(out, ".csv"))], "metrics": pct}


def _default_taus():
    return [round(0.1 * i, 10) for i in range(11)]


def cmd_calibrate(args, cfg: RunConfig) -> dict:
    ds, preds = _load_eval_inputs(args)
    n_pred = len(ds.vocab.predicates)
    if args.freq:
        table = FrequencyTable.load(args.freq, ds.vocab.predicates)
    else:
        train = load_scene_file(args.train).scenes if args.train else ds.scenes
        counts = predicate_counts(train, n_pred)
        table = FrequencyTable.from_counts(counts, smoothing=1.0 if np.any(counts == 0) else 0.0,
                                           names=list(ds.vocab.predicates))
    if args.freq_out:
        table.save(args.freq_out)
    for i, p in enumerate(preds):
        for j, z in enumerate(p.predicate_logits):
            if z is None:
                raise SchemaError(f"images[{i}].triplets[{j}].predicate_logits", "needed for calibration")
    taus = args.taus or _default_taus()
    gts = [s.triplets() for s in ds.scenes]
    gc, micro = cfg.use_graph_constraint, cfg.profile == "oi"
    curve = []
    for tau in taus:
        adjusted = [_adjust_image(p, table.freqs, tau) for p in preds]
        curve.append({"tau": tau, "R@50": 100 * recall_at_k(adjusted, gts, 50, gc, micro),
                      "mR@50": 100 * mean_recall_at_k(adjusted, gts, 50, gc)})
    out = _out_path(args, "calibration.json")
    write_json(out, {**header(cfg.to_dict()), "curve": curve})
    _write_csv(_sibling(out, ".csv"), ["tau", "R@50", "mR@50"],
               [(c["tau"], f"{c['R@50']:.6g}", f"{c['mR@50']:.6g}") for c in curve])
    written = [str(out), str(_sibling(out, ".csv"))]
    if args.plot:
        _plot_curve(curve, args.plot)
        written.append(args.plot)
    print(_table([("tau", "R@50", "mR@50")] + [(f"{c['tau']:g}", _fmt(c["R@50"]), _fmt(c["mR@50"])) for c in curve]))
    return {"written": written, "curve": curve}


def _adjust_image(p: PredictionImage, freqs, tau: float) -> list[RankedTriplet]:
    out = []
    for t, z in zip(p.triplets, p.predicate_logits):
        za = logit_adjust(z, freqs, tau)
        c = int(np.argmax(za))
        ps = float(expit(za[c]))
        out.append(RankedTriplet(t.sub_box, t.sub_label, t.sub_score, t.obj_box, t.obj_label, t.obj_score,
                                 c, ps, t.sub_score * t.obj_score * ps))
    return sorted(out, key=lambda r: -r.score)


def _plot_curve(curve, path):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigError("--plot needs matplotlib (pip install 'artifact[plot]')") from None
    fig, ax = plt.subplots(figsize=(4, 3))
    taus = [c["tau"] for c in curve]
    ax.plot(taus, [c["R@50"] for c in curve], marker="o", label="R@50")
    ax.plot(taus, [c["mR@50"] for c in curve], marker="s", label="mR@50")
    ax.set_xlabel("tau")
    ax.legend()
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(path).with_name(f".{Path(path).name}.tmp{Path(path).suffix}")
    fig.savefig(tmp)
    plt.close(fig)
    os.replace(tmp, path)


def cmd_forward(args, cfg: RunConfig) -> dict:
    t = cfg.toy
    dims = HeadDims(d_obj=t.d_obj, d_rel=t.d_rel, channels=t.channels, filters=t.filters,
                    num_obj_classes=cfg.num_object_classes, num_rel_classes=cfg.num_predicates,
                    heads=t.attn_heads, ffn=t.ffn)
    if args.weights:
        weights = load_weights(args.weights)
    else:
        weights = [init_head_weights(dims, cfg.seed * 1000 + h) for h in range(cfg.heads)]
    if args.save_weights:
        save_weights(weights, args.save_weights)
    scene, fmap = generate_scene(scene_config(cfg), 0)
    q = init_queries(cfg.queries, dims, cfg.seed)
    outs = cascade_forward(q, fmap, weights, heads=t.attn_heads, positions=t.positions)
    per_head = []
    for h, o in enumerate(outs):
        per_head.append({"head": h, "rel_logit_mean": float(o.rel_logits.mean()),
                         "rel_logit_std": float(o.rel_logits.std()),
                         "sub_box_shift": float(np.abs(o.sub_boxes - (outs[h - 1].sub_boxes if h else q.sub_boxes)).mean())})
    last = outs[-1]
    top = []
    scores = (expit(last.sub_logits).max(1) * expit(last.obj_logits).max(1) * expit(last.rel_logits).max(1))
    for i in np.argsort(-scores, kind="stable")[:max(cfg.k_at)]:
        top.append({"slot": int(i), "score": float(scores[i]),
                    "sub_box": last.sub_boxes[i].tolist(), "obj_box": last.obj_boxes[i].tolist(),
                    "labels": [int(last.sub_logits[i].argmax()), int(last.rel_logits[i].argmax()),
                               int(last.obj_logits[i].argmax())]})
    out = _out_path(args, "forward.json")
    write_json(out, {**header(cfg.to_dict()), "heads": per_head, "top": top})
    return {"written": [str(out)], "heads": len(outs)}


def cmd_report(args, cfg: RunConfig) -> dict:
    if args.from_metrics:
        raw = json.loads(Path(args.from_metrics).read_text())
        try:
            r50, wr, wp = raw["R"]["50"], raw["wmAP_rel"], raw["wmAP_phr"]
        except KeyError as e:
            raise SchemaError(f"$.{e.args[0]}", "missing field") from None
    else:
        if None in (args.r50, args.wmap_rel, args.wmap_phr):
            raise UsageError("report needs --r50, --wmap-rel and --wmap-phr (percent), or --from-metrics")
        r50, wr, wp = args.r50, args.wmap_rel, args.wmap_phr
    score = weighted_score(r50, wr, wp)
    result = {"R@50": r50, "wmAP_rel": wr, "wmAP_phr": wp, "score": score, "score_rounded": round(score, 2)}
    print(_table([("R@50", _fmt(r50)), ("wmAP_rel", _fmt(wr)), ("wmAP_phr", _fmt(wp)), ("score", _fmt(score))]))
    written = []
    if args.out:
        write_json(args.out, {**header(cfg.to_dict()), **result})
        written.append(args.out)
    return {"written": written, **result}


# ----------------------------------------------------------------------------
# parser and entry point

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssrcnn", description="Desk-scale structured sparse scene-graph toolkit")
    p.add_argument("--version", action="version", version=f"ssrcnn {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic dataset (and optionally predictions)")
    _common(g)
    g.add_argument("--predictions", help="also write synthetic predictions here")
    g.add_argument("--exact", action="store_true", help="predictions reproduce the GT exactly")

    for name, helptext in (("assign", "dump two-stage assignments"), ("fit", "direct fit of free slots")):
        s = sub.add_parser(name, help=helptext)
        _common(s)
        s.add_argument("--data", help="dataset JSON; generated from the seed when omitted")
        if name == "fit":
            s.add_argument("--steps", type=int)
            s.add_argument("--predictions", help="write the fitted slots as predictions here")

    e = sub.add_parser("eval", help="score predictions against GT")
    _common(e)
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--seen", help="seen-triplet JSON for zero-shot recall")

    c = sub.add_parser("calibrate", help="sweep the logit-adjustment tau")
    _common(c)
    c.add_argument("--gt", required=True)
    c.add_argument("--pred", required=True)
    c.add_argument("--train", help="dataset whose predicate frequencies are used (default: --gt)")
    c.add_argument("--freq", help="read predicate frequencies from this sidecar")
    c.add_argument("--freq-out", help="write the predicate frequency sidecar here")
    c.add_argument("--taus", type=float, nargs="+")
    c.add_argument("--plot", help="write an SVG/PDF/PNG tau curve (needs matplotlib)")

    f = sub.add_parser("forward", help="toy-scale cascade forward pass")
    _common(f)
    f.add_argument("--weights", help="load head weights (.npz or .json)")
    f.add_argument("--save-weights", help="save the head weights used")

    r = sub.add_parser("report", help="weighted Open Images score from its components")
    _common(r)
    r.add_argument("--r50", type=float)
    r.add_argument("--wmap-rel", type=float)
    r.add_argument("--wmap-phr", type=float)
    r.add_argument("--from-metrics", help="metrics JSON written by eval")
    return p


COMMANDS = {"gen": cmd_gen, "assign": cmd_assign, "fit": cmd_fit, "eval": cmd_eval,
            "calibrate": cmd_calibrate, "forward": cmd_forward, "report": cmd_report}


def _setup_logging():
    level = os.environ.get("SSRCNN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _fail(kind: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        summary = COMMANDS[args.command](args, cfg)
        log.info("%s done: %s", args.command, {k: v for k, v in summary.items() if k != "metrics"})
        return 0
    except UsageError as e:
        return _fail("usage", str(e), 2)
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except SchemaError as e:
        return _fail("schema", str(e), 1, field=e.path)
    except ConfigError as e:
        return _fail("config", str(e), 1)
    except FileNotFoundError as e:
        return _fail("io", f"{e.strerror}: {e.filename}", 1)
    except (ValueError, FloatingPointError, OSError) as e:
        return _fail(type(e).__name__, str(e), 1)


if __name__ == "__main__":
    sys.exit(main())
