"""Command-line pipeline: ``wildset <subcommand> [--config FILE] [flags]``.

Every option can come from the flag, from the subcommand's section of the
YAML config (``index.build``, ``resample``, ...), or from a built-in default,
in that order. Randomness derives from the config's root ``seed`` unless a
subcommand seed is given explicitly. Each run writes a JSON manifest with
input and output digests, resolved parameters and timings.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dedup import DuplicateVerdict, run_dedup, summarize
from .descriptor import PCAWhitening, ScalarQuantizer, l2_normalize, rmac_pool_batch
from .errors import WildsetError
from .fileio import file_digest, iter_jsonl, read_descriptors, write_descriptors, write_jsonl
from .hashtag import SynsetDB, canonical_merge, normalize_tag, relabel, select_vocab
from .ivf import IVFPQIndex
from .sampler import MODES, TaggedCorpus, inject_noise, make_target, resample, tag_frequencies
from .schedule import detection_lr, finetuning_presets, lr_at, plateaus, preset_schedule
from .seeding import derive_seed

logger = logging.getLogger("wildset")

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    """Validation failure tied to one named field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# ---------------------------------------------------------------------------
# Parameter resolution
# ---------------------------------------------------------------------------


class Params:
    """Flag > config section > default lookup with field-named validation."""

    def __init__(self, args: argparse.Namespace, section: dict, root: dict):
        self.args = args
        self.section = section or {}
        self.root = root or {}
        self.resolved: dict = {}
        self.inputs: list[Path] = []

    def get(self, name: str, default=None, required: bool = False, kind=None, choices=None):
        val = getattr(self.args, name, None)
        if val is None:
            val = self.section.get(name, self.section.get(name.replace("_", "-")))
        if val is None:
            val = default
        if val is None and required:
            raise ConfigError(name, "is required (flag --%s or config)" % name.replace("_", "-"))
        if val is not None and kind is not None:
            try:
                val = kind(val)
            except (TypeError, ValueError):
                raise ConfigError(name, f"expected {kind.__name__}, got {val!r}") from None
        if choices is not None and val is not None and val not in choices:
            raise ConfigError(name, f"must be one of {list(choices)}, got {val!r}")
        self.resolved[name] = val
        return val

    def input_path(self, name: str, required: bool = True) -> Path | None:
        val = self.get(name, required=required)
        if val is None:
            return None
        p = Path(val)
        if not p.is_file():
            raise ConfigError(name, f"file not found: {p}")
        self.inputs.append(p)
        return p

    def output_path(self, name: str, required: bool = True) -> Path | None:
        val = self.get(name, required=required)
        return None if val is None else Path(val)

    def seed(self, label: str) -> int:
        explicit = self.get("seed", kind=int)
        if explicit is not None:
            if explicit < 0:
                raise ConfigError("seed", "must be non-negative")
            return explicit
        root = self.root.get("seed")
        if root is None:
            raise ConfigError("seed", "no --seed given and no root 'seed' in the config")
        try:
            seed = derive_seed(int(root), label)
        except (TypeError, ValueError) as exc:
            raise ConfigError("seed", str(exc)) from None
        self.resolved["seed"] = seed
        self.resolved["seed_label"] = label
        return seed

    def threads(self) -> int:
        n = self.get("threads", default=1, kind=int)
        if n < 1:
            raise ConfigError("threads", "must be >= 1")
        cap = os.environ.get("WILDSET_THREADS")
        if cap:
            try:
                n = min(n, max(1, int(cap)))
            except ValueError:
                raise ConfigError("WILDSET_THREADS", f"expected an integer, got {cap!r}") from None
        self.resolved["threads"] = n
        return n


def _load_config(path) -> tuple[dict, str | None]:
    if path is None:
        return {}, None
    p = Path(path)
    if not p.is_file():
        raise ConfigError("config", f"file not found: {p}")
    try:
        cfg = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"not valid YAML: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be a mapping")
    return cfg, file_digest(p)


def _section(cfg: dict, dotted: str) -> dict:
    node = cfg
    for part in dotted.split("."):
        node = node.get(part, {}) if isinstance(node, dict) else {}
    return node if isinstance(node, dict) else {}


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _load_vectors(path: Path) -> np.ndarray:
    f = read_descriptors(path)
    if f.data.ndim != 2:
        raise ConfigError(str(path), "expected a vector file (rank-1 shape header)")
    if f.sq_min is not None:
        return ScalarQuantizer.from_tables(f.sq_min, f.sq_step).inverse_transform(f.data)
    return f.data.astype(np.float64)


def _ids(p: Params, n: int, ids_name: str = "ids", offset_name: str = "id_offset") -> np.ndarray:
    ids_path = p.input_path(ids_name, required=False)
    if ids_path is not None:
        ids = np.frombuffer(ids_path.read_bytes(), dtype="<u8")
        if len(ids) != n:
            raise ConfigError(ids_name, f"holds {len(ids)} ids for {n} vectors")
        return ids.astype(np.uint64)
    off = p.get(offset_name, default=0, kind=int)
    return np.arange(off, off + n, dtype=np.uint64)


def _read_records(p: Params, name: str = "records") -> list[dict]:
    path = p.input_path(name)
    try:
        return list(iter_jsonl(path))
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(name, f"{path}: {exc}") from None


def _index_params(p: Params) -> dict:
    return dict(
        n_components=p.get("n_components", 256, kind=int),
        coarse_bits=p.get("coarse_bits", 14, kind=int),
        n_subquantizers=p.get("n_subquantizers", 32, kind=int),
        n_bits=p.get("n_bits", 8, kind=int),
        opq_alternations=p.get("opq_alternations", 20, kind=int),
        max_iter=p.get("max_iter", 25, kind=int),
        nprobe=p.get("nprobe", 256, kind=int),
        k=p.get("k", 128, kind=int),
    )


# ---------------------------------------------------------------------------
# Subcommands: each returns (outputs, extra manifest fields)
# ---------------------------------------------------------------------------


def cmd_descriptors(p: Params):
    src = p.input_path("input")
    out = p.output_path("out")
    out_u8 = p.output_path("out_u8", required=False)
    pca_path = p.output_path("pca_model")
    sq_path = p.output_path("sq_model", required=out_u8 is not None)
    train = bool(p.get("train", False))
    scales = p.get("scales", 3, kind=int)

    f = read_descriptors(src)
    if f.data.ndim == 4:
        raw = rmac_pool_batch(f.data.astype(np.float64), scales)
    elif f.sq_min is None:
        raw = l2_normalize(f.data)
    else:
        raise ConfigError("input", "expects float feature maps or raw descriptors, not 8-bit codes")
    outputs = []
    if train:
        pca = PCAWhitening(p.get("n_components", 512, kind=int), p.get("eig_floor", 1e-10, kind=float)).fit(raw)
        pca_path.write_bytes(pca.to_blob())
        outputs.append(pca_path)
    else:
        if not pca_path.is_file():
            raise ConfigError("pca_model", f"file not found: {pca_path} (pass --train to fit one)")
        p.inputs.append(pca_path)
        pca = PCAWhitening.from_blob(pca_path.read_bytes())
    white = pca.transform(raw)
    write_descriptors(out, white.astype(np.float32))
    outputs.append(out)
    extra = {"count": len(white), "dim": int(white.shape[1])}
    if out_u8 is not None:
        if train:
            sq = ScalarQuantizer().fit(white)
            sq_path.write_bytes(sq.to_blob())
            outputs.append(sq_path)
        else:
            if not sq_path.is_file():
                raise ConfigError("sq_model", f"file not found: {sq_path}")
            p.inputs.append(sq_path)
            sq = ScalarQuantizer.from_blob(sq_path.read_bytes())
        write_descriptors(out_u8, sq.transform(white), sq.min_, sq.step_)
        outputs.append(out_u8)
        extra["clamped_values"] = sq.count_clamped(white)
    return outputs, extra


def cmd_train_quantizers(p: Params):
    X = _load_vectors(p.input_path("input"))
    out = p.output_path("out")
    seed = p.seed("train-quantizers")
    idx = IVFPQIndex(**_index_params(p), random_state=seed % (2**31)).fit(X)
    idx.save(out)
    return [out], {"training_vectors": len(X), "opq_objective": [float(v) for v in idx.opq_.objective_]}


def cmd_index_build(p: Params):
    trained = p.input_path("quantizers")
    X = _load_vectors(p.input_path("input"))
    out = p.output_path("out")
    idx = IVFPQIndex.load(trained)
    idx.reset()
    idx.add(X, _ids(p, len(X)))
    idx.save(out)
    return [out], {"ntotal": int(idx.ntotal_), "nonempty_cells": int(len(idx.nonempty_cells()))}


def cmd_index_add(p: Params):
    idx = IVFPQIndex.load(p.input_path("index"))
    X = _load_vectors(p.input_path("input"))
    out = p.output_path("out")
    idx.add(X, _ids(p, len(X)))
    idx.save(out)
    return [out], {"ntotal": int(idx.ntotal_)}


def cmd_index_search(p: Params):
    idx = IVFPQIndex.load(p.input_path("index"))
    Q = _load_vectors(p.input_path("queries"))
    qids = _ids(p, len(Q), "query_ids", "query_id_offset")
    out = p.output_path("out")
    k = p.get("k", 128, kind=int)
    nprobe = p.get("nprobe", 256, kind=int)
    recs = []
    for qid, q in zip(qids.tolist(), Q):
        res = idx.search(q, k, nprobe)
        recs.append({"query_id": qid, "ids": res.ids.tolist(), "distances": res.distances.tolist()})
    write_jsonl(out, recs)
    return [out], {"queries": len(recs)}


def _store(path: Path, ids: np.ndarray) -> dict:
    X = _load_vectors(path)
    return dict(zip(ids.tolist(), X))


def cmd_dedup(p: Params):
    idx = IVFPQIndex.load(p.input_path("index"))
    q_path = p.input_path("queries")
    Q = _load_vectors(q_path)
    qids = _ids(p, len(Q), "query_ids", "query_id_offset")
    qx_path = p.input_path("query_exact", required=False) or q_path
    base_path = p.input_path("exact")
    base = _load_vectors(base_path)
    base_ids = _ids(p, len(base), "exact_ids", "exact_id_offset")
    out = p.output_path("out")
    man_out = p.output_path("manifests_out", required=False)
    threshold = p.get("threshold", 0.6, kind=float)
    res = run_dedup(
        qids.tolist(),
        dict(zip(qids.tolist(), Q)),
        _store(qx_path, qids),
        idx,
        dict(zip(base_ids.tolist(), base)),
        k=p.get("k", 128, kind=int),
        nprobe=p.get("nprobe", 256, kind=int),
        threshold=threshold,
        manifest_size=p.get("manifest_size", 21, kind=int),
        n_jobs=p.threads(),
    )
    write_jsonl(out, (v.to_record() for v in res.verdicts))
    outputs = [out]
    if man_out is not None:
        recs = []
        for m in res.manifests:
            rec = {"query_id": m.query_id, "requested": m.requested, "neighbors": m.records()}
            if m.note:
                rec["note"] = m.note
            recs.append(rec)
        write_jsonl(man_out, recs)
        outputs.append(man_out)
    return outputs, {
        "queries": len(qids),
        "flagged_queries": len(res.manifests),
        "query_errors": [{"query_id": e.query_id, "reason": e.reason} for e in res.errors],
    }


def cmd_report(p: Params):
    path = p.input_path("verdicts")
    test_size = p.get("test_size", required=True, kind=int)
    if test_size <= 0:
        raise ConfigError("test_size", "must be positive")
    acc = p.get("accuracy", kind=float)
    out = p.output_path("out", required=False)
    try:
        verdicts = [DuplicateVerdict.from_record(r) for r in iter_jsonl(path)]
    except (KeyError, ValueError) as exc:
        raise ConfigError("verdicts", f"{path}: {exc}") from None
    summary = summarize(verdicts, test_size, acc)
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
        return [], {"summary": summary}
    out.write_text(text, encoding="utf-8")
    return [out], {"summary": summary}


def _freqs(records: list[dict]) -> dict:
    c = tag_frequencies([normalize_tag(t) for t in r.get("tags", []) if normalize_tag(t)] for r in records)
    return dict(c)


def _synsets(p: Params) -> list[str] | None:
    path = p.input_path("synset_list", required=False)
    if path is None:
        return None
    return [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip() and not ln.startswith("#")]


def cmd_canonicalize(p: Params):
    db = SynsetDB.load(p.input_path("synsets"))
    records = _read_records(p)
    vocab_path = p.input_path("vocab", required=False)
    map_out = p.output_path("out")
    rec_out = p.output_path("records_out", required=vocab_path is not None)
    freqs = _freqs(records)
    cmap = canonical_merge(sorted(freqs), db, freqs, _synsets(p))
    write_jsonl(map_out, cmap.records(freqs))
    outputs = [map_out]
    extra = {"hashtags": len(freqs), "groups": len(cmap)}
    if vocab_path is not None:
        selected = [r["tag"] for r in iter_jsonl(vocab_path)]
        kept, dropped = [], 0
        for r in records:
            tags = relabel(r.get("tags", []), cmap, selected)
            if tags:
                kept.append({"image_id": int(r["image_id"]), "tags": tags})
            else:
                dropped += 1
        write_jsonl(rec_out, kept)
        outputs.append(rec_out)
        extra.update(relabeled=len(kept), dropped_empty=dropped)
    return outputs, extra


def cmd_vocab(p: Params):
    db = SynsetDB.load(p.input_path("synsets"))
    records = _read_records(p)
    out = p.output_path("out")
    top_n = p.get("top_n", kind=int)
    synsets = _synsets(p)
    freqs = _freqs(records)
    chosen = select_vocab(db.all_synsets() if synsets is None else synsets, freqs, db, top_n)
    write_jsonl(out, ({"tag": t, "frequency": int(freqs[t])} for t in chosen))
    return [out], {"vocab_size": len(chosen)}


def _corpus(p: Params) -> TaggedCorpus:
    records = _read_records(p)
    corpus = TaggedCorpus.from_records(records)
    if len(corpus) == 0:
        where = p.resolved.get("records")
        raise ConfigError("records", f"empty input: {where} has no image with at least one tag")
    return corpus


def cmd_resample(p: Params):
    corpus = _corpus(p)
    mode = p.get("mode", required=True, choices=MODES)
    target = p.get("target_len", required=True, kind=float)
    if target < len(corpus):
        raise ConfigError("target_len", f"{target:g} is below the {len(corpus)} images in the corpus")
    seed = p.seed("resample")
    ids_out = p.output_path("out_ids")
    masks_out = p.output_path("out_masks")
    plan_out = p.output_path("plan_out", required=False)
    plan, epoch = resample(corpus, mode, target, seed)
    epoch.write(ids_out, masks_out)
    outputs = [ids_out, masks_out]
    if plan_out is not None:
        write_jsonl(
            plan_out,
            (
                {"tag": t, "frequency": int(f), "replication": float(r)}
                for t, f, r in zip(corpus.vocab, corpus.tag_counts(), plan.tag_factor)
            ),
        )
        outputs.append(plan_out)
    return outputs, {
        "images": len(corpus),
        "dropped_empty": corpus.n_dropped,
        "threshold": plan.threshold,
        "expected_length": plan.expected_length,
        "length": len(epoch),
    }


def cmd_targets(p: Params):
    records = _read_records(p)
    vocab = [r["tag"] for r in iter_jsonl(p.input_path("vocab"))]
    out = p.output_path("out")
    index = {t: i for i, t in enumerate(vocab)}
    recs, dropped = [], 0
    for r in records:
        tv = make_target(r.get("tags", []), index)
        if tv is None:
            dropped += 1
            continue
        recs.append({"image_id": int(r["image_id"]), "indices": tv.indices.tolist(), "values": tv.values.tolist()})
    write_jsonl(out, recs)
    return [out], {"emitted": len(recs), "dropped": dropped, "vocab_size": len(vocab)}


def cmd_noise(p: Params):
    records = _read_records(p)
    prob = p.get("p", required=True, kind=float)
    if not 0.0 <= prob <= 1.0:
        raise ConfigError("p", f"must be in [0, 1], got {prob}")
    seed = p.seed("noise")
    out = p.output_path("out")
    lists = [list(r.get("tags", [])) for r in records]
    noised, report = inject_noise(lists, prob, tag_frequencies(lists), seed)
    write_jsonl(out, ({"image_id": int(r["image_id"]), "tags": t} for r, t in zip(records, noised)))
    return [out], {"occurrences": report.total_occurrences, "replaced": report.replaced}


def _schedule_table(spec, rows) -> str:
    lines = [
        f"schedule   {spec.name}",
        f"minibatch  {spec.minibatch}",
        f"peak_lr    {spec.peak_lr:.6g}",
        f"total      {spec.total_images:.6g} images",
        f"warmup     {spec.warmup_images:.6g} images from lr {spec.base_lr:g}",
        f"decay      x{spec.decay_factor:.6g} at {spec.n_decays} points",
        f"weight_decay {spec.weight_decay:g}",
    ]
    if spec.explicit_steps is not None:
        lines.append("steps      [" + ", ".join(f"{s:g}" for s in spec.explicit_steps) + "] epochs")
    lines.append(f"{'start_images':>16} {'end_images':>16} {'lr':>12}")
    for r in rows:
        lines.append(f"{r['start_images']:>16.6g} {r['end_images']:>16.6g} {r['lr']:>12.6g}")
    return "\n".join(lines) + "\n"


def cmd_schedule(p: Params):
    fmt = p.get("format", "table", choices=("table", "json"))
    out = p.output_path("out", required=False)
    table = p.get("table", choices=("finetune", "detection"))
    if table == "finetune":
        payload = finetuning_presets(p.get("source"), p.get("target"))
    elif table == "detection":
        backbone, source = p.get("backbone", required=True), p.get("source", required=True)
        payload = {"backbone": backbone, "source": source, "lr": detection_lr(backbone, source)}
    else:
        preset = p.get("preset", required=True, choices=("in1k", "in5k", "in9k", "ig"))
        minibatch = p.get("minibatch", required=True, kind=int)
        if minibatch < 1:
            raise ConfigError("minibatch", "must be >= 1")
        size = p.get("dataset_size", kind=float)
        if size is not None and size <= 0:
            raise ConfigError("dataset_size", "must be positive")
        ps = preset_schedule(
            preset,
            minibatch,
            dataset_size=size,
            hashtags=p.get("hashtags", "17k", kind=str),
            warmup_images=p.get("warmup_images", kind=float),
            log_interpolation=bool(p.get("log_interpolation", False)),
        )
        rows = plateaus(ps.spec)
        if fmt == "table":
            text = _schedule_table(ps.spec, rows)
        else:
            payload = {"schedule": ps.spec.to_dict(), "plateaus": rows, "final_lr": lr_at(ps.spec.total_images, ps.spec)}
    if table is not None or fmt == "json":
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
        return [], {}
    out.write_text(text, encoding="utf-8")
    return [out], {}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _flag(parser, name, type=str, help=None, **kw):
    parser.add_argument("--" + name.replace("_", "-"), dest=name, type=type, default=None, help=help, **kw)


def _switch(parser, name, help=None):
    parser.add_argument("--" + name.replace("_", "-"), dest=name, action="store_const", const=True, default=None, help=help)


def _common(parser):
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--manifest", help="run manifest path (default: <first output>.manifest.json)")
    _flag(parser, "threads", int, "worker threads (capped by WILDSET_THREADS)")


def _index_flags(sp):
    for name in ("n_components", "coarse_bits", "n_subquantizers", "n_bits", "opq_alternations", "max_iter"):
        _flag(sp, name, int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wildset", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"wildset {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    sp = sub.add_parser("descriptors", help="pool feature maps, whiten with PCA, scalar-quantize")
    _common(sp)
    for n in ("input", "out", "out_u8", "pca_model", "sq_model"):
        _flag(sp, n)
    _flag(sp, "n_components", int)
    _flag(sp, "eig_floor", float)
    _flag(sp, "scales", int)
    _switch(sp, "train", "fit PCA and quantizer tables on the input and save them")
    sp.set_defaults(func=cmd_descriptors, section="descriptors", label="descriptors")

    sp = sub.add_parser("train-quantizers", help="train OPQ, coarse and residual quantizers; save an empty index")
    _common(sp)
    _flag(sp, "input")
    _flag(sp, "out")
    _flag(sp, "seed", int)
    _index_flags(sp)
    sp.set_defaults(func=cmd_train_quantizers, section="train_quantizers", label="train-quantizers")

    sp = sub.add_parser("index", help="build, extend or search an inverted index")
    isub = sp.add_subparsers(dest="action", metavar="ACTION")
    isub.required = True
    b = isub.add_parser("build", help="fill a trained index with vectors")
    _common(b)
    for n in ("quantizers", "input", "out", "ids"):
        _flag(b, n)
    _flag(b, "id_offset", int)
    b.set_defaults(func=cmd_index_build, section="index.build", label="index-build")
    a = isub.add_parser("add", help="append vectors to an index")
    _common(a)
    for n in ("index", "input", "out", "ids"):
        _flag(a, n)
    _flag(a, "id_offset", int)
    a.set_defaults(func=cmd_index_add, section="index.add", label="index-add")
    s = isub.add_parser("search", help="top-k approximate neighbours per query")
    _common(s)
    for n in ("index", "queries", "out", "query_ids"):
        _flag(s, n)
    _flag(s, "query_id_offset", int)
    _flag(s, "k", int)
    _flag(s, "nprobe", int)
    s.set_defaults(func=cmd_index_search, section="index.search", label="index-search")

    sp = sub.add_parser("dedup", help="two-stage duplicate detection")
    _common(sp)
    for n in ("index", "queries", "query_exact", "query_ids", "exact", "exact_ids", "out", "manifests_out"):
        _flag(sp, n)
    for n in ("query_id_offset", "exact_id_offset", "k", "nprobe", "manifest_size"):
        _flag(sp, n, int)
    _flag(sp, "threshold", float)
    sp.set_defaults(func=cmd_dedup, section="dedup", label="dedup")

    sp = sub.add_parser("report", help="duplicate summary and lower-bound accuracy")
    _common(sp)
    _flag(sp, "verdicts")
    _flag(sp, "test_size", int)
    _flag(sp, "accuracy", float, "measured top-1 accuracy as a fraction")
    _flag(sp, "out")
    sp.set_defaults(func=cmd_report, section="report", label="report")

    sp = sub.add_parser("canonicalize", help="merge hashtags with identical synset sets; optionally relabel")
    _common(sp)
    for n in ("synsets", "records", "synset_list", "vocab", "out", "records_out"):
        _flag(sp, n)
    sp.set_defaults(func=cmd_canonicalize, section="canonicalize", label="canonicalize")

    sp = sub.add_parser("vocab", help="select hashtags matching a synset set")
    _common(sp)
    for n in ("synsets", "records", "synset_list", "out"):
        _flag(sp, n)
    _flag(sp, "top_n", int)
    sp.set_defaults(func=cmd_vocab, section="vocab", label="vocab")

    sp = sub.add_parser("resample", help="write a replicated, shuffled epoch list")
    _common(sp)
    for n in ("records", "out_ids", "out_masks", "plan_out"):
        _flag(sp, n)
    _flag(sp, "mode", str, f"one of {', '.join(MODES)}")
    _flag(sp, "target_len", float)
    _flag(sp, "seed", int)
    sp.set_defaults(func=cmd_resample, section="resample", label="resample")

    sp = sub.add_parser("targets", help="1/k soft targets over a vocabulary")
    _common(sp)
    for n in ("records", "vocab", "out"):
        _flag(sp, n)
    sp.set_defaults(func=cmd_targets, section="targets", label="targets")

    sp = sub.add_parser("noise", help="replace a fraction of tag occurrences")
    _common(sp)
    for n in ("records", "out"):
        _flag(sp, n)
    _flag(sp, "p", float)
    _flag(sp, "seed", int)
    sp.set_defaults(func=cmd_noise, section="noise", label="noise")

    sp = sub.add_parser("schedule", help="learning-rate schedule from a preset")
    _common(sp)
    _flag(sp, "preset", str, "in1k, in5k, in9k or ig")
    _flag(sp, "minibatch", int)
    _flag(sp, "dataset_size", float)
    _flag(sp, "hashtags", str, "ig vocabulary: 1.5k or 17k")
    _flag(sp, "warmup_images", float)
    _switch(sp, "log_interpolation")
    _flag(sp, "format", str, "table or json")
    _flag(sp, "table", str, "print a fine-tuning or detection preset table instead")
    for n in ("source", "target", "backbone", "out"):
        _flag(sp, n)
    sp.set_defaults(func=cmd_schedule, section="schedule", label="schedule")
    return ap


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")

    started = time.time()
    t0 = time.perf_counter()
    try:
        cfg, cfg_digest = _load_config(args.config)
        p = Params(args, _section(cfg, args.section), cfg)
        p.threads()
        outputs, extra = args.func(p)
    except ConfigError as exc:
        print(f"wildset {args.label}: invalid {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (WildsetError, ValueError, KeyError, OSError) as exc:
        print(f"wildset {args.label}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    elapsed = time.perf_counter() - t0

    manifest_path = Path(args.manifest) if args.manifest else None
    if manifest_path is None and outputs:
        manifest_path = outputs[0].with_name(outputs[0].name + ".manifest.json")
    if manifest_path is not None:
        resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in p.resolved.items()}
        params_digest = hashlib.sha256(json.dumps(resolved, sort_keys=True, default=str).encode()).hexdigest()
        _write_manifest(
            manifest_path,
            {
                "command": args.label,
                "version": __version__,
                "parameters": resolved,
                "parameters_digest": params_digest,
                "config": {"path": args.config, "sha256": cfg_digest},
                "inputs": {str(x): file_digest(x) for x in p.inputs},
                "outputs": {str(x): file_digest(x) for x in outputs},
                "results": extra,
                "timings": {"started_unix": started, "elapsed_seconds": elapsed},
            },
        )
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
