"""Command-line driver: score, rank, nfe, eval, synth, validate.

Exit codes: 0 success, 2 usage or input error, 3 internal invariant violation.
The validate command additionally exits 1 when it finds diagnostics, so a
clean manifest is distinguishable from a broken invocation. Output files are
written atomically (temp file + rename) and embed the configuration that
produced them, so identical inputs always reproduce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import attn_io, evaluation, selection, stats, synth
from .attn_io import ModelFamily, TensorKind
from .errors import AbssError, UsageError
from .scoring import (
    ScoreTable,
    ScoringConfig,
    TokenCategory,
    load_annotations,
    save_annotations,
    score_pool,
)

DIT_ROW_SUM_TOLERANCE = 1e-4


def _atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(doc, out: str | None, *, text: str | None = None) -> None:
    """Write JSON (or preformatted text) to --out, or print to stdout."""
    payload = text if text is not None else json.dumps(doc, indent=2) + "\n"
    if out:
        _atomic_write_text(Path(out), payload)
    else:
        sys.stdout.write(payload)


def _read_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})")


def _scoring_config(args) -> ScoringConfig:
    return ScoringConfig(
        beta=args.beta,
        kernel_radius=args.k,
        sigma=args.sigma,
        include_special_tokens=getattr(args, "include_special_tokens", False),
    )


def _add_scoring_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beta", type=float, default=100.0,
                        help="token-axis softmax temperature (default 100)")
    parser.add_argument("--k", type=int, default=1,
                        help="Gaussian kernel radius; 0 disables smoothing (default 1)")
    parser.add_argument("--sigma", type=float, default=1.0,
                        help="Gaussian kernel sigma (default 1.0)")
    parser.add_argument("--include-special-tokens", action="store_true",
                        help="allow BOS/EOS indices in the scored token set")
    parser.add_argument("--token-category", default="core",
                        choices=[c.value for c in TokenCategory],
                        help="annotation category to score (default core)")


def _load_tables(path: str) -> list[ScoreTable]:
    doc = _read_json(path)
    if isinstance(doc, dict) and "tables" in doc:
        objs = doc["tables"]
    elif isinstance(doc, list):
        objs = doc
    else:
        objs = [doc]
    if not objs:
        raise UsageError(f"{path}: no score tables")
    return [ScoreTable.from_json(obj) for obj in objs]


# --- score -------------------------------------------------------------------


def cmd_score(args) -> int:
    records = attn_io.load_manifest(args.manifest)
    if args.prompt:
        records = [r for r in records if r.prompt_id == args.prompt]
    if args.timestep is not None:
        records = [r for r in records if r.timestep_index == args.timestep]
    if not records:
        raise UsageError("no records left to score after filtering")
    annotations = load_annotations(args.annotations)
    config = _scoring_config(args)

    groups: dict[tuple[str, int], list] = {}
    for record in records:
        groups.setdefault((record.prompt_id, record.timestep_index), []).append(record)
    tables = [
        score_pool(group, annotations, args.token_category, config)
        for _, group in sorted(groups.items())
    ]
    _emit({"tables": [t.to_json() for t in tables]}, args.out)
    return 0


# --- rank --------------------------------------------------------------------


def _parse_kv(text: str) -> dict[str, str]:
    pairs = {}
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise UsageError(f"expected key=value, got '{chunk}'")
        key, value = chunk.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def _nfe_from_spec(spec_text: str, k: int) -> selection.NfeReport:
    pairs = _parse_kv(spec_text)
    for key in ("N", "t", "T", "family"):
        if key not in pairs:
            raise UsageError(f"--nfe spec missing '{key}' (need N, t, T, family[, l, L])")
    family = ModelFamily(pairs["family"])
    l_star = int(pairs["l"]) if "l" in pairs else None
    layers = int(pairs["L"]) if "L" in pairs else None
    return selection.nfe_report(
        family, int(pairs["N"]), k, int(pairs["t"]), int(pairs["T"]), l_star, layers
    )


def cmd_rank(args) -> int:
    tables = _load_tables(args.scores)
    docs = []
    for table in tables:
        result = selection.rank(table, args.k)
        nfe = _nfe_from_spec(args.nfe, args.k) if args.nfe else None
        docs.append(selection.ranking_to_json(result, table, nfe))
    _emit(docs[0] if len(docs) == 1 else {"rankings": docs}, args.out)
    return 0


# --- nfe ---------------------------------------------------------------------


def cmd_nfe(args) -> int:
    if bool(args.family) == bool(args.method):
        raise UsageError("specify exactly one of --family or --method")
    if args.family:
        for name in ("N", "K", "t", "T"):
            if getattr(args, name) is None:
                raise UsageError(f"--family needs --{name}")
        report = selection.nfe_report(
            args.family, args.N, args.K, args.t, args.T, args.l_star, args.L
        )
        _emit(report.to_json(), args.out)
    else:
        params = {k: float(v) for k, v in _parse_kv(args.params or "").items()}
        _emit(selection.nfe_baseline(args.method, **params).to_json(), args.out)
    return 0


# --- eval --------------------------------------------------------------------


def _load_ranking(path: str) -> dict:
    doc = _read_json(path)
    if "rankings" in doc:
        if len(doc["rankings"]) != 1:
            raise UsageError(
                f"{path}: holds {len(doc['rankings'])} rankings; pick one prompt"
            )
        doc = doc["rankings"][0]
    for key in ("prompt_id", "ranking"):
        if key not in doc:
            raise UsageError(f"{path}: ranking JSON missing field '{key}'")
    return doc


def _quality_for_prompt(path: str, prompt_id: str) -> evaluation.QualityTable:
    tables = evaluation.load_quality(path)
    if prompt_id not in tables:
        raise UsageError(f"{path}: no quality table for prompt '{prompt_id}'")
    return tables[prompt_id]


def cmd_eval_overlap(args) -> int:
    ranking = _load_ranking(args.ranking)
    order = [int(entry["seed"]) for entry in ranking["ranking"]]
    truth = _quality_for_prompt(args.quality, ranking["prompt_id"])
    k = min(args.k, len(order))
    value = evaluation.overlap_rate(order[:k], truth.top_seeds(k))
    _emit({"prompt_id": ranking["prompt_id"], "k": k, "overlap": value}, args.out)
    return 0


def cmd_eval_ndcg(args) -> int:
    ranking = _load_ranking(args.ranking)
    order = [int(entry["seed"]) for entry in ranking["ranking"]]
    truth = _quality_for_prompt(args.quality, ranking["prompt_id"])
    result = evaluation.ndcg(order, truth, gain=args.gain)
    _emit({
        "prompt_id": ranking["prompt_id"],
        "ndcg": result.value,
        "relevance_shift": result.relevance_shift,
        "gain": result.gain,
    }, args.out)
    return 0


def cmd_eval_ttest(args) -> int:
    samples = stats.paired_samples_from_json(_read_json(args.a), _read_json(args.b))
    result = stats.paired_t_test(samples)
    _emit({
        "t": result.t_stat,
        "df": result.df,
        "p": result.p_value,
        "p_formatted": stats.format_p_value(result.p_value, report_mode=args.report),
        "pairs": len(samples.a),
    }, args.out)
    return 0


def _render_rows(doc_extra: dict, headers, rows, fmt: str, out: str | None) -> None:
    if fmt == "json":
        _emit(doc_extra, out)
    elif fmt == "text":
        _emit(None, out, text=evaluation.render_table(headers, rows))
    else:
        _emit(None, out, text=evaluation.render_csv(headers, rows))


def cmd_eval_sweep(args) -> int:
    records = []
    for manifest in args.manifest:
        records.extend(attn_io.load_manifest(manifest))
    pools: dict[int, list] = {}
    for record in records:
        pools.setdefault(record.timestep_index, []).append(record)
    annotations = load_annotations(args.annotations)
    quality = evaluation.load_quality(args.quality)
    config = _scoring_config(args)
    rows = evaluation.timestep_sweep(
        pools, annotations, config, quality,
        token_category=args.token_category, top_k=args.top_k,
    )
    headers, cells = evaluation.sweep_rows_for_render(rows)
    _render_rows({
        "config": config.to_json(),
        "token_category": args.token_category,
        "top_k": args.top_k,
        "rows": [r.to_json() for r in rows],
    }, headers, cells, args.format, args.out)
    return 0


def cmd_eval_ablation(args) -> int:
    records = attn_io.load_manifest(args.manifest)
    annotations = load_annotations(args.annotations)
    quality = evaluation.load_quality(args.quality)
    config = _scoring_config(args)
    rows = evaluation.token_ablation(
        records, annotations, config, quality, top_k=args.top_k,
    )
    headers, cells = evaluation.ablation_rows_for_render(rows)
    _render_rows({
        "config": config.to_json(),
        "top_k": args.top_k,
        "rows": [r.to_json() for r in rows],
    }, headers, cells, args.format, args.out)
    return 0


def cmd_eval_corrupt(args) -> int:
    annotations = load_annotations(args.annotations)
    corrupted = evaluation.corrupt_annotations(annotations, args.fraction, args.rng)
    payload = json.dumps(
        [corrupted[pid].to_json() for pid in sorted(corrupted)], indent=2
    ) + "\n"
    _atomic_write_text(Path(args.out), payload)
    return 0


# --- synth -------------------------------------------------------------------


def cmd_synth_suite(args) -> int:
    paths = synth.generate_fixture_suite(args.out)
    for path in paths:
        sys.stdout.write(f"{path}\n")
    return 0


def _parse_spatial(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise UsageError(f"--spatial must look like 8x8, got '{text}'")
    return int(parts[0]), int(parts[1])


def _parse_indices(text: str) -> frozenset[int]:
    if not text:
        return frozenset()
    return frozenset(int(chunk) for chunk in text.split(",") if chunk.strip())


def cmd_synth_pool(args) -> int:
    family = ModelFamily(args.family)
    spec = synth.SynthSpec(
        pool_size=args.pool_size,
        spatial=_parse_spatial(args.spatial) if family is ModelFamily.UNET else None,
        token_count=args.tokens,
        core=_parse_indices(args.core),
        adjectives=_parse_indices(args.adjectives),
        verbs=_parse_indices(args.verbs),
        prepositions=_parse_indices(args.prepositions),
        planted_gap=args.delta,
        noise_scale=args.epsilon,
        rng_seed=args.rng,
        model_family=family,
        stacked_count=args.stacked,
        image_tokens=args.image_tokens,
        hooked_layer=args.hooked_layer,
        prompt_id=args.prompt_id,
        timestep_index=args.timestep,
        total_steps=args.total_steps,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, order = synth.generate_pool(spec)
    disk_records = [
        attn_io.materialize(record, out_dir, f"seed_{record.seed:04d}.attn")
        for record in records
    ]
    manifest_path = attn_io.save_manifest(disk_records, out_dir / "manifest.json")
    save_annotations([spec.annotation()], out_dir / "annotations.json")
    with open(out_dir / "ground_truth.json", "w", encoding="utf-8") as fh:
        json.dump({
            "prompt_id": spec.prompt_id,
            "order": order,
            "planted_bonus": {str(s): b for s, b in enumerate(spec.bonuses())},
        }, fh, indent=2)
        fh.write("\n")
    with open(out_dir / "quality.json", "w", encoding="utf-8") as fh:
        json.dump(synth.planted_quality(spec).to_json(), fh, indent=2)
        fh.write("\n")
    sys.stdout.write(f"{manifest_path}\n")
    return 0


# --- validate ------------------------------------------------------------------


def _validate_record(record) -> list[str]:
    problems = []
    path = record.resolve_path()
    if not path.is_file():
        return [f"record {record.label()}: tensor file {path} does not exist"]
    try:
        record.check_shape(attn_io.peek_shape(path))
        tensor = attn_io.load_tensor(path)
    except AbssError as exc:
        return [f"record {record.label()}: {exc}"]
    if record.tensor_kind is TensorKind.DIT_JOINT:
        sums = tensor.data.astype(np.float64).sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > DIT_ROW_SUM_TOLERANCE)
        if bad.size:
            row = int(bad[0])
            problems.append(
                f"record {record.label()}: dit_joint row {row} sums to {sums[row]:.6f}, "
                f"expected 1 within {DIT_ROW_SUM_TOLERANCE}"
                + (f" ({bad.size} rows total)" if bad.size > 1 else "")
            )
    return problems


def cmd_validate(args) -> int:
    manifest = Path(args.manifest)
    problems: list[str] = []
    records = []
    try:
        with open(manifest, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict) or not isinstance(doc.get("records"), list):
            problems.append(f"{manifest}: missing top-level 'records' array")
            doc = {"records": []}
        for i, obj in enumerate(doc["records"]):
            try:
                records.append(attn_io.record_from_json(obj, i, manifest.parent))
            except AbssError as exc:
                problems.append(str(exc))
    except (OSError, json.JSONDecodeError) as exc:
        problems.append(f"{manifest}: unreadable ({exc})")

    for record in records:
        problems.extend(_validate_record(record))

    for line in problems:
        sys.stderr.write(line + "\n")
    sys.stdout.write(
        f"validated {len(records)} record(s): "
        + (f"{len(problems)} problem(s)\n" if problems else "all clean\n")
    )
    return 1 if problems else 0


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abss",
        description="Attention-based seed screening: score pools, rank seeds, "
                    "account for NFE cost, and evaluate rankings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score a seed pool's attention tensors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--prompt", help="only score this prompt_id")
    p.add_argument("--timestep", type=int, help="only score this timestep_index")
    _add_scoring_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("rank", help="rank scored seeds and retain the top-K")
    p.add_argument("--scores", required=True)
    p.add_argument("--k", type=int, required=True, help="number of seeds to retain")
    p.add_argument("--nfe", help="attach an NFE report: N=10,t=10,T=50,family=unet[,l=12,L=30]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("nfe", help="coarse NFE accounting")
    p.add_argument("--family", choices=[f.value for f in ModelFamily])
    p.add_argument("--N", type=int, help="seed pool size")
    p.add_argument("--K", type=int, help="seeds kept")
    p.add_argument("--t", type=int, help="screening step")
    p.add_argument("--T", type=int, help="total steps")
    p.add_argument("--l-star", dest="l_star", type=int, help="hooked layer (dit)")
    p.add_argument("--L", type=int, help="total layers (dit)")
    p.add_argument("--method", choices=selection.BASELINE_METHODS,
                   help="baseline method instead of the screening formula")
    p.add_argument("--params", help="baseline parameters, e.g. V=100,N=10,T=50,k=3")
    p.add_argument("--out")
    p.set_defaults(func=cmd_nfe)

    ev = sub.add_parser("eval", help="ranking-agreement metrics and experiment drivers")
    evsub = ev.add_subparsers(dest="eval_command", required=True)

    p = evsub.add_parser("overlap", help="top-K overlap between a ranking and quality")
    p.add_argument("--ranking", required=True)
    p.add_argument("--quality", required=True)
    p.add_argument("--k", type=int, default=evaluation.DEFAULT_OVERLAP_K)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_overlap)

    p = evsub.add_parser("ndcg", help="NDCG of a ranking against quality scores")
    p.add_argument("--ranking", required=True)
    p.add_argument("--quality", required=True)
    p.add_argument("--gain", choices=("linear", "exponential"), default="linear")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_ndcg)

    p = evsub.add_parser("ttest", help="paired t-test over per-prompt metric values")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--report", action="store_true",
                   help="report mode: omit the formatted p when p > 0.15")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_ttest)

    p = evsub.add_parser("sweep", help="score pools per timestep and tabulate agreement")
    p.add_argument("--manifest", action="append", required=True,
                   help="manifest path; repeat to merge several")
    p.add_argument("--annotations", required=True)
    p.add_argument("--quality", required=True)
    _add_scoring_flags(p)
    p.add_argument("--top-k", type=int, default=evaluation.DEFAULT_OVERLAP_K)
    p.add_argument("--format", choices=("json", "text", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_sweep)

    p = evsub.add_parser("ablation", help="compare token categories on one pool set")
    p.add_argument("--manifest", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--quality", required=True)
    _add_scoring_flags(p)
    p.add_argument("--top-k", type=int, default=evaluation.DEFAULT_OVERLAP_K)
    p.add_argument("--format", choices=("json", "text", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_ablation)

    p = evsub.add_parser("corrupt", help="randomly corrupt core-token annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--rng", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_corrupt)

    sy = sub.add_parser("synth", help="generate synthetic planted-signal pools")
    sysub = sy.add_subparsers(dest="synth_command", required=True)

    p = sysub.add_parser("suite", help="write the frozen fixture suite")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_suite)

    p = sysub.add_parser("pool", help="write one synthetic pool")
    p.add_argument("--out", required=True)
    p.add_argument("--pool-size", type=int, default=10)
    p.add_argument("--spatial", default="8x8")
    p.add_argument("--tokens", type=int, default=12)
    p.add_argument("--core", default="3,4")
    p.add_argument("--adjectives", default="")
    p.add_argument("--verbs", default="")
    p.add_argument("--prepositions", default="")
    p.add_argument("--delta", type=float, default=0.5, help="planted gap")
    p.add_argument("--epsilon", type=float, default=0.01, help="noise scale")
    p.add_argument("--rng", type=int, default=0)
    p.add_argument("--family", choices=[f.value for f in ModelFamily], default="unet")
    p.add_argument("--stacked", type=int, default=1)
    p.add_argument("--image-tokens", type=int)
    p.add_argument("--hooked-layer", type=int)
    p.add_argument("--prompt-id", default="synth")
    p.add_argument("--timestep", type=int, default=synth.DEFAULT_SCREEN_STEP)
    p.add_argument("--total-steps", type=int, default=synth.DEFAULT_TOTAL_STEPS)
    p.set_defaults(func=cmd_synth_pool)

    p = sub.add_parser("validate", help="check every manifest record against its tensor")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AbssError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError, PermissionError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except json.JSONDecodeError as exc:
        sys.stderr.write(f"error: invalid JSON input ({exc})\n")
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return 3


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
