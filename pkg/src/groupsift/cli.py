"""Command-line entry point.

Five subcommands, one verb per capability: rank, evaluate, sweep, area,
serve. Exit codes: 0 success, 2 usage or validation failure, 3 data or
computation error. Every command is deterministic: rerunning on the same
inputs produces byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import shlex
import subprocess
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import IO

import numpy as np

from .config import (
    DATASET_ROOT_ENV,
    RunConfig,
    env_dataset_root,
    load_config_file,
)
from .embed_rank import rank_embedding
from .errors import EmbedProviderError, GroupsiftError
from .manifest import (
    EmbeddingMatrix,
    Grouping,
    ImageRecord,
    OutlierType,
    load_embeddings,
    load_manifest,
)
from .metrics import REPORT_COLUMNS, evaluate, format_report_table, save_report_csv
from .ranking import DistanceMetric, Method, load_ranked_csv, save_ranked_csv
from .segmentation import Connectivity, SegmentationParams, extract_area, read_pnm
from .size_rank import rank_size


class UsageError(Exception):
    """Bad flag combination or missing input file; maps to exit code 2."""


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

_SWEEP_VARIANTS = ((Method.EMBEDDING, False), (Method.EMBEDDING, True), (Method.SIZE, False))
_SWEEP_ORDER = (Grouping.CAM, Grouping.SAMPLE, Grouping.SPECIMEN, Grouping.TAXON)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="key=value file mirroring flags")
    parser.add_argument("--dataset-root", metavar="DIR",
                        help=f"base for relative paths (or ${DATASET_ROOT_ENV})")
    parser.add_argument("--manifest", metavar="CSV", help="dataset manifest")
    parser.add_argument("--output", metavar="FILE", help="write here instead of stdout")


def _add_ranking(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=[m.value for m in Method])
    parser.add_argument("--grouping", choices=[g.value for g in Grouping])
    parser.add_argument("--normalized", action="store_true", default=None,
                        help="divide distances by the group's mean pairwise distance")
    parser.add_argument("--distance", choices=[d.value for d in DistanceMetric])
    parser.add_argument("--embeddings", metavar="FILE", help="text or binary embeddings")
    parser.add_argument("--embed-cmd", metavar="CMD",
                        help="external command: image paths on stdin, embedding rows out")
    parser.add_argument("--workers", type=int, default=1, metavar="N",
                        help="threads for per-group scoring")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupsift",
        description="Rank group-anomalous images for human review.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_rank = sub.add_parser("rank", help="write a ranked candidate list")
    _add_common(p_rank)
    _add_ranking(p_rank)
    p_rank.set_defaults(func=cmd_rank)

    p_eval = sub.add_parser("evaluate", help="score a ranked list against labels")
    _add_common(p_eval)
    p_eval.add_argument("--ranked", metavar="CSV", required=True)
    p_eval.add_argument("--outlier-type", choices=[t.value for t in OutlierType])
    p_eval.add_argument("--include-other-types", action="store_true",
                        help="count other outlier types as negatives instead of excluding them")
    p_eval.set_defaults(func=cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="metrics for every grouping and method")
    _add_common(p_sweep)
    p_sweep.add_argument("--embeddings", metavar="FILE")
    p_sweep.add_argument("--embed-cmd", metavar="CMD")
    p_sweep.add_argument("--distance", choices=[d.value for d in DistanceMetric])
    p_sweep.add_argument("--workers", type=int, default=1, metavar="N")
    p_sweep.set_defaults(func=cmd_sweep)

    p_area = sub.add_parser("area", help="specimen areas via background subtraction")
    p_area.add_argument("--calibration", metavar="PNM", required=True,
                        help="empty-tank reference frame")
    p_area.add_argument("--threshold", type=int, default=20)
    p_area.add_argument("--morph-radius", type=int, default=1)
    p_area.add_argument("--connectivity", choices=["four", "eight"], default="eight")
    p_area.add_argument("--output", metavar="FILE")
    p_area.add_argument("frames", nargs="+", metavar="FRAME")
    p_area.set_defaults(func=cmd_area)

    p_serve = sub.add_parser("serve", help="run the review service")
    _add_common(p_serve)
    _add_ranking(p_serve)
    p_serve.add_argument("--session-dir", metavar="DIR", required=True,
                         help="decision log and lock live here")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8765)
    p_serve.add_argument("--ui-dir", metavar="DIR",
                         help="built frontend to serve at / (default: bundled ui if present)")
    p_serve.set_defaults(func=cmd_serve)
    return parser


def _setting(args: argparse.Namespace, key: str, file_cfg: dict[str, str], default=None):
    """Flag beats config file beats default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in file_cfg:
        return file_cfg[key]
    return default


def _bool_setting(args, key: str, file_cfg: dict[str, str]) -> bool:
    value = _setting(args, key, file_cfg, default=False)
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no"):
        return False
    raise UsageError(f"config value {key}={value!r} is not a boolean")


def _require_file(path: Path | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    file_cfg = {}
    if getattr(args, "config", None):
        config_path = Path(args.config)
        if not config_path.is_file():
            raise UsageError(f"config file not found: {config_path}")
        file_cfg = load_config_file(config_path)

    root_raw = _setting(args, "dataset_root", file_cfg)
    if getattr(args, "dataset_root", None) is None and env_dataset_root() is not None:
        root_raw = env_dataset_root()
    dataset_root = Path(root_raw) if root_raw else Path(".")

    manifest_raw = _setting(args, "manifest", file_cfg)
    if manifest_raw is None:
        raise UsageError("--manifest is required")
    manifest = _require_file(Path(manifest_raw), "manifest")

    embeddings_raw = _setting(args, "embeddings", file_cfg)
    embeddings = Path(embeddings_raw) if embeddings_raw else None

    method = Method(_setting(args, "method", file_cfg, Method.EMBEDDING.value))
    grouping = Grouping(_setting(args, "grouping", file_cfg, Grouping.SAMPLE.value))
    distance = DistanceMetric(_setting(args, "distance", file_cfg, DistanceMetric.COSINE.value))
    normalized = _bool_setting(args, "normalized", file_cfg)
    output_raw = _setting(args, "output", file_cfg)

    return RunConfig(
        dataset_root=dataset_root,
        manifest=manifest,
        embeddings=embeddings,
        grouping=grouping,
        normalized=normalized,
        distance=distance,
        method=method,
        output=Path(output_raw) if output_raw else None,
        sweep=getattr(args, "command", "") == "sweep",
    )


# ---------------------------------------------------------------------------
# embeddings acquisition
# ---------------------------------------------------------------------------

def run_embed_provider(
    command: str, records: Sequence[ImageRecord], dataset_root: Path
) -> EmbeddingMatrix:
    """Ask an external encoder for embeddings.

    Protocol: one resolved image path per stdin line; the command answers
    with one delimited row per image (path, then the vector components),
    in any order, and must cover every path exactly once.
    """
    id_by_path: dict[str, str] = {}
    for rec in records:
        resolved = str(dataset_root / rec.path)
        if resolved in id_by_path:
            raise EmbedProviderError(f"two records resolve to the same path {resolved!r}")
        id_by_path[resolved] = rec.image_id

    argv = shlex.split(command)
    try:
        proc = subprocess.run(
            argv,
            input="\n".join(id_by_path) + "\n",
            capture_output=True,
            text=True,
            check=False,
        )
    except OSError as exc:
        raise EmbedProviderError(f"cannot run embedding provider {argv[0]!r}: {exc}") from None
    if proc.returncode != 0:
        detail = proc.stderr.strip().splitlines()[-1] if proc.stderr.strip() else "no stderr"
        raise EmbedProviderError(f"embedding provider exited {proc.returncode}: {detail}")

    ids: list[str] = []
    rows: list[list[float]] = []
    width: int | None = None
    for line_no, parts in enumerate(csv.reader(proc.stdout.splitlines()), 1):
        if not parts:
            continue
        path, components = parts[0], parts[1:]
        if path not in id_by_path:
            raise EmbedProviderError(f"provider row {line_no}: unknown path {path!r}")
        if width is None:
            width = len(components)
        if len(components) != width or width == 0:
            raise EmbedProviderError(f"provider row {line_no}: expected {width} components")
        try:
            rows.append([float(c) for c in components])
        except ValueError:
            raise EmbedProviderError(f"provider row {line_no}: unparseable component") from None
        ids.append(id_by_path.pop(path))
    if id_by_path:
        missing = sorted(id_by_path.values())[0]
        raise EmbedProviderError(f"provider returned no embedding for image_id {missing!r}")
    return EmbeddingMatrix(ids, np.array(rows, dtype=np.float64))


def _acquire_embeddings(
    args: argparse.Namespace, config: RunConfig, records: Sequence[ImageRecord]
) -> EmbeddingMatrix:
    embed_cmd = getattr(args, "embed_cmd", None)
    if embed_cmd:
        return run_embed_provider(embed_cmd, records, config.dataset_root)
    if config.embeddings is None:
        raise UsageError("embedding method requires --embeddings or --embed-cmd")
    path = _require_file(config.embeddings, "embeddings file")
    return load_embeddings(path, records)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _open_output(output: Path | None):
    if output is None:
        return sys.stdout, False
    return open(output, "w", encoding="utf-8", newline=""), True


def _write_with(output: Path | None, write) -> None:
    stream, owned = _open_output(output)
    try:
        write(stream)
    finally:
        if owned:
            stream.close()


def cmd_rank(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if config.method is Method.SIZE and config.normalized:
        raise UsageError("size ranking is always pooled; --normalized applies to embeddings")
    records = load_manifest(config.manifest)
    if config.method is Method.EMBEDDING:
        matrix = _acquire_embeddings(args, config, records)
        ranked = rank_embedding(
            records,
            matrix,
            config.grouping,
            normalized=config.normalized,
            metric=config.distance,
            workers=args.workers,
        )
    else:
        ranked = rank_size(records, config.grouping)
    _write_with(config.output, lambda s: save_ranked_csv(ranked, s))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    ranked = load_ranked_csv(_require_file(Path(args.ranked), "ranked file"))
    records = load_manifest(config.manifest)
    outlier_filter = OutlierType(args.outlier_type) if args.outlier_type else None
    report = evaluate(
        ranked,
        records,
        outlier_filter=outlier_filter,
        include_other_types=args.include_other_types,
    )
    if config.output is not None:
        save_report_csv([report], config.output)
    print(format_report_table(report))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    records = load_manifest(config.manifest)
    matrix = _acquire_embeddings(args, config, records)

    def write(stream: IO[str]) -> None:
        writer = csv.writer(stream)
        writer.writerow(("method", "grouping", "normalized") + REPORT_COLUMNS)
        for grouping in _SWEEP_ORDER:
            for method, normalized in _SWEEP_VARIANTS:
                if method is Method.EMBEDDING:
                    ranked = rank_embedding(
                        records,
                        matrix,
                        grouping,
                        normalized=normalized,
                        metric=config.distance,
                        workers=args.workers,
                    )
                else:
                    ranked = rank_size(records, grouping)
                report = evaluate(ranked, records)
                writer.writerow(
                    [method.value, grouping.value, "true" if normalized else "false"]
                    + report.row()
                )

    _write_with(config.output, write)
    return 0


def cmd_area(args: argparse.Namespace) -> int:
    calibration_path = _require_file(Path(args.calibration), "calibration frame")
    for frame in args.frames:
        _require_file(Path(frame), "frame")
    try:
        params = SegmentationParams(
            threshold=args.threshold,
            morph_radius=args.morph_radius,
            connectivity=Connectivity.FOUR if args.connectivity == "four" else Connectivity.EIGHT,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    calibration = read_pnm(calibration_path)

    results: list[tuple[str, str, int]] = []
    for frame_path in args.frames:
        try:
            area = extract_area(read_pnm(frame_path), calibration, params)
        except GroupsiftError as exc:
            raise GroupsiftError(f"frame {frame_path}: {exc}") from None
        results.append((Path(frame_path).stem, frame_path, area))

    def write(stream: IO[str]) -> None:
        writer = csv.writer(stream)
        writer.writerow(("image_id", "path", "area_px"))
        for image_id, path, area in results:
            writer.writerow((image_id, path, area))

    _write_with(Path(args.output) if args.output else None, write)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .review_service import ReviewSession, create_app

    config = _resolve_config(args)
    if config.method is Method.SIZE and config.normalized:
        raise UsageError("size ranking is always pooled; --normalized applies to embeddings")
    if args.ui_dir:
        ui_dir = Path(args.ui_dir)
        if not ui_dir.is_dir():
            raise UsageError(f"ui directory not found: {ui_dir}")
    else:
        bundled = Path(__file__).parent / "ui"
        ui_dir = bundled if bundled.is_dir() else None
    records = load_manifest(config.manifest)
    matrix = None
    if config.method is Method.EMBEDDING:
        matrix = _acquire_embeddings(args, config, records)
    session = ReviewSession.open(
        Path(args.session_dir),
        config=config,
        records=records,
        embeddings=matrix,
        workers=args.workers,
    )
    app = create_app(session, ui_dir=ui_dir)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    finally:
        session.close()
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GroupsiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
