import argparse
from pathlib import Path

import structlog

from ..config import Settings
from ..services.estimate import count_paths, two_step_summary
from ..storage import emit_report, load_space, read_dataset, read_labels
from . import finish, n_jobs, new_run_id

logger = structlog.get_logger()

NAME = "paths"
HELP = "two-step path summary: each direct transition split by the previous state"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="trajectory CSV")
    parser.add_argument("--space", required=True, help="space JSON or 'divine'")
    parser.add_argument("--labels", default=None, help="labels CSV (index,label) for named states")
    parser.add_argument("--strict", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--n-jobs", type=int, default=None)
    parser.add_argument("--out", required=True, help="summary CSV to write")


def run(args: argparse.Namespace, settings: Settings) -> int:
    run_id = new_run_id()
    strict = settings.strict_validation if args.strict is None else args.strict
    space = load_space(args.space)
    labels = read_labels(args.labels) if args.labels else None
    dataset, report = read_dataset(args.data, space, strict=strict, labels=labels)
    counts = count_paths(dataset, space, report=report, n_jobs=n_jobs(args, settings))
    rows = two_step_summary(counts)
    output = emit_report(rows, Path(args.out), space=space)
    finish(
        NAME,
        output,
        inputs={"data": args.data, "space": args.space, **({"labels": args.labels} if args.labels else {})},
        configuration={"strict": strict},
        dataset=args.data,
    )
    logger.info("Path summary written", run_id=run_id, rows=len(rows), out=str(output))
    return 0
