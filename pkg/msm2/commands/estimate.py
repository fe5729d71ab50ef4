import argparse
import time
from pathlib import Path

import structlog

from ..config import Settings
from ..services.estimate import count_paths, estimate_first_order, estimate_initialization, estimate_tensor
from ..storage import emit_report, load_space, read_dataset, read_labels
from . import finish, n_jobs, new_run_id

logger = structlog.get_logger()

NAME = "estimate"
HELP = "estimate the second-order tensor from trajectories"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="trajectory CSV")
    parser.add_argument("--space", required=True, help="space JSON or 'divine'")
    parser.add_argument("--labels", default=None, help="labels CSV (index,label) for named states")
    parser.add_argument("--method", choices=["ratio", "conditional"], default="ratio")
    parser.add_argument("--min-at-risk", type=int, default=None, help="thin-cell threshold")
    parser.add_argument("--strict", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--first-order-out", default=None, help="also write the first-order matrix CSV")
    parser.add_argument("--n-jobs", type=int, default=None)
    parser.add_argument("--out", required=True, help="tensor JSON to write")


def run(args: argparse.Namespace, settings: Settings) -> int:
    run_id = new_run_id()
    start_time = time.time()
    strict = settings.strict_validation if args.strict is None else args.strict
    min_at_risk = settings.min_at_risk if args.min_at_risk is None else args.min_at_risk
    logger.info("Starting estimation", run_id=run_id, data=args.data, method=args.method)

    space = load_space(args.space)
    labels = read_labels(args.labels) if args.labels else None
    dataset, report = read_dataset(args.data, space, strict=strict, labels=labels)
    counts = count_paths(dataset, space, report=report, n_jobs=n_jobs(args, settings))
    estimate = estimate_tensor(counts, method=args.method, min_at_risk=min_at_risk)
    init = estimate_initialization(dataset, space, report=report)
    output = emit_report(estimate.tensor, Path(args.out), space=space, init=init)

    extra = []
    if args.first_order_out:
        matrix = estimate_first_order(dataset, space, report=report)
        extra.append(emit_report(matrix, Path(args.first_order_out), space=space))

    finish(
        NAME,
        output,
        inputs={"data": args.data, "space": args.space, **({"labels": args.labels} if args.labels else {})},
        configuration={"method": args.method, "min_at_risk": min_at_risk, "strict": strict},
        dataset=args.data,
        extra_outputs=extra,
    )
    logger.info(
        "Estimation finished",
        run_id=run_id,
        subjects=counts.n_subjects,
        thin_pairs=len(estimate.thin_pairs()),
        out=str(output),
        elapsed_seconds=round(time.time() - start_time, 2),
    )
    return 0
