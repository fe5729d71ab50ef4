import argparse
from pathlib import Path

import numpy as np
import structlog

from ..config import Settings
from ..errors import ConfigurationError
from ..services.ck import occupation_curve
from ..storage import write_text, fingerprint, matrix_csv, read_tensor
from . import finish, new_run_id

logger = structlog.get_logger()

NAME = "occupancy"
HELP = "state occupation probabilities pi(t), t = 1..T"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tensor", required=True, help="tensor JSON with an init block")
    parser.add_argument("--t-max", type=int, required=True, help="last day")
    parser.add_argument("--out", required=True, help="CSV to write")


def run(args: argparse.Namespace, settings: Settings) -> int:
    run_id = new_run_id()
    if args.t_max < 1:
        raise ConfigurationError("--t-max must be at least 1")
    document = read_tensor(args.tensor)
    init = document.to_init()
    if init is None:
        raise ConfigurationError(f"tensor file {args.tensor} has no init block")
    tensor = document.to_tensor()
    labels = document.labels or [str(i) for i in range(1, tensor.m + 1)]

    curve = occupation_curve(tensor, init, args.t_max)
    output = write_text(Path(args.out), matrix_csv(curve, np.arange(1, args.t_max + 1), labels, "t"))
    finish(
        NAME,
        output,
        inputs={"tensor": args.tensor},
        configuration={"t_max": args.t_max, "tensor_fingerprint": fingerprint(args.tensor)},
    )
    logger.info("Occupation probabilities written", run_id=run_id, days=args.t_max, out=str(output))
    return 0
