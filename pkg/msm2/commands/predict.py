import argparse
from pathlib import Path

import structlog

from ..config import Settings
from ..errors import ConfigurationError
from ..services.ck import prediction_curve
from ..storage import emit_report, fingerprint, read_tensor
from . import finish, new_run_id, resolve_pair, resolve_state

logger = structlog.get_logger()

NAME = "predict"
HELP = "prediction curve P(X_{s+2+n} = l | X_{s+1} = j, X_s = h)"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tensor", required=True, help="tensor JSON")
    parser.add_argument("--from", dest="pair", required=True, help="previous and current state, e.g. 1,2 or NSP,SP")
    parser.add_argument("--target", required=True, help="target state")
    parser.add_argument("--horizon", type=int, required=True, help="number of curve points")
    parser.add_argument("--out", required=True, help="curve CSV to write")


def run(args: argparse.Namespace, settings: Settings) -> int:
    run_id = new_run_id()
    if args.horizon < 0:
        raise ConfigurationError("--horizon must be non-negative")
    document = read_tensor(args.tensor)
    tensor = document.to_tensor()
    labels = document.labels or [str(i) for i in range(1, tensor.m + 1)]
    h, j = resolve_pair(args.pair, labels)
    target = resolve_state(args.target, labels)
    logger.info("Starting prediction", run_id=run_id, h=h, j=j, target=target, horizon=args.horizon)

    curve = prediction_curve(tensor, h, j, target, args.horizon)
    output = emit_report(curve, Path(args.out))
    finish(
        NAME,
        output,
        inputs={"tensor": args.tensor},
        configuration={"h": h, "j": j, "target": target, "horizon": args.horizon, "tensor_fingerprint": fingerprint(args.tensor)},
    )
    logger.info("Prediction finished", run_id=run_id, points=len(curve.values), out=str(output))
    return 0
