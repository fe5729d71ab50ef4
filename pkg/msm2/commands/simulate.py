import argparse
import time
from pathlib import Path

import structlog
from pydantic import ValidationError

from ..config import Settings
from ..errors import ConfigurationError
from ..services.sim import SimulationConfig, cohort_metadata, simulate_cohort
from ..storage import load_space, read_simulation_config, read_tensor, write_trajectories
from . import finish, n_jobs, new_run_id

logger = structlog.get_logger()

NAME = "simulate"
HELP = "simulate a cohort from a tensor file"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="simulation config JSON")
    parser.add_argument("--out", required=True, help="trajectory CSV to write")
    parser.add_argument("--n-jobs", type=int, default=None, help="worker processes (output does not depend on it)")


def build_config(path: str) -> SimulationConfig:
    file_config = read_simulation_config(path)
    space = file_config.space
    space = space.to_space() if not isinstance(space, str) else load_space(space)
    document = read_tensor(file_config.tensor)
    init = document.to_init()
    if init is None:
        raise ConfigurationError(f"tensor file {file_config.tensor} has no init block")
    try:
        return SimulationConfig(
            space=space,
            tensor=document.to_tensor(),
            init=init,
            n_subjects=file_config.n_subjects,
            t_max=file_config.t_max,
            seed=file_config.seed,
            order=file_config.order,
        )
    except ValidationError as e:
        raise ConfigurationError(f"invalid simulation config {path}: {e.errors()[0]['msg']}", path=path)


def run(args: argparse.Namespace, settings: Settings) -> int:
    run_id = new_run_id()
    start_time = time.time()
    logger.info("Starting simulation", run_id=run_id, config=args.config)

    config = build_config(args.config)
    cohort = simulate_cohort(config, n_jobs=n_jobs(args, settings))
    output = write_trajectories(cohort, Path(args.out))

    metadata = cohort_metadata(config)
    finish(
        NAME,
        output,
        inputs={"config": args.config, "tensor": read_simulation_config(args.config).tensor},
        configuration={k: v for k, v in metadata.items() if k not in ("generator", "scheme", "numpy_version")},
        generator={k: metadata[k] for k in ("generator", "scheme", "numpy_version")},
    )
    logger.info(
        "Simulation finished",
        run_id=run_id,
        subjects=len(cohort),
        out=str(output),
        elapsed_seconds=round(time.time() - start_time, 2),
    )
    return 0
