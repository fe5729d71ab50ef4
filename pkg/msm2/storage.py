"""
File persistence: trajectory CSV, labels file, space and tensor JSON,
report CSVs and run manifests.

Every writer produces the same bytes for the same object.
"""

import hashlib
import io
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ValidationError

from .config import get_settings
from .constants import LABELS_COLUMNS, MAX_DAY, TRAJECTORY_COLUMNS
from .errors import ConfigurationError, DatasetValidationError, StorageError
from .models import FirstOrderMatrix, StateSpace, Trajectory, TransitionTensor, ValidationReport, validate_dataset
from .schemas import MarkovTestRow, RunManifest, SimulationConfigFile, SpaceDocument, TensorDocument, TwoStepLine
from .services.ck import PredictionCurve
from .services.estimate import ADMISSION, TwoStepRow
from .services.mtest import SUMMARY_KINDS, MarkovTestReport, SummaryTriple

logger = structlog.get_logger()

PathLike = Union[str, Path]


def _read_text(path: PathLike) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e.strerror or e}", path=str(path))


def write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e.strerror or e}", path=str(path))
    logger.debug("Wrote file", path=str(path), bytes=len(text))
    return path


def _read_json(path: PathLike) -> Any:
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as e:
        raise StorageError(f"{path} is not valid JSON: {e.msg} (line {e.lineno})", path=str(path))


def _dump_json(payload: Any) -> str:
    return json.dumps(payload, indent=2) + "\n"


def _csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n", float_format=get_settings().float_format)


def fingerprint(path: PathLike) -> str:
    """sha256 of the file contents"""
    try:
        return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e.strerror or e}", path=str(path))


# State space and labels

def load_space(source: str) -> StateSpace:
    """`divine` or the path of a space JSON file."""
    if source == "divine":
        return StateSpace.divine()
    payload = _read_json(source)
    try:
        return SpaceDocument.model_validate(payload).to_space()
    except ValidationError as e:
        raise ConfigurationError(f"invalid state space in {source}: {e.errors()[0]['msg']}", path=source)


def write_space(space: StateSpace, path: PathLike) -> Path:
    return write_text(path, _dump_json(SpaceDocument.from_space(space).model_dump()))


def read_labels(path: PathLike) -> List[str]:
    """Labels file `index,label` with indices 1..M."""
    frame = _read_frame(path, LABELS_COLUMNS)
    index = pd.to_numeric(frame["index"], errors="coerce")
    if index.isna().any() or list(index.astype(int)) != list(range(1, len(frame) + 1)):
        raise StorageError(f"{path}: label indices must run 1..{len(frame)} in order", path=str(path))
    return [str(label) for label in frame["label"]]


def _read_frame(path: PathLike, columns: Sequence[str]) -> pd.DataFrame:
    text = _read_text(path)
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise StorageError(f"{path} is not a valid CSV file: {e}", path=str(path))
    if tuple(frame.columns) != tuple(columns):
        raise StorageError(
            f"{path}: expected header {','.join(columns)}, got {','.join(map(str, frame.columns))}",
            path=str(path),
        )
    return frame


# Trajectories

def _state_codes(tokens: pd.Series, labels: Sequence[str], path: PathLike) -> np.ndarray:
    lookup = {label: i + 1 for i, label in enumerate(labels)}
    numeric = tokens.str.fullmatch(r"[0-9]+")
    codes = tokens.map(lookup).where(~numeric, pd.to_numeric(tokens.where(numeric), errors="coerce"))
    unknown = sorted(set(tokens[~numeric & codes.isna()]))
    if unknown:
        raise DatasetValidationError(
            f"{path}: unknown state label(s) {', '.join(unknown)}",
            violations=unknown,
        )
    return codes.to_numpy(dtype=np.int64)


def read_dataset(
    path: PathLike,
    space: StateSpace,
    strict: Optional[bool] = None,
    labels: Optional[Sequence[str]] = None,
) -> Tuple[List[Trajectory], ValidationReport]:
    """
    Parse a long-format trajectory CSV and validate it against the space.

    States are integers 1..M or labels; labels default to the space's.
    Subjects come back sorted by id.
    """
    strict = get_settings().strict_validation if strict is None else strict
    frame = _read_frame(path, TRAJECTORY_COLUMNS)
    if frame.empty:
        raise DatasetValidationError(f"{path}: no trajectory rows")

    day = pd.to_numeric(frame["day"], errors="coerce")
    bad = frame.loc[day.isna() | (day != day.round()), "day"]
    if not bad.empty:
        raise DatasetValidationError(f"{path}: non-integer day {bad.iloc[0]!r}", violations=list(bad))
    if (day < 1).any():
        raise DatasetValidationError(f"{path}: days start at 1")
    late = frame.loc[day > MAX_DAY]
    if not late.empty:
        raise DatasetValidationError(
            f"{path}: day {late['day'].iloc[0]} is past the last admissible day {MAX_DAY}",
            subject_id=late["subject_id"].iloc[0],
        )
    frame = frame.assign(day=day.astype(np.int64))
    frame = frame.assign(state=_state_codes(frame["state"], labels or space.labels, path))

    duplicated = frame.duplicated(["subject_id", "day"])
    if duplicated.any():
        row = frame[duplicated].iloc[0]
        raise DatasetValidationError(
            f"{path}: duplicate row for subject {row['subject_id']} day {row['day']}",
            subject_id=row["subject_id"],
        )

    frame = frame.sort_values(["subject_id", "day"], kind="mergesort")
    dataset = []
    for subject_id, rows in frame.groupby("subject_id", sort=True):
        days = rows["day"].to_numpy()
        gaps = np.flatnonzero(np.diff(days) != 1)
        if gaps.size:
            missing = int(days[gaps[0]]) + 1
            raise DatasetValidationError(
                f"{path}: subject {subject_id} has a gap at day {missing}",
                subject_id=subject_id,
                day=missing,
            )
        dataset.append(Trajectory(
            subject_id=str(subject_id),
            start_day=int(days[0]),
            states=tuple(int(s) for s in rows["state"]),
        ))

    report = validate_dataset(dataset, space, strict=strict)
    logger.info(
        "Parsed trajectories",
        path=str(path),
        subjects=len(dataset),
        rows=len(frame),
        flagged=len(report.flagged),
    )
    return dataset, report


def parse_trajectories(path: PathLike, space: StateSpace, strict: Optional[bool] = None) -> List[Trajectory]:
    return read_dataset(path, space, strict)[0]


def canonical_trajectories_csv(dataset: Sequence[Trajectory]) -> str:
    """Long format sorted by subject id then day."""
    rows = [
        (t.subject_id, t.start_day + i, state)
        for t in sorted(dataset, key=lambda t: t.subject_id)
        for i, state in enumerate(t.states)
    ]
    return _csv(pd.DataFrame(rows, columns=list(TRAJECTORY_COLUMNS)))


def write_trajectories(dataset: Sequence[Trajectory], path: PathLike) -> Path:
    return write_text(path, canonical_trajectories_csv(dataset))


# Tensors and configuration files

def read_tensor(path: PathLike) -> TensorDocument:
    payload = _read_json(path)
    try:
        document = TensorDocument.model_validate(payload)
        # build once so stochastic-row violations surface here
        document.to_tensor()
        document.to_init()
    except ValidationError as e:
        raise StorageError(f"invalid tensor file {path}: {e.errors()[0]['msg']}", path=str(path))
    return document


def write_tensor(tensor: TransitionTensor, path: PathLike, init=None) -> Path:
    return write_text(path, _dump_json(TensorDocument.from_tensor(tensor, init).model_dump()))


def read_simulation_config(path: PathLike) -> SimulationConfigFile:
    payload = _read_json(path)
    try:
        config = SimulationConfigFile.model_validate(payload)
    except ValidationError as e:
        raise ConfigurationError(f"invalid simulation config {path}: {e.errors()[0]['msg']}", path=str(path))
    base = Path(path).parent
    updates: Dict[str, Any] = {}
    if not Path(config.tensor).is_absolute():
        updates["tensor"] = str(base / config.tensor)
    if isinstance(config.space, str) and config.space != "divine" and not Path(config.space).is_absolute():
        updates["space"] = str(base / config.space)
    return config.model_copy(update=updates)


# Reports

def _transition_label(space: StateSpace, l: int, m: int) -> str:
    return f"{space.label(l)}->{space.label(m)}"


def _summary_fields(prefix: str, triple: Optional[SummaryTriple]) -> Dict[str, Optional[float]]:
    if triple is None:
        return {f"{prefix}UM": None, f"{prefix}WM": None, f"{prefix}S": None}
    return {f"{prefix}UM": triple.um, f"{prefix}WM": triple.wm, f"{prefix}S": triple.s}


def markov_report_rows(report: MarkovTestReport, space: StateSpace) -> List[MarkovTestRow]:
    """Long-format diagnostics: statistics, p-values and grid counts per conditioning state"""
    transition = _transition_label(space, *report.transition)
    rows = []
    for result in report.conditioning:
        rows.append(MarkovTestRow(
            transition=transition,
            conditioning=space.label(result.conditioning),
            aggregate="global",
            **_summary_fields("", result.statistics),
            **_summary_fields("p_", result.p_values),
            grid_points=result.grid_points,
            degenerate_points=result.degenerate_points,
            note=result.reason or "",
        ))
    overall = report.overall
    for aggregate, statistics, p_values in (
        ("mean", overall.mean_statistics, overall.mean_p_values),
        ("max", overall.max_statistics, overall.max_p_values),
    ):
        rows.append(MarkovTestRow(
            transition=transition,
            conditioning="all",
            aggregate=aggregate,
            **_summary_fields("", statistics),
            **_summary_fields("p_", p_values),
        ))
    return rows


def markov_table(reports: Sequence[MarkovTestReport], space: StateSpace) -> pd.DataFrame:
    """
    p-value table: one UM, WM and S row per transition, one column per
    conditioning state in state order, then the overall p-values of the
    mean and max aggregations. States dropped or not tested stay empty.
    """
    states = sorted({r.conditioning for report in reports for r in report.conditioning})
    state_columns = [space.label(j) for j in states]
    records = []
    for report in reports:
        by_state = {r.conditioning: r for r in report.conditioning}
        overall = report.overall
        for i, statistic in enumerate(SUMMARY_KINDS):
            record: Dict[str, Any] = {
                "transition": _transition_label(space, *report.transition),
                "statistic": statistic,
            }
            for j, column in zip(states, state_columns):
                result = by_state.get(j)
                if result is not None and result.p_values is not None:
                    record[column] = result.p_values.as_tuple()[i]
            record["overall"] = overall.mean_p_values.as_tuple()[i]
            record["overall_max"] = overall.max_p_values.as_tuple()[i]
            records.append(record)
    p_columns = state_columns + ["overall", "overall_max"]
    frame = pd.DataFrame(records, columns=["transition", "statistic"] + p_columns)
    frame[p_columns] = frame[p_columns].astype(float)
    return frame


def _as_reports(obj: Any) -> Optional[List[MarkovTestReport]]:
    if isinstance(obj, MarkovTestReport):
        return [obj]
    if isinstance(obj, list) and obj and all(isinstance(r, MarkovTestReport) for r in obj):
        return obj
    return None


def diagnostics_path(output: PathLike) -> Path:
    output = Path(output)
    return output.with_name(f"{output.stem}.diagnostics{output.suffix}")


def write_markov_diagnostics(reports: Sequence[MarkovTestReport], output: PathLike, space: StateSpace) -> Path:
    """Write the long-format rows of every report next to the p-value table."""
    rows = [row for report in reports for row in markov_report_rows(report, space)]
    return write_text(diagnostics_path(output), _csv(_frame(rows, MarkovTestRow)))


def two_step_lines(rows: Sequence[TwoStepRow], space: StateSpace) -> List[TwoStepLine]:
    lines = []
    for row in rows:
        previous = "admission" if row.previous == ADMISSION else space.label(row.previous)
        lines.append(TwoStepLine(
            transition=_transition_label(space, row.source, row.target),
            total=row.direct_total,
            path=f"{previous}->{space.label(row.source)}->{space.label(row.target)}",
            count=row.count,
            percent=row.percent,
        ))
    return lines


def _frame(models: Sequence[BaseModel], schema) -> pd.DataFrame:
    return pd.DataFrame([m.model_dump() for m in models], columns=list(schema.model_fields))


def curve_csv(curve: PredictionCurve) -> str:
    frame = pd.DataFrame({
        "n": pd.Series(range(1, curve.horizon + 1), dtype=np.int64),
        "probability": pd.Series(curve.values, dtype=float),
        "lost_mass": pd.Series(curve.lost_mass, dtype=float),
    })
    return _csv(frame)


def matrix_csv(values: np.ndarray, row_labels: Sequence[str], column_labels: Sequence[str], index_name: str) -> str:
    frame = pd.DataFrame(values, columns=list(column_labels))
    frame.insert(0, index_name, list(row_labels))
    return _csv(frame)


def emit_report(
    obj: Any,
    path: PathLike,
    space: Optional[StateSpace] = None,
    init=None,
) -> Path:
    """
    Write a report object: tensors as JSON, everything else as CSV.

    Accepts a MarkovTestReport or a list of them, a PredictionCurve, TransitionTensor,
    FirstOrderMatrix or a list of TwoStepRow.
    """
    if isinstance(obj, TransitionTensor):
        return write_tensor(obj, path, init)
    if isinstance(obj, PredictionCurve):
        return write_text(path, curve_csv(obj))
    if space is None:
        raise ConfigurationError(f"a state space is needed to label {type(obj).__name__}")
    reports = _as_reports(obj)
    if reports is not None:
        return write_text(path, _csv(markov_table(reports, space)))
    if isinstance(obj, FirstOrderMatrix):
        return write_text(path, matrix_csv(obj.values, space.labels, space.labels, "from"))
    if isinstance(obj, list) and all(isinstance(row, TwoStepRow) for row in obj):
        return write_text(path, _csv(_frame(two_step_lines(obj, space), TwoStepLine)))
    raise ConfigurationError(f"cannot emit {type(obj).__name__}")


def manifest_path(output: PathLike) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


def write_manifest(manifest: RunManifest, output: PathLike) -> Path:
    return write_text(manifest_path(output), _dump_json(manifest.model_dump()))
