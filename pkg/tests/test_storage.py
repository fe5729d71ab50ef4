import json

import numpy as np
import pytest

from msm2.constants import MAX_DAY
from msm2.errors import ConfigurationError, DatasetValidationError, StorageError
from msm2.models import ChainInitialization, FirstOrderMatrix, StateSpace, Trajectory
from msm2.schemas import RunManifest
from msm2.services.ck import prediction_curve
from msm2.services.estimate import count_paths, estimate_tensor, two_step_summary
from msm2.services.mtest import TestGrid, wild_bootstrap_test
from msm2.storage import (
    canonical_trajectories_csv,
    diagnostics_path,
    emit_report,
    load_space,
    manifest_path,
    parse_trajectories,
    read_dataset,
    read_labels,
    read_tensor,
    write_manifest,
    write_markov_diagnostics,
    write_space,
    write_tensor,
    write_trajectories,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_minimal_file(tmp_path, complete_space):
    path = write(tmp_path / "one.csv", "subject_id,day,state\ns1,1,1\ns1,2,1\ns1,3,2\n")
    dataset = parse_trajectories(path, complete_space(2))
    assert len(dataset) == 1
    assert dataset[0].states == (1, 1, 2)
    assert dataset[0].start_day == 1


def test_rows_in_any_order(tmp_path, complete_space):
    path = write(tmp_path / "shuffled.csv", "subject_id,day,state\nb,2,2\na,1,1\nb,1,1\na,2,1\n")
    dataset = parse_trajectories(path, complete_space(2))
    assert [(t.subject_id, t.states) for t in dataset] == [("a", (1, 1)), ("b", (1, 2))]


def test_gap_names_subject_and_day(tmp_path, complete_space):
    path = write(tmp_path / "gap.csv", "subject_id,day,state\np7,1,1\np7,2,1\np7,4,2\n")
    with pytest.raises(DatasetValidationError) as exc_info:
        parse_trajectories(path, complete_space(2))
    assert "gap at day 3" in exc_info.value.message
    assert "p7" in exc_info.value.message


def test_duplicate_rows_rejected(tmp_path, complete_space):
    path = write(tmp_path / "dup.csv", "subject_id,day,state\na,1,1\na,1,2\n")
    with pytest.raises(DatasetValidationError, match="duplicate"):
        parse_trajectories(path, complete_space(2))


def test_non_integer_day_rejected(tmp_path, complete_space):
    path = write(tmp_path / "frac.csv", "subject_id,day,state\na,1,1\na,1.5,2\n")
    with pytest.raises(DatasetValidationError, match="non-integer day"):
        parse_trajectories(path, complete_space(2))


def test_unknown_label_rejected(tmp_path, divine_space):
    path = write(tmp_path / "label.csv", "subject_id,day,state\na,1,NSP\na,2,ICU\n")
    with pytest.raises(DatasetValidationError, match="ICU"):
        parse_trajectories(path, divine_space)


def test_non_ascii_digits_are_not_state_codes(tmp_path, complete_space):
    path = write(tmp_path / "digits.csv", "subject_id,day,state\na,1,1\na,2,٣\nb,1,²\n")
    with pytest.raises(DatasetValidationError, match="unknown state label") as excinfo:
        parse_trajectories(path, complete_space(3))
    assert excinfo.value.violations == ["²", "٣"]


def test_day_past_last_admissible_rejected(tmp_path, complete_space):
    path = write(tmp_path / "late.csv", f"subject_id,day,state\na,1,1\nb,{MAX_DAY + 1},1\n")
    with pytest.raises(DatasetValidationError, match="last admissible day") as excinfo:
        parse_trajectories(path, complete_space(2))
    assert excinfo.value.context["subject_id"] == "b"


def test_huge_day_rejected_before_conversion(tmp_path, complete_space):
    path = write(tmp_path / "huge.csv", "subject_id,day,state\na,1e30,1\n")
    with pytest.raises(DatasetValidationError, match="last admissible day"):
        parse_trajectories(path, complete_space(2))


def test_labels_resolved_by_name(tmp_path, divine_space):
    path = write(tmp_path / "named.csv", "subject_id,day,state\na,1,NSP\na,2,SP\na,3,Death\n")
    assert parse_trajectories(path, divine_space)[0].states == (1, 2, 7)


def test_labels_file(tmp_path, divine_space):
    labels = write(tmp_path / "labels.csv", "index,label\n" + "".join(
        f"{i},{name}\n" for i, name in enumerate(["a", "b", "c", "d", "e", "f", "g"], start=1)
    ))
    assert read_labels(labels)[0] == "a"
    path = write(tmp_path / "named.csv", "subject_id,day,state\nx,1,a\nx,2,f\n")
    dataset, _ = read_dataset(path, divine_space, labels=read_labels(labels))
    assert dataset[0].states == (1, 6)


def test_bad_header_is_storage_error(tmp_path, complete_space):
    path = write(tmp_path / "header.csv", "id,day,state\na,1,1\n")
    with pytest.raises(StorageError) as exc_info:
        parse_trajectories(path, complete_space(2))
    assert exc_info.value.exit_code == 2


def test_missing_file_is_storage_error(tmp_path, complete_space):
    with pytest.raises(StorageError):
        parse_trajectories(tmp_path / "absent.csv", complete_space(2))


def test_lenient_parse_flags_illegal_moves(tmp_path, divine_space):
    path = write(tmp_path / "bad.csv", "subject_id,day,state\na,1,1\na,2,3\nb,1,1\nb,2,6\n")
    with pytest.raises(DatasetValidationError):
        read_dataset(path, divine_space, strict=True)
    dataset, report = read_dataset(path, divine_space, strict=False)
    assert len(dataset) == 2
    assert report.flagged == frozenset({"a"})


def test_divine_cohort_round_trip(tmp_path, divine_cohort, divine_space):
    """parse then canonical serialization gives back the same file"""
    path = write_trajectories(divine_cohort, tmp_path / "divine.csv")
    parsed = parse_trajectories(path, divine_space)
    assert len(parsed) == 2076
    assert canonical_trajectories_csv(parsed) == path.read_text(encoding="utf-8")


def test_space_file_round_trip(tmp_path, divine_space):
    path = write_space(divine_space, tmp_path / "space.json")
    assert load_space(str(path)) == divine_space
    assert load_space("divine") == divine_space


def test_invalid_space_is_configuration_error(tmp_path):
    path = write(tmp_path / "space.json", json.dumps({"labels": ["a", "b"], "edges": [[1, 3]], "absorbing": []}))
    with pytest.raises(ConfigurationError):
        load_space(str(path))


def test_tensor_round_trip_is_byte_identical(tmp_path, random_tensors):
    tensor = random_tensors[4]
    m = tensor.m
    init = ChainInitialization(initial_dist=np.full(m, 1 / m), first_step=FirstOrderMatrix.identity(m))
    first = write_tensor(tensor, tmp_path / "a.json", init)
    document = read_tensor(first)
    second = write_tensor(document.to_tensor(), tmp_path / "b.json", document.to_init())
    assert first.read_bytes() == second.read_bytes()
    np.testing.assert_array_equal(document.to_tensor().values, tensor.values)


def test_tensor_file_layout(tmp_path, random_tensors):
    path = write_tensor(random_tensors[0], tmp_path / "t.json")
    payload = json.loads(path.read_text())
    assert set(payload) == {"m", "labels", "matrices", "support", "init"}
    assert payload["init"] is None
    assert len(payload["matrices"]) == payload["m"]


def test_malformed_tensor_file(tmp_path):
    path = write(tmp_path / "t.json", json.dumps({"m": 2, "matrices": [[[1, 0]]], "support": [[True]]}))
    with pytest.raises(StorageError):
        read_tensor(path)


def test_empty_curve_is_header_only(tmp_path, random_tensors):
    curve = prediction_curve(random_tensors[0], 1, 1, 1, 0)
    path = emit_report(curve, tmp_path / "curve.csv")
    assert path.read_text() == "n,probability,lost_mass\n"


def test_curve_csv_rows(tmp_path, random_tensors):
    curve = prediction_curve(random_tensors[0], 1, 2, 2, 3)
    lines = emit_report(curve, tmp_path / "curve.csv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[1].startswith("1,")


def test_two_step_summary_csv(tmp_path, divine_cohort, divine_space):
    rows = two_step_summary(count_paths(divine_cohort, divine_space))
    text = emit_report(rows, tmp_path / "paths.csv", space=divine_space).read_text()
    assert text.splitlines()[0] == "transition,total,path,count,percent"
    assert "SP->Recov,223,NSP->SP->Recov,171,76.68" in text
    assert "SP->Recov,223,admission->SP->Recov,52,23.32" in text


def test_tensor_emission_is_deterministic(tmp_path, divine_cohort, divine_space):
    tensor = estimate_tensor(count_paths(divine_cohort, divine_space)).tensor
    a = emit_report(tensor, tmp_path / "a.json")
    b = emit_report(tensor, tmp_path / "b.json")
    assert a.read_bytes() == b.read_bytes()


def test_emit_needs_space_for_labelled_reports(tmp_path, divine_cohort, divine_space):
    rows = two_step_summary(count_paths(divine_cohort, divine_space))
    with pytest.raises(ConfigurationError):
        emit_report(rows, tmp_path / "paths.csv")


@pytest.fixture
def small_markov_report(complete_space):
    dataset = [
        Trajectory(subject_id="a", states=(3, 1, 2)),
        Trajectory(subject_id="b", states=(3, 1, 2)),
        Trajectory(subject_id="c", states=(2, 1, 2)),
        Trajectory(subject_id="d", states=(2, 1, 1, 2)),
    ]
    space = complete_space(3)
    grid = TestGrid(t0=1.0, t_max=1.5, step=0.5)
    return space, wild_bootstrap_test(dataset, space, 1, 2, grid=grid, conditioning_states=[1, 3], B=20, seed=0)


def test_markov_table_layout(tmp_path, small_markov_report):
    space, report = small_markov_report
    lines = emit_report(report, tmp_path / "markov.csv", space=space).read_text().splitlines()
    assert lines[0] == "transition,statistic,S1,S3,overall,overall_max"
    rows = [line.split(",") for line in lines[1:]]
    assert [row[:2] for row in rows] == [["S1->S2", "UM"], ["S1->S2", "WM"], ["S1->S2", "S"]]
    by_state = {r.conditioning: r for r in report.conditioning}
    for i, row in enumerate(rows):
        # state 1 is vacuous and dropped
        assert row[2] == ""
        assert float(row[3]) == by_state[3].p_values.as_tuple()[i]
        assert float(row[4]) == report.overall.mean_p_values.as_tuple()[i]
        assert float(row[5]) == report.overall.max_p_values.as_tuple()[i]


def test_markov_table_joins_conditioning_columns(tmp_path, small_markov_report):
    space, report = small_markov_report
    only_three = report.model_copy(update={"conditioning": report.conditioning[1:]})
    lines = emit_report([only_three, report], tmp_path / "markov.csv", space=space).read_text().splitlines()
    assert lines[0] == "transition,statistic,S1,S3,overall,overall_max"
    assert len(lines) == 7


def test_markov_diagnostics_file(tmp_path, small_markov_report):
    space, report = small_markov_report
    path = write_markov_diagnostics([report], tmp_path / "markov.csv", space)
    assert path == diagnostics_path(tmp_path / "markov.csv") == tmp_path / "markov.diagnostics.csv"
    lines = path.read_text().splitlines()
    assert lines[1] == "S1->S2,S1,global,,,,,,,2,0,vacuous"
    assert [line.split(",")[1:3] for line in lines[1:]] == [
        ["S1", "global"], ["S3", "global"], ["all", "mean"], ["all", "max"],
    ]


def test_unwritable_path(tmp_path, random_tensors):
    blocker = write(tmp_path / "file", "x")
    with pytest.raises(StorageError):
        write_tensor(random_tensors[0], blocker / "t.json")


def test_manifest_next_to_output(tmp_path):
    output = tmp_path / "out.csv"
    manifest = RunManifest(command="paths", tool_version="1.0.0", outputs=[str(output)])
    path = write_manifest(manifest, output)
    assert path == manifest_path(output) == tmp_path / "out.csv.manifest.json"
    assert json.loads(path.read_text())["command"] == "paths"
    assert "timestamp" not in path.read_text()


def test_space_from_edges_json(tmp_path):
    path = write(tmp_path / "space.json", json.dumps({
        "labels": ["Healthy", "Ill", "Dead"],
        "edges": [[1, 2], [2, 1], [1, 3], [2, 3]],
        "absorbing": [3],
    }))
    space = load_space(str(path))
    assert isinstance(space, StateSpace)
    assert space.allows(2, 2)
    assert space.is_absorbing(3)
