from importlib import resources
from pathlib import Path

import pytest

from hydroflex.matrix import (
    NOT_APPLICABLE,
    AncillaryServicesMatrix,
    ScoringConfig,
    ServiceScore,
    aggregate_hsc,
    applicable,
    build_row,
    derive_mfrr_rr,
    parse_matrix,
    read_score_file,
    render_matrix,
    round_score,
    score_value,
)

GOLDEN = Path(__file__).parent / "data" / "services_matrix_golden.csv"
SCORES = resources.files("hydroflex") / "data" / "services_matrix_scores.csv"
REFS = ScoringConfig({"sync-inertia": 62.4, "synth-inertia": 62.4, "FFR": 157.1, "FCR": 186.4, "aFRR": 186.4,
                      "mFRR": 186.4, "RR": 186.4, "volt-var": 237.8, "black-start": 186.4})


@pytest.fixture(scope="module")
def published():
    return read_score_file(SCORES)


def test_golden_csv_byte_for_byte(published):
    assert render_matrix(published, "csv") == GOLDEN.read_text()


def test_json_roundtrip_exact(published):
    text = render_matrix(published, "json")
    back = parse_matrix(text)
    assert back == published
    assert render_matrix(back, "json") == text


def test_markdown_has_a_line_per_row(published):
    md = render_matrix(published, "markdown").splitlines()
    assert len(md) == 2 + len(published.rows)
    assert all(line.startswith("|") and line.endswith("|") for line in md)


def test_hsc_cells_and_not_applicable_markers(published):
    row = next(r for r in published.rows if r.technology == "VS (DFIM) & SPSS & HSC")
    assert row.cell("FCR").text == "5.0 + 1.2"
    assert row.cell("sync-inertia") is None
    golden = GOLDEN.read_text()
    assert "n/a" in golden and "5.0 + 1.2" in golden


def test_empty_matrix_renders_headers_only():
    assert len(render_matrix(AncillaryServicesMatrix(), "csv").splitlines()) == 3


def test_round_half_up():
    assert round_score(2.25) == 2.3
    assert round_score(2.35) == 2.4
    assert round_score(4.95) == 5.0


def test_score_value_linear_and_capped():
    assert score_value(186.4, "FCR", REFS) == 5.0
    assert score_value(93.2, "FCR", REFS) == 2.5
    assert score_value(400.0, "FCR", REFS) == 5.0
    assert score_value(0.0, "FCR", REFS) == 0.0
    with pytest.raises(ValueError):
        score_value(-1.0, "FCR", REFS)


def test_aggregate_hsc_is_side_by_side():
    assert aggregate_hsc(5.0, 1.2) == "5.0 + 1.2"


def test_mfrr_rr_inherit_afrr_zero():
    a = ServiceScore("aFRR", "pump", 0.0)
    m, r = derive_mfrr_rr(a)
    assert (m.service, m.value) == ("mFRR", 0.0) and (r.service, r.value) == ("RR", 0.0)


def test_score_validation():
    with pytest.raises(ValueError):
        ServiceScore("FCR", "turbine", 5.5)
    with pytest.raises(ValueError):
        ServiceScore("FCR", "turbine", 2.25)
    with pytest.raises(ValueError):
        ServiceScore("FCR", "turbine", 2.0, (1.0, 2.0))
    with pytest.raises(ValueError):
        ScoringConfig({"FCR": 0.0})


def test_applicability_rules():
    assert applicable("sync-inertia", "turbine", False, False)
    assert not applicable("sync-inertia", "turbine", True, False)
    assert not applicable("FFR", "turbine", False, False)
    assert not applicable("black-start", "turbine", True, True)
    assert not applicable("FCR", "pump", True, False, has_pump=False)


def test_build_row_reproduces_frades_vs_hsc():
    caps = {("synth-inertia", "turbine"): 62.4, ("synth-inertia", "pump"): 62.4, ("FFR", "turbine"): 110.0,
            ("FFR", "pump"): 84.8, ("FCR", "turbine"): 186.4, ("FCR", "pump"): 45.0, ("aFRR", "turbine"): 186.4,
            ("aFRR", "pump"): 45.0, ("volt-var", "turbine"): 128.1, ("volt-var", "pump"): 142.7}
    row = build_row("FRADES 2", "VS (DFIM) & SPSS & HSC", caps, REFS, variable_speed=True, hsc=True)
    texts = {s: (row.cell(s).text if row.cell(s) else NOT_APPLICABLE) for s in row.cells}
    assert texts == {"sync-inertia": "n/a", "synth-inertia": "5.0 + 5.0", "FFR": "3.5 + 2.7",
                     "FCR": "5.0 + 1.2", "aFRR": "5.0 + 1.2", "mFRR": "5.0 + 1.2", "RR": "5.0 + 1.2",
                     "volt-var": "2.7 + 3.0", "black-start": "n/a"}


def test_build_row_fixed_speed_pump_zero_not_na():
    row = build_row("X", "FS", {("FCR", "turbine"): 186.4}, REFS, variable_speed=False)
    assert row.cell("FCR", "pump").value == 0.0
    assert row.cell("FFR", "turbine") is None


def test_score_file_rejects_mixed_rows(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("demonstrator,technology,service,mode,score\nX,FS,FCR,T,1.0\nX,FS,aFRR,HSC,1.0 + 0.0\n")
    with pytest.raises(ValueError):
        read_score_file(p)
