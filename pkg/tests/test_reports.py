"""Report files: stable formatting, exact bytes, deterministic figures."""

import json

import numpy as np
import pytest

from powersample.diagnostics import (
    CostCounters,
    McmcStageRecord,
    StepRecord,
    record_to_dict,
    write_jsonl,
)
from powersample.oracle import empirical_distribution, enumerate_base, tv_distance
from powersample.reports import (
    METADATA_FILE,
    as_sequence_tuples,
    compare_figure,
    decay_figure,
    fmt,
    histogram_figure,
    sequence_label,
    write_bias_tables,
    write_cost_table,
    write_csv,
    write_histogram,
    write_json,
    write_meta,
    write_tv_table,
)

PLAN_SEQ = (0, 2, 3, 5)  # PLAN CALC ANSWER4 EOS
GUESS4_SEQ = (1, 3, 5, 5)
GUESS5_SEQ = (1, 4, 5, 5)


def test_fmt_scalars():
    assert fmt(True) == "true" and fmt(False) == "false"
    assert fmt(np.bool_(True)) == "true"
    assert fmt(7) == "7" and fmt(np.int64(-3)) == "-3"
    assert fmt(0.5) == "0.5"
    assert fmt(np.float64(2.0)) == "2"
    assert fmt(1 / 3) == "0.333333333333"  # 12 significant digits
    assert fmt("label") == "label"


def test_write_csv_exact_bytes(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["a", "b"], [(1, 0.5), (True, "z")])
    assert path.read_bytes() == b"a,b\n1,0.5\ntrue,z\n"


def test_write_json_sorted_keys(tmp_path):
    path = write_json(tmp_path / "t.json", {"b": 1, "a": 2})
    assert path.read_text() == '{\n  "a": 2,\n  "b": 1\n}\n'


def test_write_meta_quarantines_volatile_facts(tmp_path):
    write_meta(tmp_path, {"run": 1.23456, "fit": 0.5})
    doc = json.loads((tmp_path / METADATA_FILE).read_text())
    assert set(doc) == {"written_at", "python", "numpy", "wall_time_s"}
    assert doc["wall_time_s"] == {"run": 1.235, "fit": 0.5}
    assert doc["numpy"] == np.__version__


def test_sequence_label_cuts_after_eos(toy):
    assert sequence_label(toy, PLAN_SEQ) == "PLAN CALC ANSWER4 EOS"
    assert sequence_label(toy, GUESS4_SEQ) == "GUESS ANSWER4 EOS"
    assert sequence_label(toy, (5, 0, 1)) == "EOS"


def test_as_sequence_tuples_normalizes(toy):
    # samplers stop at eos, so rows may be short; padding restores the
    # fixed-length absorbed form the exact distributions are keyed by
    rows = [np.array([1, 3, 5]), PLAN_SEQ, (5,)]
    assert as_sequence_tuples(rows, toy) == [
        GUESS4_SEQ,
        PLAN_SEQ,
        (5, 5, 5, 5),
    ]
    with pytest.raises(ValueError, match="longer"):
        as_sequence_tuples([(0, 1, 2, 3, 4)], toy)


def test_write_histogram_rows_and_order(toy, tmp_path):
    seqs = [PLAN_SEQ] * 3 + [GUESS4_SEQ] * 2 + [GUESS5_SEQ] * 2
    path = write_histogram(tmp_path, seqs, toy, exact=enumerate_base(toy))
    lines = path.read_text().splitlines()
    assert lines[0] == "rank,sequence,count,frequency,exact_prob"
    assert lines[1] == "1,PLAN CALC ANSWER4 EOS,3,0.428571428571,0.38"
    # count ties break by ascending sequence id
    assert lines[2] == "2,GUESS ANSWER4 EOS,2,0.285714285714,0.33"
    assert lines[3] == "3,GUESS ANSWER5 EOS,2,0.285714285714,0.27"
    assert len(lines) == 4
    bare = write_histogram(tmp_path, seqs, toy)
    assert bare.read_text().splitlines()[0] == "rank,sequence,count,frequency"


def test_write_tv_table_covers_union(toy, tmp_path):
    empirical = empirical_distribution([PLAN_SEQ] * 4 + [GUESS4_SEQ] * 4, toy)
    exact = enumerate_base(toy)
    tv, path = write_tv_table(tmp_path, empirical, exact, toy)
    assert tv == tv_distance(empirical, exact)
    lines = path.read_text().splitlines()
    assert lines[0] == "sequence,empirical,exact,abs_diff"
    # union of supports: the two unsampled base sequences appear with 0
    assert len(lines) == 5
    assert lines[2].startswith("PLAN CALC ANSWER5 EOS,0,0.02,")
    assert lines[1].split(",")[1] == "0.5"


def test_write_cost_table_exact_bytes(tmp_path):
    cost = CostCounters(
        sequences=5, sampled_tokens=100, scored_tokens=20, clamp_events=1
    )
    path = write_cost_table(tmp_path, cost)
    assert path.read_text() == (
        "metric,value\n"
        "model_calls,120\n"
        "sequences_generated,5\n"
        "tokens_generated,100\n"
        "raw.clamp_events,1\n"
        "raw.model_calls,120\n"
        "raw.sampled_tokens,100\n"
        "raw.scored_tokens,20\n"
        "raw.sequences,5\n"
    )


def test_write_bias_tables(tmp_path):
    from powersample.biaslab import BiasFixture, run_bias_suite

    results = run_bias_suite(
        m_grid=(2, 4, 8, 16),
        replicates=400,
        master_seed=11,
        fixtures=(BiasFixture("mini", 5, 3, 2, 3.0, "report test"),),
    )
    meas, slopes = write_bias_tables(tmp_path, results)
    mlines = meas.read_text().splitlines()
    assert mlines[0] == "model,prefix,alpha,estimator,m,bias,stderr,used"
    assert len(mlines) == 1 + 8  # 4 M values x 2 estimators
    assert mlines[1].startswith("mini,root,3,plain,2,")
    assert mlines[1].split(",")[-1] in ("true", "false")
    slines = slopes.read_text().splitlines()
    assert slines[0] == (
        "model,alpha,estimator,slope,slope_stderr,points_used,indistinguishable"
    )
    assert len(slines) == 3
    assert slines[1].startswith("mini,3,plain,") and ",jackknife," in slines[2]


def test_record_serialization(tmp_path):
    step = StepRecord(
        t=0,
        kind="power",
        candidates=[0, 1],
        p_base=[0.4, 0.6],
        log_scale=[0.0, -0.1],
        p_plain=[0.5, 0.5],
        p_jk=[0.55, 0.45],
        clamped=False,
        chosen=1,
    )
    mcmc = McmcStageRecord(stage=0, prefix_len=1, steps=8, accepted=2)
    assert mcmc.acceptance_rate == 0.25
    assert McmcStageRecord(0, 1, 0, 0).acceptance_rate == 0.0
    doc = record_to_dict(step)
    assert doc["record"] == "StepRecord" and doc["chosen"] == 1
    path = tmp_path / "steps.jsonl"
    write_jsonl([step, mcmc, {"note": np.float64(1.5)}], path)
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    assert json.loads(lines[1])["acceptance_rate"] == 0.25
    assert json.loads(lines[2]) == {"note": 1.5}
    with pytest.raises(TypeError, match="serialize"):
        write_jsonl([{"bad": object()}], tmp_path / "bad.jsonl")


@pytest.mark.parametrize("with_exact", [False, True])
def test_histogram_figure_deterministic(toy, tmp_path, with_exact):
    seqs = [PLAN_SEQ] * 5 + [GUESS4_SEQ] * 3
    exact = enumerate_base(toy) if with_exact else None
    outs = []
    for name in ("one", "two"):
        d = tmp_path / name
        d.mkdir()
        outs.append(histogram_figure(d, seqs, toy, exact=exact))
    assert outs[0].name == "histogram.png"
    first = outs[0].read_bytes()
    assert first[:8] == b"\x89PNG\r\n\x1a\n" and len(first) > 1000
    assert first == outs[1].read_bytes()


def test_decay_and_compare_figures_deterministic(tmp_path):
    from powersample.biaslab import BiasFixture, run_bias_suite

    results = run_bias_suite(
        m_grid=(2, 4, 8, 16),
        replicates=300,
        master_seed=21,
        fixtures=(BiasFixture("mini", 5, 3, 2, 3.0, "figure test"),),
    )
    rows = [
        {"sampler": "power", "tv": 0.01, "tokens_generated": 123},
        {"sampler": "mcmc", "tv": None, "tokens_generated": 456},
    ]
    blobs = []
    for name in ("one", "two"):
        d = tmp_path / name
        d.mkdir()
        p1 = decay_figure(d, results)
        p2 = compare_figure(d, rows)
        assert p1.name == "bias_decay.png" and p2.name == "compare.png"
        blobs.append((p1.read_bytes(), p2.read_bytes()))
    assert blobs[0] == blobs[1]
