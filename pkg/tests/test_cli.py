"""CLI: config merging, subcommands, exit codes, and file determinism."""

import json
from pathlib import Path

import pytest

import powersample.cli as cli
from powersample.cli import (
    ConfigError,
    ExperimentConfig,
    config_from_sources,
    load_config_file,
    main,
)
from powersample.oracle import EnumerationBudgetError

from conftest import read_report_bytes

DATA_FILE = (
    Path(__file__).resolve().parents[1]
    / "src"
    / "powersample"
    / "data"
    / "toy.model.json"
)


def write_config(tmp_path, name="cfg.json", **doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


# --- config assembly ---------------------------------------------------------


def test_config_defaults():
    cfg = config_from_sources({"model": "toy", "sampler": "power", "alpha": 4}, {})
    assert cfg.num_samples == 1000 and cfg.seed == 0 and cfg.threads == 1
    assert cfg.formats == ("csv", "json", "png")
    assert cfg.horizon is None and cfg.sampler_params == {}
    assert cfg.alpha == 4.0 and isinstance(cfg.alpha, float)


def test_overrides_beat_document_but_none_is_ignored():
    doc = {"model": "toy", "sampler": "power", "alpha": 4, "num_samples": 10}
    cfg = config_from_sources(doc, {"alpha": 2.0, "num_samples": None, "seed": 7})
    assert cfg.alpha == 2.0 and cfg.num_samples == 10 and cfg.seed == 7


def test_sampler_params_split_from_common_fields():
    doc = {
        "model": "toy",
        "sampler": "block",
        "alpha": 2,
        "block_size": 2,
        "num_proposals": 8,
    }
    cfg = config_from_sources(doc, {})
    assert cfg.sampler_params == {"block_size": 2, "num_proposals": 8}


def test_formats_accept_comma_string():
    doc = {"model": "toy", "sampler": "power", "alpha": 2, "formats": "csv, png"}
    assert config_from_sources(doc, {}).formats == ("csv", "png")
    doc["formats"] = 7
    with pytest.raises(ConfigError, match="formats"):
        config_from_sources(doc, {})


def test_unknown_and_missing_fields():
    with pytest.raises(ConfigError, match="unknown config field") as exc:
        config_from_sources(
            {"model": "toy", "sampler": "power", "alpha": 2, "bogus": 1}, {}
        )
    assert exc.value.field == "bogus"
    with pytest.raises(ConfigError, match="required but not set") as exc:
        config_from_sources({"sampler": "power", "alpha": 2}, {})
    assert exc.value.field == "model"


def test_sampler_field_mismatch_is_an_error():
    doc = {"model": "toy", "sampler": "power", "alpha": 2, "block_size": 2}
    with pytest.raises(ConfigError, match="not a setting of the 'power' sampler"):
        config_from_sources(doc, {})


@pytest.mark.parametrize(
    "patch,field",
    [
        ({"sampler": "annealed"}, "sampler"),
        ({"alpha": 0.5}, "alpha"),
        ({"num_samples": -1}, "num_samples"),
        ({"seed": "zero"}, "seed"),
        ({"horizon": 0}, "horizon"),
        ({"threads": 0}, "threads"),
        ({"formats": ("csv", "xml")}, "formats"),
    ],
)
def test_experiment_config_validation(patch, field):
    base = dict(model="toy", sampler="power", alpha=2.0)
    base.update(patch)
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig(**base)
    assert exc.value.field == field


def test_load_config_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"a": 1,,}')
    with pytest.raises(ConfigError, match="line 1 column"):
        load_config_file(str(bad))
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="expected a JSON object"):
        load_config_file(str(arr))
    with pytest.raises(ConfigError, match="config"):
        load_config_file(str(tmp_path / "missing.json"))


# --- run ---------------------------------------------------------------------


def test_run_from_config_file(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write_config(
        tmp_path,
        model="toy",
        sampler="power",
        alpha=4,
        num_samples=200,
        seed=1,
        formats="csv,json",
        outdir=str(out),
    )
    assert main(["run", "--config", cfg]) == 0
    names = {p.name for p in out.iterdir()}
    assert names == {
        "histogram.csv",
        "tv.csv",
        "cost.csv",
        "diagnostics.jsonl",
        "summary.json",
        "meta.json",
    }
    summary = json.loads((out / "summary.json").read_text())
    assert summary["num_sequences"] == 200
    assert 0 <= summary["tv_to_exact"] < 0.25
    captured = capsys.readouterr()
    assert "wrote " in captured.out and "tv_to_exact" in captured.out


def test_run_from_flags_only(tmp_path):
    out = tmp_path / "out"
    rc = main(
        [
            "run",
            "--model",
            "toy",
            "--sampler",
            "low-temp",
            "--alpha",
            "4",
            "--num-samples",
            "50",
            "--seed",
            "3",
            "--outdir",
            str(out),
            "--formats",
            "csv",
        ]
    )
    assert rc == 0
    names = {p.name for p in out.iterdir()}
    # no json format -> no summary.json, no diagnostics, no meta sidecar
    assert names == {"histogram.csv", "tv.csv", "cost.csv"}


def test_run_zero_samples_writes_valid_empty_reports(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write_config(
        tmp_path,
        model="toy",
        sampler="power",
        alpha=2,
        num_samples=0,
        formats="csv,json",
        outdir=str(out),
    )
    assert main(["run", "--config", cfg]) == 0
    assert (out / "histogram.csv").read_text() == "rank,sequence,count,frequency,exact_prob\n"
    assert not (out / "tv.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["num_sequences"] == 0 and summary["tv_to_exact"] is None
    assert "no samples drawn" in summary["notice"]
    assert "no samples drawn" in capsys.readouterr().out


def test_run_rejects_bad_sampler_param(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        model="toy",
        sampler="power",
        alpha=2,
        num_samples=5,
        top_k=99,
        outdir=str(tmp_path / "out"),
    )
    assert main(["run", "--config", cfg]) == 2
    assert "config error" in capsys.readouterr().err


def test_run_missing_config_file(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2
    assert "config error" in capsys.readouterr().err


def test_outdir_env_var_is_default(tmp_path, monkeypatch, capsys):
    env_dir = tmp_path / "from-env"
    monkeypatch.setenv("POWERSAMPLE_OUTDIR", str(env_dir))
    cfg = write_config(
        tmp_path, model="toy", sampler="power", alpha=2, num_samples=5,
        formats="csv",
    )
    assert main(["run", "--config", cfg]) == 0
    assert (env_dir / "histogram.csv").exists()


def test_run_determinism_across_invocations(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        cfg = write_config(
            tmp_path,
            name=f"{d.name}.json",
            model="toy",
            sampler="power",
            alpha=4,
            num_samples=150,
            seed=11,
            formats="csv,json,png",
            outdir=str(d),
        )
        assert main(["run", "--config", cfg]) == 0
    a, b = (read_report_bytes(d) for d in dirs)
    assert set(a) == set(b) and a == b
    assert "histogram.png" in a


# --- validate ----------------------------------------------------------------


def test_validate_shipped_model(capsys):
    assert main(["validate", str(DATA_FILE)]) == 0
    assert capsys.readouterr().out.startswith("ok: ")


def test_validate_reports_row_sum(tmp_path, capsys):
    doc = json.loads(DATA_FILE.read_text())
    first_context = next(iter(doc["cond"]))
    doc["cond"][first_context] = [0.4, 0.59, 0, 0, 0, 0]
    bad = tmp_path / "bad.model.json"
    bad.write_text(json.dumps(doc))
    assert main(["validate", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "violation:" in err and "0.99" in err


def test_validate_missing_eos_and_parse_error(tmp_path, capsys):
    doc = json.loads(DATA_FILE.read_text())
    del doc["eos"]
    bad = tmp_path / "noeos.model.json"
    bad.write_text(json.dumps(doc))
    assert main(["validate", str(bad)]) == 2
    assert "missing field 'eos'" in capsys.readouterr().err
    mangled = tmp_path / "mangled.json"
    mangled.write_text("{not json")
    assert main(["validate", str(mangled)]) == 2
    assert "parse error: line" in capsys.readouterr().err


# --- compare -------------------------------------------------------------------


def compare_configs(tmp_path, seed=5):
    power = write_config(
        tmp_path,
        name="power.json",
        model="toy",
        sampler="power",
        alpha=4,
        num_samples=120,
        seed=seed,
        formats="csv,json",
    )
    low = write_config(
        tmp_path,
        name="low.json",
        model="toy",
        sampler="low-temp",
        alpha=4,
        num_samples=120,
        seed=seed,
        formats="csv,json",
    )
    return [power, low]


def test_compare_writes_table(tmp_path, capsys):
    out = tmp_path / "cmp"
    rc = main(["compare", *compare_configs(tmp_path), "--outdir", str(out)])
    assert rc == 0
    lines = (out / "compare.csv").read_text().splitlines()
    assert lines[0].startswith("sampler,alpha,seed,num_samples,tv,")
    assert len(lines) == 3
    assert lines[1].startswith("power,") and lines[2].startswith("low-temp,")
    summary = json.loads((out / "summary.json").read_text())
    # sharpening beats naive temperature scaling on the toy model
    tvs = {r["sampler"]: r["tv"] for r in summary["rows"]}
    assert tvs["power"] < tvs["low-temp"]
    assert "tv=" in capsys.readouterr().out


def test_compare_seed_override_and_determinism(tmp_path):
    blobs = []
    for name in ("c1", "c2"):
        out = tmp_path / name
        rc = main(
            ["compare", *compare_configs(tmp_path), "--outdir", str(out), "--seed", "9"]
        )
        assert rc == 0
        blobs.append(read_report_bytes(out))
    assert blobs[0] == blobs[1]
    summary = json.loads(blobs[0]["summary.json"].decode())
    assert all(r["seed"] == 9 for r in summary["rows"])


def test_compare_requires_shared_model(tmp_path, capsys):
    a = write_config(tmp_path, name="a.json", model="toy", sampler="power", alpha=2)
    b = write_config(
        tmp_path, name="b.json", model="other.json", sampler="power", alpha=2
    )
    assert main(["compare", a, b]) == 2
    assert "one shared model" in capsys.readouterr().err


def test_compare_budget_exhaustion_exits_3(tmp_path, monkeypatch, capsys):
    def explode(model, alpha, **kwargs):
        raise EnumerationBudgetError("node budget exceeded at depth 2")

    monkeypatch.setattr(cli, "power_distribution", explode)
    rc = main(["compare", *compare_configs(tmp_path), "--outdir", str(tmp_path / "x")])
    assert rc == 3
    assert "oracle budget exceeded" in capsys.readouterr().err


# --- bias-lab ------------------------------------------------------------------


def test_bias_lab_subcommand(tmp_path, capsys):
    out = tmp_path / "lab"
    rc = main(
        [
            "bias-lab",
            "--outdir",
            str(out),
            "--replicates",
            "300",
            "--m-grid",
            "2,4,8,16",
            "--seed",
            "5",
            "--threads",
            "2",
            "--formats",
            "csv,json",
        ]
    )
    assert rc == 0
    names = {p.name for p in out.iterdir()}
    assert names == {
        "bias_measurements.csv",
        "bias_slopes.csv",
        "summary.json",
        "meta.json",
    }
    summary = json.loads((out / "summary.json").read_text())
    assert [f["fixture"] for f in summary["fixtures"]] == [
        "rand3",
        "rand4",
        "rand5",
        "toy",
    ]
    assert summary["m_grid"] == [2, 4, 8, 16]
    stdout = capsys.readouterr().out
    assert "rand3" in stdout and "|" in stdout
