import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dephasing.cli import (
    ConfigError,
    ExperimentConfig,
    FitSpec,
    GridSpec,
    compare,
    load_config,
    preset,
    run,
)
from dephasing.cli.config import KINDS, PRESETS, apply_overrides
from dephasing.cli.main import main
from dephasing.ensembles import EnsembleSpec
from dephasing.fidelity import FidelityCurve


def small(kind, **kw):
    base = dict(ensemble=EnsembleSpec.position_state(Q=0.8 * math.pi, count=64, seed=0), T=20,
                grid=GridSpec(1e-6, math.pi, 20), n=64, T_max=10)
    base.update(kw)
    return ExperimentConfig(kind, **base)


def data_rows(path):
    return sum(1 for line in path.read_text().splitlines() if line and not line.startswith("#"))


# -- config ---------------------------------------------------------------------


def test_preset_list():
    assert set(PRESETS) == {"fig1a", "fig1b", "fig2a", "fig2b", "fig3a", "fig3b", "fgr-compare",
                            "gaussian-compare", "cubic-exponential-search"}


@pytest.mark.parametrize("name", PRESETS)
def test_presets_round_trip(name, tmp_path):
    cfg = preset(name)
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg
    assert load_config(path).config_hash() == cfg.config_hash()


@given(st.sampled_from(KINDS), st.floats(0.0, 50.0), st.floats(-1.0, 1.0), st.integers(0, 2**64 - 1),
       st.integers(1, 500), st.integers(1, 200).map(lambda h: 2 * h))
def test_round_trip_is_lossless(kind, k, eps, seed, T, n):
    kw = {}
    if kind == "predict":
        kw["regime"] = "Fermi-Golden-Rule"
    cfg = ExperimentConfig(kind, k=k, epsilon=eps, T=T, n=n,
                           ensemble=EnsembleSpec.position_state(count=10, seed=seed), **kw)
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg


def test_hash_ignores_output_and_workers():
    cfg = preset("fig1a")
    assert cfg.replace(out="elsewhere", workers=8).config_hash() == cfg.config_hash()
    assert cfg.replace(k=19.0).config_hash() != cfg.config_hash()


@pytest.mark.parametrize("data,field", [
    ({"kind": "nope"}, "kind"),
    ({"kind": "dr-fidelity", "map": {"k": -1}}, "map"),
    ({"kind": "dr-fidelity", "colour": 3}, "colour"),
    ({"kind": "dr-fidelity", "map": {"kick": 3}}, "map.kick"),
    ({"kind": "dr-fidelity", "T": "ten"}, "T"),
    ({"kind": "dr-fidelity", "hbar": 0}, "hbar"),
    ({"kind": "quantum-fidelity", "n": 999, "ensemble": {"kind": "position-state"}}, "n"),
    ({"kind": "predict"}, "regime"),
    ({"kind": "dr-fidelity", "fits": [{"name": "a", "kind": "cubic"}]}, "fits"),
])
def test_invalid_field_is_named(data, field):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(data)
    assert err.value.field.startswith(field)
    assert field in str(err.value)


def test_bad_json_is_reported():
    with pytest.raises(ConfigError, match="JSON"):
        ExperimentConfig.from_json("{")


def test_overrides():
    cfg = apply_overrides(preset("fig1a"), ["map.k=5", "ensemble.seed=9", "T=30", "name=\"x\""])
    assert (cfg.k, cfg.ensemble.seed, cfg.T, cfg.name) == (5.0, 9, 30, "x")
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["novalue"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["map.k=-3"])


# -- runs ------------------------------------------------------------------------


def test_rerun_is_byte_identical(tmp_path):
    cfg = small("variance-vs-time", fits=(FitSpec("slope", "loglog", (2, 20)),))
    run(cfg, tmp_path / "a")
    run(cfg.replace(workers=4), tmp_path / "b")
    for name in ("variance.tsv", "fits.tsv", "plot.gp"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_writes_complete_manifest(kind, tmp_path):
    kw = {"regime": "Fermi-Golden-Rule"} if kind == "predict" else {}
    if kind in ("compare",):
        kw["compare"] = type(preset("fgr-compare").compare)((1, 10), 1)
    m = run(small(kind, **kw), tmp_path)
    assert m.status in ("success", "flagged"), m.messages
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk["config_hash"] == m.config_hash
    listed = {f["path"] for f in m.files}
    assert {"config.json", "fits.tsv", "plot.gp"} <= listed
    for f in m.files:
        path = tmp_path / f["path"]
        assert path.exists()
        if f["path"].endswith(".tsv"):
            assert data_rows(path) == f["rows"]
            assert m.config_hash in path.read_text().splitlines()[0]


def test_plot_script_uses_written_files(tmp_path):
    m = run(small("pair-variance-vs-separation"), tmp_path)
    script = (tmp_path / "plot.gp").read_text()
    tables = [f["path"] for f in m.files if f["path"].endswith(".tsv") and f["path"] != "fits.tsv"]
    assert tables and all(f"'{t}'" in script for t in tables)


def test_failed_run_is_reported(tmp_path):
    # a grid that stops short of pi cannot feed a separation fit window
    cfg = small("pair-variance-vs-separation", grid=GridSpec(1e-6, 1e-3, 5),
                fits=(FitSpec("plateau", "loglog", (0.1, math.pi)),))
    m = run(cfg, tmp_path)
    assert m.status == "flagged" and m.exit_code == 2
    assert m.record("plateau").flagged


def test_fig1a_preset_slope(tmp_path):
    m = run(preset("fig1a"), tmp_path)
    assert m.status == "success"
    assert 0.9 <= m.record("slope").value <= 1.1


def test_fig3b_has_two_fits(tmp_path):
    m = run(preset("fig3b"), tmp_path)
    names = [r.name for r in m.records if r.kind == "loglog"]
    assert names == ["early_slope", "late_slope"]
    assert "raw_moment" in (tmp_path / "pair_variance.tsv").read_text().splitlines()[1]


def test_predict_reports_parameters(tmp_path):
    cfg = small("predict", regime="Gaussian", regime_params={"C_V_inf": 0.1})
    m = run(cfg, tmp_path)
    assert m.record("C_V_inf").value == 0.1 and m.record("C_V_inf").note == "given"


# -- compare -------------------------------------------------------------------------


def curve(M, method="dr-monte-carlo"):
    return FidelityCurve(np.arange(len(M)), np.asarray(M, dtype=float), method)


def test_identical_curves_have_zero_deviation():
    M = np.exp(-0.1 * np.arange(30))
    rep = compare(curve(M), curve(M, "quantum-exact"), (1, 20))
    assert rep.max_deviation == 0.0 and np.all(rep.deviation == 0.0)
    assert rep.rate_ratio == pytest.approx(1.0, rel=1e-12)
    assert rep.cutoff_time is None


def test_unperturbed_curves_compare_clean(tmp_path):
    cfg = small("compare", epsilon=0.0, compare=type(preset("fgr-compare").compare)((1, 10), 1))
    m = run(cfg, tmp_path)
    assert m.record("max_deviation").value == 0.0
    assert m.record("rate_ratio").value == 1.0
    assert m.record("grid_Q").note.startswith("index=")


def test_compare_cutoff_and_rates():
    t = np.arange(60)
    a = curve(np.exp(-0.2 * t))
    b = curve(np.exp(-0.1 * t))
    rep = compare(a, b, (1, 10))
    assert rep.rate_ratio == pytest.approx(2.0, rel=1e-10)
    assert rep.cutoff_time == 24  # exp(-0.2 t) < 0.01 first at t = 24
    assert rep.max_deviation == pytest.approx(np.max(np.abs(a.M - b.M)[:24]))


def test_compare_rejects_mismatched_grids():
    with pytest.raises(ValueError, match="grids differ"):
        compare(curve(np.ones(5)), curve(np.ones(6)))


# -- command line -------------------------------------------------------------------


def test_cli_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "fig3b\tpair-variance-vs-time" in out


def test_cli_show_config(capsys):
    assert main(["show-config", "variance-vs-time", "--preset", "fig1a", "--seed", "7"]) == 0
    cfg = ExperimentConfig.from_json(capsys.readouterr().out)
    assert cfg.ensemble.seed == 7 and cfg.out == "runs/fig1a"


def test_cli_success(tmp_path, capsys):
    cfg = small("dr-fidelity")
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    code = main(["dr-fidelity", "--config", str(path), "--out", str(tmp_path / "o"), "--workers", "2"])
    assert code == 0
    assert (tmp_path / "o" / "fidelity_dr.tsv").exists()


def test_cli_flagged_exit(tmp_path):
    cfg = small("predict", regime="Lyapunov", regime_params={"lambda_": 2.3, "D": 0.25, "alpha": 0.8})
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert main(["predict", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("argv", [
    ["dr-fidelity", "--override", "map.k=-1"],
    ["dr-fidelity", "--preset", "fig1a"],
    ["dr-fidelity", "--config", "/nonexistent.json"],
    ["dr-fidelity", "--preset", "no-such"],
    ["no-such-kind"],
])
def test_cli_invalid_input_exits_1(argv, tmp_path, capsys):
    with pytest.raises(SystemExit) as ex:
        code = main(argv + ["--out", str(tmp_path)])
        raise SystemExit(code)
    assert ex.value.code == 1


def test_full_range_seed_survives_round_trip():
    cfg = apply_overrides(preset("fig1a"), [f"ensemble.seed={2**64 - 1}"])
    assert ExperimentConfig.from_json(cfg.to_json()).ensemble.seed == 2**64 - 1
    with pytest.raises(ConfigError, match="integer"):
        apply_overrides(cfg, ["T=1.5"])
