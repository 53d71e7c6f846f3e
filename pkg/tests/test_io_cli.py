import json
import re
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arwimcf import cli, io
from arwimcf.background import ArwParams
from arwimcf.errors import ConfigurationError, StepFailure
from arwimcf.flow import DiagnosticsRecord, Snapshot

N1_CONFIG = """\
schema_version = 1

[params]
n = 1
omega = 3.0
m = 1.0

[domain]
N = 32

[initial]
constant = -0.5
modes = [{amplitude = 0.05, k = [1]}]

[flow]
t_end = {t_end}

[analysis]
claims = {claims}
"""


def n1_config(tmp_path, t_end=6.0, claims='["fu_limit", "utilde_bounds"]', name="run.toml"):
    path = tmp_path / name
    path.write_text(N1_CONFIG.replace("{t_end}", repr(float(t_end))).replace("{claims}", claims))
    return path


# --------------------------------------------------------------------------- config


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def run_configs(draw):
    cfg = io.RunConfig()
    cfg.params = io.ParamsSection(n=draw(st.sampled_from([1, 2])), omega=draw(st.floats(0.5, 6.0)),
                                  m=draw(st.floats(0.1, 10.0)))
    kind = draw(st.sampled_from(["canonical", "perturbed", "ode_derived"]))
    fluid = io.FluidSection(rho0=draw(st.floats(0.1, 2.0)), R_bar=draw(st.floats(0.0, 1.0))) \
        if kind == "ode_derived" else None
    cfg.scale_factor = io.ScaleFactorSection(kind=kind, amplitude=draw(finite), fluid=fluid)
    cfg.domain = io.DomainSection(N=draw(st.sampled_from([16, 32, 64])), beta=draw(st.floats(0.0, 0.5)))
    n = cfg.params.n
    modes = draw(st.lists(st.builds(io.ModeSection, amplitude=finite,
                                    k=st.lists(st.integers(-4, 4), min_size=n, max_size=n),
                                    kind=st.sampled_from(["cos", "sin"])), max_size=3))
    cfg.initial = io.InitialSection(constant=draw(finite), modes=modes)
    cfg.flow = io.FlowSection(t_end=draw(st.floats(0.1, 20.0)), rel_tol=draw(st.floats(1e-12, 1e-3)))
    cfg.transition = io.TransitionSection(enabled=draw(st.booleans()),
                                          seeds=draw(st.lists(st.lists(finite, min_size=n, max_size=n),
                                                              max_size=3)))
    cfg.output = io.OutputSection(dir=draw(st.text("abcxyz/_-", min_size=1, max_size=12)))
    return cfg


@settings(max_examples=60, deadline=None)
@given(run_configs())
def test_config_round_trip(cfg):
    text = io.dump_config(cfg)
    back = io.parse_config(text)
    assert back == cfg
    assert io.config_hash(back) == io.config_hash(cfg)


def test_config_defaults():
    cfg = io.parse_config("")
    assert cfg == io.RunConfig()
    assert cfg.flow.rel_tol == 1e-8 and cfg.flow.abs_tol == 1e-10 and cfg.flow.u_floor == 1e-5


def test_unknown_key_reports_line(tmp_path):
    text = n1_config(tmp_path).read_text().replace("N = 32", "N = 32\nfoo = 1")
    with pytest.raises(ConfigurationError, match=r"config field 'domain\.foo': unknown key \(line 10\)"):
        io.parse_config(text)


def test_wrong_type_reports_line(tmp_path):
    text = n1_config(tmp_path).read_text().replace("omega = 3.0", 'omega = "three"')
    with pytest.raises(ConfigurationError, match=r"'params\.omega': expected a number, got str \(line 5\)"):
        io.parse_config(text)


@pytest.mark.parametrize("text,field", [
    ("schema_version = 2", "schema_version"),
    ('[scale_factor]\nkind = "spline"', "scale_factor.kind"),
    ('[scale_factor]\nkind = "ode_derived"', "scale_factor.kind"),
    ("[initial]\nmodes = [{amplitude = 0.1, k = [1]}]", "initial.modes[0].k"),
    ("[analysis]\nwindow = [1.0]", "analysis.window"),
    ("[domain]\nN = 1.5", "domain.N"),
    ("[transition]\nenabled = 1", "transition.enabled"),
    ("[initial]\nmodes = [{k = [1, 0]}]", "initial.modes[0]"),
    ("params = 3", "params"),
])
def test_config_validation(text, field):
    with pytest.raises(ConfigurationError, match=re.escape(f"'{field}")):
        io.parse_config(text)


def test_invalid_toml():
    with pytest.raises(ConfigurationError, match="not valid TOML"):
        io.parse_config("[params\nn = 1")


def test_config_hash_is_git_blob_sha1():
    cfg = io.RunConfig()
    data = io.dump_config(cfg).encode()
    out = subprocess.run(["git", "hash-object", "--stdin"], input=data, capture_output=True, check=True)
    assert io.config_hash(cfg) == out.stdout.decode().strip()
    changed = replace(cfg, flow=replace(cfg.flow, t_end=6.0))
    assert io.config_hash(changed) != io.config_hash(cfg)


# --------------------------------------------------------------------------- files


def _snaps(rng, shape, count=3):
    return [Snapshot(0.1 * k, -0.5 + 0.01 * rng.standard_normal(shape), 0.01 * (k + 1), k) for k in range(count)]


@pytest.mark.parametrize("shape,n", [((16, 16), 2), ((32,), 1)])
def test_snapshot_round_trip(tmp_path, rng, shape, n):
    params = ArwParams(n, 3.0, 1.0)
    snaps = _snaps(rng, shape)
    with io.SnapshotWriter(tmp_path / "s.bin", params) as w:
        for s in snaps:
            w.write(s)
    back = io.read_snapshots(tmp_path / "s.bin", params, shape)
    assert len(back) == 3
    for a, b in zip(snaps, back):
        assert (a.t, a.dt_next, a.index) == (b.t, b.dt_next, b.index) and np.array_equal(a.u, b.u)


def test_snapshot_truncated_tail_is_dropped(tmp_path, rng):
    params = ArwParams(2, 2.0, 1.0)
    path = tmp_path / "s.bin"
    with io.SnapshotWriter(path, params) as w:
        for s in _snaps(rng, (16, 16)):
            w.write(s)
    data = path.read_bytes()
    path.write_bytes(data[:-100])
    with pytest.warns(UserWarning, match="truncated"):
        back = io.read_snapshots(path)
    assert len(back) == 2
    path.write_bytes(data[: len(data) // 3 * 2 + 10])
    with pytest.warns(UserWarning):
        io.read_snapshots(path)


def test_snapshot_validation(tmp_path, rng):
    params = ArwParams(2, 2.0, 1.0)
    path = tmp_path / "s.bin"
    with io.SnapshotWriter(path, params) as w:
        w.write(_snaps(rng, (16, 16), 1)[0])
    with pytest.raises(ConfigurationError, match="do not match"):
        io.read_snapshots(path, ArwParams(2, 3.0, 1.0))
    with pytest.raises(ConfigurationError, match="grid"):
        io.read_snapshots(path, params, (32, 32))
    path.write_bytes(b"NOTASNAP" + path.read_bytes()[8:])
    with pytest.raises(ConfigurationError, match="magic"):
        io.read_snapshots(path)
    with pytest.raises(ConfigurationError):
        io.read_snapshots(tmp_path / "missing.bin")


def test_diagnostics_csv_round_trip(tmp_path, rng):
    recs = [DiagnosticsRecord(*rng.standard_normal(len(DiagnosticsRecord.columns()))) for _ in range(4)]
    with io.DiagnosticsWriter(tmp_path / "d.csv") as w:
        for r in recs:
            w.write(r)
    data = io.read_diagnostics(tmp_path / "d.csv")
    assert list(data) == DiagnosticsRecord.columns()
    for j, name in enumerate(DiagnosticsRecord.columns()):
        assert np.array_equal(data[name], [r.values()[j] for r in recs])


def test_field_csv(tmp_path):
    from arwimcf.geometry import SpatialDomain

    dom = SpatialDomain(2, 16)
    io.write_field_csv(np.arange(256.0).reshape(16, 16), dom, tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,value" and len(lines) == 257
    assert lines[2].split(",")[2] == "1.0"


def test_report_json_is_strict(tmp_path):
    report = {"a": np.float64(np.nan), "b": np.arange(3), "c": {"d": np.bool_(True), "e": float("inf")},
              "f": (1, 2.5), "g": None}
    io.write_report(report, tmp_path / "r.json")
    text = (tmp_path / "r.json").read_text()
    back = json.loads(text, parse_constant=lambda c: pytest.fail(f"non-strict constant {c}"))
    assert back == {"a": "nan", "b": [0, 1, 2], "c": {"d": True, "e": "inf"}, "f": [1, 2.5], "g": None}
    with pytest.raises(ConfigurationError):
        io.read_report(tmp_path / "missing.json")


def _polyline_ys(svg):
    pts = re.search(r'<polyline[^>]*points="([^"]+)"', svg).group(1)
    return [float(p.split(",")[1]) for p in pts.split()]


def test_plots_of_homogeneous_run(tmp_path, homogeneous_run):
    with io.DiagnosticsWriter(tmp_path / "diagnostics.csv") as w:
        for r in homogeneous_run.diagnostics:
            w.write(r)
    report = {"config": {"params": {"n": 2, "omega": 2.0}}}
    with pytest.warns(UserWarning, match="not strictly positive"):
        written = io.emit_plots(report, tmp_path)
    names = {p.stem for p in written}
    assert {"utilde_min", "utilde_max", "F_scaled_min"} <= names
    assert "grad_utilde_max" not in names  # identically zero; no log plot
    ys = _polyline_ys((tmp_path / "plots" / "utilde_min.svg").read_text())
    assert len(set(ys)) == 1  # utilde stays at -0.5: a horizontal line


def test_plots_need_diagnostics(tmp_path):
    with pytest.warns(UserWarning, match="no diagnostics"):
        assert io.emit_plots({}, tmp_path) == []
    with io.DiagnosticsWriter(tmp_path / "diagnostics.csv"):
        pass
    with pytest.warns(UserWarning, match="no records"):
        assert io.emit_plots({}, tmp_path) == []
    assert not (tmp_path / "plots").exists()


def test_plot_guide_line(tmp_path, perturbed_run):
    with io.DiagnosticsWriter(tmp_path / "diagnostics.csv") as w:
        for r in perturbed_run.diagnostics:
            w.write(r)
    io.emit_plots({"config": {"params": {"n": 2, "omega": 2.0}}}, tmp_path)
    svg = (tmp_path / "plots" / "grad_utilde_max.svg").read_text()
    assert "predicted rate 0.5" in svg and "stroke-dasharray" in svg
    assert "max |Du|" in svg


# --------------------------------------------------------------------------- CLI


def test_flow_run_and_outputs(tmp_path, capsys):
    cfg = n1_config(tmp_path)
    out = tmp_path / "out"
    assert cli.cli_main(["flow", "run", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_OK
    for name in ("config.toml", "snapshots.bin", "diagnostics.csv", "report.json"):
        assert (out / name).exists(), name
    report = io.read_report(out / "report.json")
    assert set(report) >= {"schema_version", "config", "hash", "arw_certificate", "claims", "termination",
                           "steps", "timing"}
    assert report["termination"] == "t_end" and set(report["claims"]) == {"fu_limit", "utilde_bounds"}
    assert report["hash"] == io.config_hash(io.load_config(cfg))
    assert io.parse_config((out / "config.toml").read_text()) == io.load_config(cfg)
    assert len(io.read_snapshots(out / "snapshots.bin")) == 61
    assert (out / "plots" / "utilde_min.svg").exists()
    assert "PASS claims.fu_limit" in capsys.readouterr().out


def test_resume_is_byte_identical(tmp_path):
    cfg = n1_config(tmp_path)
    full, part, resumed = tmp_path / "full", tmp_path / "part", tmp_path / "resumed"
    assert cli.cli_main(["flow", "run", "--config", str(cfg), "--out", str(full)]) == 0
    assert cli.cli_main(["flow", "run", "--config", str(cfg), "--out", str(part), "--t-end", "2.5"]) == 0
    assert cli.cli_main(["flow", "resume", "--config", str(cfg), "--out", str(resumed),
                         "--resume", str(part / "snapshots.bin")]) == 0
    for name in ("snapshots.bin", "diagnostics.csv"):
        assert (full / name).read_bytes() == (resumed / name).read_bytes(), name


def test_claim_failure_exit_code(tmp_path, capsys):
    cfg = n1_config(tmp_path, t_end=1.0)
    code = cli.cli_main(["flow", "run", "--config", str(cfg), "--out", str(tmp_path / "o"),
                         "--claims", "utilde_convergence"])
    assert code == cli.EXIT_FAIL
    assert "FAIL claims.utilde_convergence" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["flow"], ["flow", "run"], ["bogus"], ["background", "check", "--tol", "x"]])
def test_argument_errors_exit_2(argv, capsys):
    assert cli.cli_main(argv) == cli.EXIT_CONFIG
    assert "arwimcf:" in capsys.readouterr().err


def test_configuration_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[domain]\nfoo = 1\n")
    assert cli.cli_main(["flow", "run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "config field 'domain.foo'" in capsys.readouterr().err
    assert cli.cli_main(["flow", "run", "--config", str(tmp_path / "missing.toml")]) == 2
    cfg = n1_config(tmp_path)
    assert cli.cli_main(["flow", "run", "--config", str(cfg), "--out", str(tmp_path / "o"),
                         "--claims", "nonsense"]) == 2
    # initial data violating the barrier is a configuration problem
    steep = tmp_path / "steep.toml"
    steep.write_text(cfg.read_text().replace("amplitude = 0.05, k = [1]", "amplitude = 0.04, k = [8]"))
    assert cli.cli_main(["flow", "run", "--config", str(steep), "--out", str(tmp_path / "o")]) == 2
    assert "config field 'initial'" in capsys.readouterr().err


def test_numerical_failure_exit_3(tmp_path, monkeypatch):
    import arwimcf.flow as flow

    real = flow._step
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 40:
            raise StepFailure("injected failure")
        return real(*args, **kwargs)

    monkeypatch.setattr(flow, "_step", flaky)
    out = tmp_path / "o"
    assert cli.cli_main(["flow", "run", "--config", str(n1_config(tmp_path)), "--out", str(out)]) == 3
    report = io.read_report(out / "report.json")
    assert report["termination"] == "error" and "injected failure" in report["error"]
    kept = io.read_snapshots(out / "snapshots.bin")
    assert len(kept) >= 2
    assert len(io.read_diagnostics(out / "diagnostics.csv")["t"]) == len(kept)


def test_analyze_transition_and_report_subcommands(tmp_path, capsys):
    cfg = n1_config(tmp_path, t_end=8.0)
    out = tmp_path / "o"
    assert cli.cli_main(["flow", "run", "--config", str(cfg), "--out", str(out), "--claims", "none"]) == 0
    assert io.read_report(out / "report.json")["claims"] == {}
    assert cli.cli_main(["analyze", "--config", str(cfg), "--out", str(out), "--claims", "fu_limit"]) == 0
    assert set(io.read_report(out / "report.json")["claims"]) == {"fu_limit"}
    assert cli.cli_main(["transition", "--config", str(cfg), "--out", str(out)]) == 0
    report = io.read_report(out / "report.json")
    assert report["transition"]["mirror_parity"]["pass"]
    assert (out / "transition.csv").read_text().startswith("s,marker,component,value")
    capsys.readouterr()
    assert cli.cli_main(["report", "--out", str(out)]) == 0
    assert "plots written" in capsys.readouterr().out


def test_cosmology_solve_then_flow(tmp_path):
    cfg = tmp_path / "fluid.toml"
    cfg.write_text("""\
[params]
n = 2
omega = 2.0
m = 0.5

[scale_factor]
kind = "ode_derived"

[scale_factor.fluid]
R_bar = 0.3

[domain]
N = 16

[initial]
modes = [{amplitude = 0.05, k = [1, 0]}]

[flow]
t_end = 12.0

[analysis]
claims = ["fu_limit"]
""")
    out = tmp_path / "cos"
    assert cli.cli_main(["cosmology", "solve", "--config", str(cfg), "--out", str(out)]) == 0
    rep = io.read_report(out / "report.json")
    assert rep["friedmann"]["phi_limit_predicted"] == pytest.approx(-0.15)
    assert abs(rep["arw_certificate"]["checks"]["phi_limit"]["value"] + 0.15) <= 1e-4
    # a flow config pointing at the exported solution
    flow_cfg = tmp_path / "flow.toml"
    flow_cfg.write_text(cfg.read_text().replace("[scale_factor.fluid]\nR_bar = 0.3\n",
                                                'path = "cos/scale_factor.json"\n')
                        .replace('kind = "ode_derived"', 'kind = "ode_derived"'))
    assert cli.cli_main(["flow", "run", "--config", str(flow_cfg), "--out", str(tmp_path / "f")]) == 0
    assert io.read_report(tmp_path / "f" / "report.json")["claims"]["fu_limit"]["pass"]
    # mismatched mass is rejected
    flow_cfg.write_text(flow_cfg.read_text().replace("m = 0.5", "m = 1.0"))
    assert cli.cli_main(["flow", "run", "--config", str(flow_cfg), "--out", str(tmp_path / "g")]) == 2


def test_background_check(tmp_path):
    cfg = n1_config(tmp_path)
    assert cli.cli_main(["background", "check", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert io.read_report(tmp_path / "b" / "report.json")["arw_certificate"]["pass"]
    assert cli.cli_main(["cosmology", "solve", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 2


@pytest.mark.parametrize("value,code", [("1", 0), ("0", 2), ("many", 2)])
def test_thread_limit_env(tmp_path, monkeypatch, value, code):
    monkeypatch.setenv("ARWIMCF_THREADS", value)
    cfg = n1_config(tmp_path)
    assert cli.cli_main(["background", "check", "--config", str(cfg), "--out", str(tmp_path / "b")]) == code


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "arwimcf", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "flow" in proc.stdout
