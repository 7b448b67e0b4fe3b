import csv
import json

import pytest

from broadrel.cli import RunConfig, ConfigError, run

UNITS = (
    "unit_id,isp,technology,down_kbps,up_kbps,region,block_group,timezone,active\n"
    "u1,X,Cable,50000,10000,R1,B1,UTC,true\n"
)


@pytest.fixture
def nine_hour_dir(tmp_path):
    d = tmp_path / "in"
    d.mkdir()
    (d / "units.csv").write_text(UNITS)
    lost = [0, 0, 2, 0, 0, 0, 6, 6, 0]
    (d / "pings.csv").write_text("unit_id,dtime,target,probes_sent,probes_lost\n" + "".join(
        f"u1,2015-01-01T{h:02d}:00:00Z,a,100,{x}\n" for h, x in enumerate(lost)))
    return d


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_stats_on_fixture(nine_hour_dir, tmp_path):
    out = tmp_path / "out"
    assert run(["stats", str(nine_hour_dir), "--out", str(out), "--thresholds", "0.05"]) == 0
    (row,) = [r for r in rows(out / "stats.csv") if r["scope"] == "all"]
    assert row["availability"] == "0.777778" and row["mtbf"] == "7" and row["mdt"] == "2"
    assert row["annual_downtime"] == "1946.67"
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert set(manifest["outputs"]) == {"stats.csv", "cdf.csv", "exceedance.csv", "infogain.csv"}
    assert manifest["config"]["thresholds"] == [0.05] and len(manifest["config_hash"]) == 64


def test_missing_column_exit_code(nine_hour_dir, tmp_path, capsys):
    (nine_hour_dir / "pings.csv").write_text("unit_id,dtime,target,probes_sent\n")
    out = tmp_path / "out"
    assert run(["stats", str(nine_hour_dir), "--out", str(out)]) == 3
    err = capsys.readouterr().err
    assert "pings.csv" in err and "probes_lost" in err
    assert list(out.iterdir()) == []


def test_bad_thresholds_exit_code(nine_hour_dir, tmp_path):
    assert run(["stats", str(nine_hour_dir), "--out", str(tmp_path), "--thresholds", "0.1,0.05"]) == 2
    with pytest.raises(SystemExit) as exc:
        run(["stats"])
    assert exc.value.code == 2


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(thresholds=[0, 0.5])
    with pytest.raises(ConfigError):
        RunConfig(peak_window=(23, 19))
    assert RunConfig(thresholds=[0.02]).thresholds == [0.02]


def test_experiment_without_matches(nine_hour_dir, tmp_path):
    assert run(["experiment", str(nine_hour_dir), "--out", str(tmp_path / "o")]) == 5


def test_multihome_without_pairs(nine_hour_dir, tmp_path):
    assert run(["multihome", str(nine_hour_dir), "--out", str(tmp_path / "o")]) == 4


def test_dns_without_counters(nine_hour_dir, tmp_path):
    assert run(["dns", str(nine_hour_dir), "--out", str(tmp_path / "o")]) == 3


def test_config_file_sections(nine_hour_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"thresholds": [0.01, 0.1], "peak_window": [0, 4], "stats": {"group_by": ["isp"]}}))
    out = tmp_path / "o"
    assert run(["stats", str(nine_hour_dir), "--out", str(out), "--config", str(cfg)]) == 0
    scopes = {r["scope"] for r in rows(out / "stats.csv")}
    assert scopes == {"all", "isp=X", "isp=X|peak"}


def test_synth_and_subcommands(tmp_path):
    data = tmp_path / "d"
    assert run(["synth", "--seed", "5", "--units", "12", "--hours", "96", "--out", str(data)]) == 0
    assert run(["ingest", str(data), "--out", str(tmp_path / "i")]) == 0
    assert run(["dns", str(data), "--out", str(tmp_path / "n")]) == 0
    assert run(["multihome", str(data), "--out", str(tmp_path / "m")]) == 0
    probs = rows(tmp_path / "n" / "dns_probs.csv")
    assert all(float(r["p_one"]) + float(r["p_two"]) <= 1 for r in probs)
    cohorts = {r["cohort"] for r in rows(tmp_path / "m" / "multihome.csv")}
    assert "NotMultihomed" in cohorts


def test_failover_and_apsurvey(tmp_path):
    scen = tmp_path / "s.json"
    scen.write_text(json.dumps({"primary": {"capacity": 2e7, "outages": [[10, 330]]},
                                "client": {"buffer_s": 220, "buffer_cap_s": 220, "ladder": [{"label": "hd", "bitrate": 3e6}]},
                                "duration": 400}))
    assert run(["failover", str(scen), "--out", str(tmp_path / "f")]) == 0
    summary = json.loads((tmp_path / "f" / "failover_summary.json").read_text())
    assert summary["stall_times"] == [230.0]
    scans = tmp_path / "scans.csv"
    scans.write_text("client_id,timestamp,bssid,ssid,signal_pct,is_current\n"
                     "c,t,001122334455,Home,70,true\nc,t,AABBCC000000,ATT77,45,false\n")
    assert run(["apsurvey", str(scans), "--out", str(tmp_path / "a")]) == 0
    rep = json.loads((tmp_path / "a" / "ap_report.json").read_text())
    assert rep["frac_scans_ge1_alt"] == 1.0 and "config_hash" in rep
