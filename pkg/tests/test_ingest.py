import json
from datetime import datetime, timezone

import pytest

from broadrel.ingest import (
    IngestError,
    IngestReport,
    TrafficHourRaw,
    assemble_records,
    ingest_dns,
    ingest_ping_files,
    ingest_pings,
    ingest_traffic,
    load_dataset,
    parse_dns_rows,
    parse_ping_rows,
    parse_time,
    parse_units,
    validate_units,
)
from broadrel.model import PingHourRaw
from conftest import unit

T = datetime(2015, 1, 1, tzinfo=timezone.utc)
UNITS = (
    "unit_id,isp,technology,down_kbps,up_kbps,region,block_group,timezone,active\n"
    "u1,Comcast,Cable,50000,10000,R1,B1,America/New_York,true\n"
    "u2,AT&T,DSL,12000,1000,R1,B1,,false\n"
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_time_truncates_and_accepts_z():
    assert parse_time("2015-01-01T00:42:10Z") == T
    assert parse_time("2014-12-31 19:00:00-05:00") == T


def test_min_over_targets():
    rows = [PingHourRaw("u", T, "a", 100, 30), PingHourRaw("u", T, "b", 100, 2)]
    assert ingest_pings(rows) == {("u", T): 0.02}


def test_ping_rejections_are_reported(tmp_path):
    p = write(tmp_path, "pings.csv",
              "unit_id,dtime,target,probes_sent,probes_lost\n"
              "u1,2015-01-01T00:00:00Z,a,600,6\n"
              "u1,2015-01-01T01:00:00Z,a,0,0\n"
              "u1,2015-01-01T02:00:00Z,a,5,9\n"
              "u1,not-a-time,a,5,1\n"
              "u1,2015-01-01T03:00:00Z\n")
    report = IngestReport()
    rows = parse_ping_rows(p, report)
    assert len(rows) == 1 and rows[0].loss_rate == 0.01
    reasons = [(e["line"], e["reason"]) for e in report.rejected()]
    assert reasons == [(3, "no-probes"), (4, "lost-exceeds-sent"), (5, "malformed"), (6, "malformed")]
    for line in report.to_jsonl().splitlines():
        assert json.loads(line)["action"] == "rejected"


def test_missing_column_names_file_and_column(tmp_path):
    p = write(tmp_path, "pings.csv", "unit_id,dtime,target,probes_sent\n")
    with pytest.raises(IngestError) as err:
        parse_ping_rows(p, IngestReport())
    assert err.value.column == "probes_lost" and "pings.csv" in str(err.value)


def test_missing_file(tmp_path):
    with pytest.raises(IngestError, match="not found"):
        parse_ping_rows(tmp_path / "nope.csv", IngestReport())


def test_traffic_clamped_and_flagged():
    report = IngestReport()
    rows = [TrafficHourRaw("u", T, 100, 50, 120, 10, line=7)]
    assert ingest_traffic(rows, report, "traffic.csv") == {("u", T): (0, 40)}
    (entry,) = report.flagged()
    assert entry["line"] == 7 and entry["reason"] == "test-exceeds-total"


def test_dns_rows(tmp_path):
    p = write(tmp_path, "dns.csv",
              "unit_id,dtime,server_role,queries,failures\n"
              "u1,2015-01-01T00:00:00Z,primary,10,6\n"
              "u1,2015-01-01T00:00:00Z,secondary,10,0\n"
              "u1,2015-01-01T00:00:00Z,tertiary,10,0\n"
              "u1,2015-01-01T00:00:00Z,primary,1,2\n")
    report = IngestReport()
    dns = ingest_dns(parse_dns_rows(p, report))
    assert dns == {("u1", T): {"primary": (10, 6), "secondary": (10, 0)}}
    assert [e["reason"] for e in report.rejected()] == ["malformed", "failures-exceed-queries"]


def test_units_parse_and_validate(tmp_path):
    p = write(tmp_path, "units.csv", UNITS + "u1,Dup,Cable,1,1,R,B,,true\n")
    report = IngestReport()
    units = parse_units(p, report)
    assert [u.unit_id for u in units] == ["u1", "u2"]
    assert units[0].down_capacity == 50e6 and units[1].timezone is None
    assert report.rejected()[0]["reason"] == "duplicate-unit"
    accepted, rejected = validate_units(units, observed_units={"u1", "u9"})
    assert [u.unit_id for u in accepted] == ["u1"]
    assert rejected == [("u2", "flagged"), ("u9", "no-meta")]


def test_isp_mismatch_by_resolver():
    metas = [unit("a", isp="Comcast"), unit("b", isp="Comcast"), unit("c", isp="Unknown")]
    resolvers = {"a": ["75.75.75.75"], "b": ["8.8.8.8"], "c": ["8.8.8.8"]}
    prefixes = {"Comcast": ["75.75.0.0/16"]}
    accepted, rejected = validate_units(metas, resolvers, prefixes)
    assert [m.unit_id for m in accepted] == ["a", "c"]
    assert rejected == [("b", "isp-mismatch")]


def test_assemble_keeps_gaps_absent():
    loss = {("u", T): 0.0}
    dns = {("u", T): {"primary": (10, 10), "secondary": (10, 0)}}
    (r,) = assemble_records(loss, {("u", T): (5, 6)}, dns)
    assert r.bytes_total == 11 and r.dns_queries == 20 and r.dns_failures == 10
    assert r.dns_primary_failed is True and r.dns_secondary_failed is False


def test_parallel_ingest_matches_serial(tmp_path):
    header = "unit_id,dtime,target,probes_sent,probes_lost\n"
    for i in range(3):
        write(tmp_path, f"pings{i}.csv", header + "".join(
            f"u{i},2015-01-01T{h:02d}:00:00Z,a,100,{(h * 7 + i) % 11}\n" for h in range(24)))
    paths = sorted(tmp_path.glob("pings*.csv"))
    assert ingest_ping_files(paths, IngestReport(), jobs=2) == ingest_ping_files(paths, IngestReport())


def test_load_dataset(tmp_path):
    write(tmp_path, "units.csv", UNITS)
    write(tmp_path, "pings.csv",
          "unit_id,dtime,target,probes_sent,probes_lost\n"
          "u1,2015-01-01T00:00:00Z,a,100,0\n"
          "u2,2015-01-01T00:00:00Z,a,100,0\n"
          "u3,2015-01-01T00:00:00Z,a,100,0\n")
    ds = load_dataset(tmp_path)
    assert [r.unit_id for r in ds.records] == ["u1"]
    assert ds.rejected_units == [("u2", "flagged"), ("u3", "no-meta")]


def test_load_dataset_without_pings(tmp_path):
    write(tmp_path, "units.csv", UNITS)
    with pytest.raises(IngestError, match="pings"):
        load_dataset(tmp_path)
