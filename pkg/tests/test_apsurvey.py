from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from broadrel.apsurvey import (
    ApScan,
    IspRule,
    ScanEntry,
    analyse_scan,
    digit_difference,
    filter_non_gateways,
    group_bssids,
    infer_isp,
    is_non_gateway,
    load_isp_rules,
    near_threshold_pairs,
    normalize_mac,
    parse_isp_rules,
    read_scans,
    same_ap,
    scan_report,
    write_scans,
)

RULES = load_isp_rules()


def e(ssid, bssid, sig=50):
    return ScanEntry(ssid, bssid, sig)


def test_normalize_mac():
    assert normalize_mac("a0:b1-c2.d3 e4f5") == "A0B1C2D3E4F5"
    with pytest.raises(ValueError):
        normalize_mac("00:11:22:33:44")


@pytest.mark.parametrize("ssid,blocked", [
    ("HP-Print-3F-Officejet", True), ("DIRECT-hp-print-xyz", True), ("Chromecast1234", True),
    ("EXT-Living", True), ("Home_EXT", True), ("almond-2", True), ("my almond", True),
    ("NEXTGEN", False), ("Smith", False), ("ATT1234", False),
])
def test_blocklist(ssid, blocked):
    assert is_non_gateway(ssid) is blocked


def test_filter_non_gateways():
    kept = filter_non_gateways([e("HP-Print-01", "000000000001"), e("Home", "000000000002")])
    assert [x.ssid for x in kept] == ["Home"]


def test_same_ap_rules():
    assert digit_difference("001122334455", "001122334456") == 1
    assert same_ap("001122334455", "F01122334455")  # one digit
    assert same_ap("001122AAAAAA", "001122BBBBBB")  # same OUI
    assert not same_ap("001122334455", "FFFFF2334455")


def test_grouping_is_transitive():
    groups = group_bssids([e("a", "000000000000"), e("b", "00000000FFFF"), e("c", "0000FFFFFFFF"), e("d", "FFFFFF000000")])
    assert [sorted(g.member_bssids) for g in groups] == [
        ["000000000000", "00000000FFFF", "0000FFFFFFFF"], ["FFFFFF000000"],
    ]


def test_grouping_drops_malformed():
    (g,) = group_bssids([e("a", "zz"), e("b", "000000000001", 70), e("b2", "000000000002", 20)])
    assert g.ssids == {"b", "b2"} and g.max_signal_pct == 70


def test_near_threshold_pairs():
    assert near_threshold_pairs(["000000000000", "A00000FFFFF0"]) == []
    assert near_threshold_pairs(["000000000000", "A000000FFFF0"]) == [("000000000000", "A000000FFFF0")]


def _group(*ssids):
    (g,) = group_bssids([e(s, f"00112233445{i}") for i, s in enumerate(ssids)])
    return g


def test_att_prefix_rule():
    assert infer_isp(_group("ATT5cU8x3d"), RULES) == "AT&T"
    assert infer_isp(_group("MyATT"), RULES) is None


def test_xfinitywifi_needs_other_ssid():
    assert infer_isp(_group("xfinitywifi", "Smith Home"), RULES) == "Comcast"
    assert infer_isp(_group("xfinitywifi"), RULES) is None


def test_rule_parsing():
    rules = parse_isp_rules("# c\nFoo*,Foo\nbar,Bar,with-others\n")
    assert rules == [IspRule("Foo*", "Foo"), IspRule("bar", "Bar", True)]
    with pytest.raises(ValueError):
        parse_isp_rules("Foo*,Foo,sometimes")
    with pytest.raises(ValueError):
        parse_isp_rules("lonely")


def _scan(entries, current=None, client="c1"):
    return ApScan(client, "t", tuple(entries), current)


def test_analyse_scan_drops_own_ap_and_non_gateways():
    scan = _scan([
        e("Home", "001122334455", 80), e("Home-5G", "001122334456", 75),
        e("HP-Print-x", "AA0000000001", 60), e("Printerish", "AA0000000002", 60),
        e("Neighbour", "BBCCDD000000", 30),
    ], current="00:11:22:33:44:55")
    view = analyse_scan(scan, RULES)
    assert [sorted(g.ssids) for g in view.alternatives] == [["Neighbour"]]
    assert view.strongest_alt == 30


def test_scan_report():
    scans = [
        _scan([e("Home", "001122334455"), e("ATT1", "AABBCC000000", 45), e("Other", "ABCDEF123456", 20)],
              "001122334455", "c1"),
        _scan([e("Home", "101122334455")], "101122334455", "c2"),
    ]
    rep = scan_report(scans, {"c1": "Comcast"})
    assert rep.frac_ge1_alt == Fraction(1, 2) and rep.frac_ge2_alt == Fraction(1, 2)
    assert rep.frac_viable == 1 and rep.frac_inferred_alt == Fraction(1, 2)
    assert rep.frac_different_isp == 1 and rep.inferred_alt_aps == 1
    d = rep.to_dict()
    assert d["alt_count_hist"] == {"0": 1, "2": 1}


def test_scans_csv_roundtrip(tmp_path):
    entries = (e("Home", "00:11:22:33:44:55", 80), e("N,1", "AA:BB:CC:00:00:00", 40))
    scans = [ApScan("c1", "t", entries, "00:11:22:33:44:55", 80)]
    write_scans(tmp_path / "scans.csv", scans)
    assert read_scans(tmp_path / "scans.csv") == scans


macs = st.text("0123456789ABCDEF", min_size=12, max_size=12)


@settings(max_examples=200)
@given(st.lists(macs, min_size=1, max_size=25), st.randoms())
def test_partition_and_order_insensitive(bssids, rnd):
    entries = [e("x", b) for b in bssids]
    groups = group_bssids(entries)
    members = [m for g in groups for m in g.member_bssids]
    assert len(members) == len(set(members)) == len(set(bssids))
    shuffled = list(entries)
    rnd.shuffle(shuffled)
    assert group_bssids(shuffled) == groups
