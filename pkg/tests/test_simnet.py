from __future__ import annotations

import copy
import json
from dataclasses import replace

import pytest

from beaconbft.consensus.types import QuorumCertificate
from beaconbft.simnet import ConfigError, Scenario, check_liveness, check_safety, compute_metrics, metrics_from_trace, simulate
from beaconbft.simnet.engine import Simulation
from beaconbft.simnet.metrics import read_trace, trace_lines, write_trace
from beaconbft.simnet.scenario import load_matrix, load_scenario


def test_same_seed_gives_byte_identical_traces():
    sc = Scenario(n=7, f=2, rounds=15, seed=9, adversary_policy="equivocate", gst=20.0)
    assert trace_lines(simulate(sc).trace) == trace_lines(simulate(sc).trace)


def test_different_seeds_give_different_traces():
    sc = Scenario(n=4, f=1, rounds=5, seed=1)
    assert trace_lines(simulate(sc).trace) != trace_lines(simulate(sc.with_seed(2)).trace)


def test_fault_free_run_commits_every_round_quickly():
    sc = Scenario(n=4, f=0, rounds=10, seed=1)
    result = simulate(sc)
    m = compute_metrics(result)
    assert m.commits == 10 and m.honest_min_height == 10
    assert m.latency_max <= 7 * sc.delta
    assert m.safety_violations == 0 and m.liveness_stalls == 0
    views = {ev["view"] for ev in result.trace if ev["event"] == "commit"}
    assert views == set(range(10))


def test_crashed_first_leader_is_replaced():
    probe = Simulation(Scenario(n=4, f=1, rounds=3, seed=4))
    leader = probe.index[probe.replicas[0].leader_of(0)]
    sc = Scenario(n=4, f=1, rounds=3, seed=4, initial_corrupt=(leader,), adaptive=False)
    trace = simulate(sc).trace
    commits = [ev for ev in trace if ev["event"] == "commit" and ev["node"] != leader]
    assert commits and min(ev["view"] for ev in commits) >= 1
    assert check_safety(trace) == [] and check_liveness(trace) == []


def test_safety_checker_catches_an_injected_fork():
    trace = simulate(Scenario(n=4, f=1, rounds=3, seed=2, inject_fault="fork")).trace
    kinds = {v.kind for v in check_safety(trace)}
    assert "fork" in kinds


def test_safety_checker_catches_a_tampered_certificate():
    trace = simulate(Scenario(n=4, f=1, rounds=3, seed=2)).trace
    assert check_safety(trace) == []
    bad = copy.deepcopy(trace)
    ev = next(e for e in bad if e["event"] == "certificate")
    cert = QuorumCertificate.from_json(ev["cert"])
    sig = bytearray(cert.aggregate_signature)
    sig[5] ^= 0x40
    ev["cert"] = replace(cert, aggregate_signature=bytes(sig)).to_json()
    kinds = {v.kind for v in check_safety(bad)}
    assert "bad-certificate" in kinds


def test_post_gst_honest_delays_stay_within_delta():
    sc = Scenario(n=7, f=2, rounds=20, seed=5, adversary_policy="delaymax", gst=30.0)
    result = simulate(sc)
    assert 0 < result.max_post_gst_honest_delay <= sc.delta
    end = [ev for ev in result.trace if ev["event"] == "end"][-1]
    assert end["max_post_gst_honest_delay"] == result.max_post_gst_honest_delay


@pytest.mark.parametrize(
    "fields",
    [
        {"n": 6, "f": 1},
        {"n": 4, "f": 2},
        {"n": 0, "f": 0},
        {"delta": 0},
        {"gst": float("nan")},
        {"rounds": 0},
        {"seed": -1},
        {"target": "nobody"},
        {"initial_corrupt": (0, 1)},
        {"adversary_policy": "bribe"},
        {"inject_fault": "meteor"},
    ],
)
def test_invalid_scenarios_are_rejected(fields):
    with pytest.raises(ConfigError):
        Scenario(**fields).validate()


def test_unsafe_override_allows_other_sizes():
    Scenario(n=9, f=3, unsafe_override=True).validate()


def test_unknown_field_in_file_is_rejected(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"n": 4, "f": 1, "colour": "blue"}))
    with pytest.raises(ConfigError):
        load_scenario(path)
    path.write_text("not json")
    with pytest.raises(ConfigError):
        load_scenario(path)


def test_matrix_accepts_both_layouts(tmp_path):
    a = tmp_path / "a.json"
    a.write_text(json.dumps([{"n": 4, "f": 1}]))
    b = tmp_path / "b.json"
    b.write_text(json.dumps({"scenarios": [{"n": 4, "f": 1}]}))
    assert load_matrix(a) == load_matrix(b)


def test_scenario_json_round_trip():
    sc = Scenario(n=7, f=2, adversary_policy="censor", initial_corrupt=(1, 2), name="x")
    assert Scenario.from_json(json.loads(json.dumps(sc.to_json()))) == sc


@pytest.mark.parametrize("compress", [False, True])
def test_trace_file_round_trip(tmp_path, compress):
    result = simulate(Scenario(n=4, f=1, rounds=4, seed=6))
    path = write_trace(result.trace, tmp_path / "trace.jsonl", compress=compress)
    again = read_trace(path)
    assert again == json.loads("[" + ",".join(trace_lines(result.trace).splitlines()) + "]")
    assert metrics_from_trace(again) == compute_metrics(result)


def test_compressed_trace_bytes_are_reproducible(tmp_path):
    trace = simulate(Scenario(n=4, f=1, rounds=4, seed=6)).trace
    a = write_trace(trace, tmp_path / "a.jsonl", compress=True).read_bytes()
    b = write_trace(trace, tmp_path / "b.jsonl", compress=True).read_bytes()
    assert a == b


def test_threshold_beacon_backend_runs():
    m = compute_metrics(simulate(Scenario(n=4, f=1, rounds=3, seed=1, beacon_backend="threshold")))
    assert m.honest_min_height == 3 and m.safety_violations == 0
