from __future__ import annotations

from beaconbft.report import write_report
from beaconbft.simnet import Scenario, compute_metrics, simulate

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def test_report_writes_three_png_figures(tmp_path):
    sc = Scenario(n=7, f=2, rounds=12, seed=2, adversary_policy="equivocate")
    result = simulate(sc)
    paths = write_report(compute_metrics(result), result.trace, tmp_path, sc.delta)
    assert sorted(p.name for p in paths) == ["latency.png", "leaders.png", "streaks.png"]
    for p in paths:
        assert p.read_bytes().startswith(PNG_MAGIC)


def test_report_is_reproducible(tmp_path):
    sc = Scenario(n=4, f=1, rounds=5, seed=3)
    result = simulate(sc)
    m = compute_metrics(result)
    a = write_report(m, result.trace, tmp_path / "a", sc.delta)
    b = write_report(m, result.trace, tmp_path / "b", sc.delta)
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
