import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sitelink.chansim import FlatSource, TdlSource, make_site_records
from sitelink.errors import EmptySplit, FormatError, NotCrossed, UnknownReceiver
from sitelink.sweep import (
    Receiver,
    SplitSpec,
    SweepPoint,
    SweepResult,
    bler_sweep,
    compare,
    default_slot,
    passing_snr,
    simulate_block,
    split_dataset,
    wilson_interval,
)


def _result(pairs, n=100):
    return SweepResult([SweepPoint(s, n, int(round(b * n)), n * 10, 0) for s, b in pairs])


def test_passing_snr_analytic_example():
    # log-linear interpolation between (0 dB, 0.5) and (2 dB, 0.05)
    r = _result([(0.0, 0.5), (2.0, 0.05)])
    assert passing_snr(r) == pytest.approx(2 * np.log10(5), abs=1e-9)
    assert passing_snr(r) == pytest.approx(1.39794, abs=1e-5)


def test_passing_snr_exact_hit_and_lowest_crossing():
    assert passing_snr(_result([(0, 0.5), (1, 0.1), (2, 0.01)])) == 1
    r = _result([(0, 0.5), (1, 0.05), (2, 0.2), (3, 0.01)])
    assert passing_snr(r) < 1


def test_passing_snr_not_crossed():
    with pytest.raises(NotCrossed) as e:
        passing_snr(_result([(0, 0.5), (1, 0.4)]))
    assert e.value.side == "below"
    with pytest.raises(NotCrossed) as e:
        passing_snr(_result([(0, 0.05), (1, 0.01)]))
    assert e.value.side == "above"


def test_zero_error_floor():
    r = SweepResult([SweepPoint(0, 100, 50, 1, 0), SweepPoint(1, 300, 0, 1, 0)])
    # floor 1/(3*300) sits between 0.5 and it
    expect = np.log10(0.5 / 0.1) / np.log10(0.5 * 900)
    assert passing_snr(r) == pytest.approx(expect)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 0.09), st.floats(0.11, 0.99), st.floats(-10, 10))
def test_passing_snr_shift_equivariant(s0, lo, hi, shift):
    r = _result([(s0, hi), (s0 + 1.5, lo)], n=10000)
    assert passing_snr(r.shifted(shift)) == pytest.approx(passing_snr(r) + shift, abs=1e-9)
    assert compare(r, r.shifted(-shift)) == pytest.approx(shift, abs=1e-9)


def test_wilson_known_values():
    lo, hi = wilson_interval(5, 100)
    assert lo == pytest.approx(0.02154, abs=1e-4) and hi == pytest.approx(0.11175, abs=1e-4)
    assert wilson_interval(0, 0) == (0.0, 1.0)
    lo, hi = wilson_interval(0, 50)
    assert lo == pytest.approx(0.0, abs=1e-12) and 0 < hi < 0.1


def test_result_validation_and_text_round_trip(tmp_path):
    with pytest.raises(ValueError):
        _result([(1, 0.5), (1, 0.1)])
    r = _result([(0, 0.5), (2, 0.05)])
    r.metadata.update(receiver="mmse", seed=3)
    back = SweepResult.from_text(r.to_text())
    assert back.to_text() == r.to_text()
    assert [p.block_errors for p in back.points] == [50, 5]
    with pytest.raises(FormatError):
        SweepResult.from_text("garbage\n")
    p = tmp_path / "r.sweep"
    r.save(p)
    assert SweepResult.load(p).to_text() == r.to_text()
    r.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0].startswith("snr_db,blocks_run")


def test_simulate_block_extremes():
    slot = default_slot(27, "qam256")
    rx = Receiver("mmse")
    errs = [simulate_block(rx, TdlSource(), slot, -20.0, s)[0] for s in range(20)]
    assert all(errs)
    e, be, b = simulate_block(rx, FlatSource(4), slot, 60.0, 0)
    assert not e and be == 0 and b > 0


def test_unknown_receiver():
    with pytest.raises(UnknownReceiver):
        simulate_block(Receiver("zf"), FlatSource(1), default_slot(), 0.0, 0)


def test_sweep_stopping_rule_and_determinism():
    slot = default_slot(20, "qam64", n_rb=2)
    kw = dict(min_blocks=16, max_blocks=64, min_block_errors=10, seed=4)
    a = bler_sweep(Receiver("mmse"), TdlSource(n_rx=2), slot, [0.0, 30.0], **kw)
    b = bler_sweep(Receiver("mmse"), TdlSource(n_rx=2), slot, [0.0, 30.0], **kw)
    assert a.to_text() == b.to_text()
    low, high = a.points
    assert low.blocks_run == 16 and low.block_errors == 16  # stop after one chunk
    assert high.blocks_run == 64  # too few errors: run to max_blocks
    assert a.metadata["receiver"] == "mmse" and a.metadata["mcs"] == 20


def test_sweep_workers_identical():
    slot = default_slot(20, "qam64", n_rb=1)
    kw = dict(min_blocks=16, max_blocks=48, min_block_errors=5, seed=1, chunk=8)
    one = bler_sweep(Receiver("mmse"), TdlSource(n_rx=1), slot, [6.0, 12.0], workers=1, **kw)
    two = bler_sweep(Receiver("mmse"), TdlSource(n_rx=1), slot, [6.0, 12.0], workers=2, **kw)
    assert one.to_text() == two.to_text()


def test_sweep_empty_grid():
    with pytest.raises(ValueError):
        bler_sweep(Receiver("mmse"), FlatSource(1), default_slot(), [])


def test_common_random_numbers_across_receivers():
    slot = default_slot(20, "qam64", n_rb=1)
    kw = dict(min_blocks=16, max_blocks=16, seed=2)
    mm = bler_sweep(Receiver("mmse"), TdlSource(n_rx=1), slot, [8.0], **kw)
    pc = bler_sweep(Receiver("perfect"), TdlSource(n_rx=1), slot, [8.0], **kw)
    assert pc.points[0].block_errors <= mm.points[0].block_errors


# ---------------------------------------------------------------- splits

RECS = make_site_records(10, seed=0, n_subcarriers=24, pcis=(1, 2))


def _ids(recs):
    return {r.timestamp_ns for r in recs}


@pytest.mark.parametrize("spec", [
    SplitSpec("by_record_index", 0.7),
    SplitSpec("by_record_index", 0.5, shuffle=True, seed=3),
    SplitSpec("by_pci", test_pcis=(2,)),
])
def test_split_disjoint_and_complete(spec):
    train, test = split_dataset(RECS, spec)
    assert not _ids(train) & _ids(test)
    assert _ids(train) | _ids(test) == _ids(RECS)


def test_split_by_index_keeps_order():
    train, test = split_dataset(RECS, SplitSpec("by_record_index", 0.8))
    assert [r.timestamp_ns for r in train] == [r.timestamp_ns for r in RECS[:8]]


def test_split_by_pci_and_bbox():
    train, test = split_dataset(RECS, SplitSpec("by_pci", test_pcis=(2,)))
    assert {r.pci for r in test} == {2} and {r.pci for r in train} == {1}
    lat = sorted(r.lat for r in RECS)
    bbox = (lat[5], 90.0, -180.0, 180.0)
    train, test = split_dataset(RECS, SplitSpec("by_region_bbox", bbox=bbox))
    assert all(r.lat >= lat[5] for r in test) and len(test) == 5


def test_split_errors():
    with pytest.raises(EmptySplit):
        split_dataset([], SplitSpec())
    with pytest.raises(EmptySplit):
        split_dataset(RECS, SplitSpec("by_pci", test_pcis=(99,)))
    with pytest.raises(ValueError):
        SplitSpec("random")
