import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import j0

from sitelink.chansim import (
    FlatSource,
    FreqResponse,
    RecordSource,
    TdlSource,
    add_awgn,
    apply_channel,
    awgn_variance,
    freq_response,
    make_site_records,
    make_tdl,
    record_gain,
    replay_record,
    resample_positions,
    sample_freq_response,
    signal_power,
    tdl_profile,
    tdl_tables,
)
from sitelink.errors import DimensionMismatch, EmptyRecord, IndexOutOfRange, UnknownProfile
from sitelink.gridphy import RE_DATA, ResourceGrid
from sitelink.records import ChannelRecord


def test_tables_present():
    t = tdl_tables()
    assert {"TDL-B", "TDL-C"} <= set(t)
    with pytest.raises(UnknownProfile):
        tdl_profile("TDL-Z")


@pytest.mark.parametrize("name", ["TDL-B", "TDL-C"])
def test_tables_normalised_to_unit_delay_spread(name):
    # the tabulated delays are in units of the rms delay spread
    p = tdl_profile(name, 300.0)
    assert p.rms_delay_spread_s() == pytest.approx(300e-9, rel=0.03)
    assert p.powers.sum() == pytest.approx(1.0)


def test_mean_power_and_frequency_correlation():
    n_real, spacing, k = 400, 30e3, 48
    acc_p = 0.0
    acc_c = 0.0
    lag = 4
    for s in range(n_real):
        proc = make_tdl("TDL-B", 300, 0.0, 1, 1, s)
        h = freq_response(proc, [0.0], spacing, k)[0, 0, 0]
        acc_p += np.mean(np.abs(h) ** 2)
        acc_c += np.mean(h[:-lag] * np.conj(h[lag:]))
    prof = proc.profile
    expect = np.sum(prof.powers * np.exp(-2j * np.pi * lag * spacing * prof.delays_s))
    assert acc_p / n_real == pytest.approx(1.0, abs=0.08)
    assert abs(acc_c / n_real - np.conj(expect)) < 0.1


def test_time_correlation_follows_bessel():
    fd, tau = 100.0, 2e-3
    acc = 0.0
    n = 300
    for s in range(n):
        proc = make_tdl("TDL-B", 100, fd, 1, 1, s, taps=[(0.0, 0.0)])
        g = proc.tap_gains(np.array([0.0, tau]))[..., 0, 0, 0]
        acc += g[1] * np.conj(g[0])
    assert (acc / n).real == pytest.approx(j0(2 * np.pi * fd * tau), abs=0.08)


def test_static_channel_is_constant():
    proc = make_tdl("TDL-C", 100, 0.0, 2, 2, 3)
    h = freq_response(proc, [0.0, 0.5, 1.0], 30e3, 24)
    assert np.allclose(h[0], h[2])


def test_make_tdl_warns_out_of_range():
    with pytest.warns(UserWarning):
        make_tdl("TDL-B", 800, 10, 1, 1, 0)
    with pytest.raises(ValueError):
        make_tdl("TDL-B", 100, -1, 1, 1, 0)
    with pytest.raises(ValueError):
        sample_freq_response(make_tdl("TDL-B", 100, 1, 1, 1, 0), -1, 30e3, 12)


def test_same_seed_same_channel():
    a = freq_response(make_tdl("TDL-B", 200, 50, 1, 4, 9), [0.1], 30e3, 12)
    b = freq_response(make_tdl("TDL-B", 200, 50, 1, 4, 9), [0.1], 30e3, 12)
    assert np.array_equal(a, b)


def _grid(rng, s=14, k=24, p=1):
    v = rng.normal(size=(s, k, p)) + 1j * rng.normal(size=(s, k, p))
    return ResourceGrid(v, np.full(v.shape, RE_DATA, dtype=np.int8))


def test_apply_channel_identity_and_shapes():
    rng = np.random.default_rng(0)
    g = _grid(rng)
    h = np.ones((14, 3, 1, 24))
    y = apply_channel(g, h)
    assert y.values.shape == (14, 24, 3)
    assert np.allclose(y.values, np.repeat(g.values, 3, axis=2))
    y2 = apply_channel(g, FreqResponse(np.full((1, 1, 24), 2.0)))
    assert np.allclose(y2.values, 2 * g.values)
    with pytest.raises(DimensionMismatch):
        apply_channel(g, np.ones((14, 1, 2, 24)))


def test_apply_channel_sums_ports():
    rng = np.random.default_rng(1)
    g = _grid(rng, 2, 6, 2)
    h = rng.normal(size=(2, 1, 2, 6)) + 0j
    y = apply_channel(g, h)
    ref = h[:, 0, 0, :] * g.values[:, :, 0] + h[:, 0, 1, :] * g.values[:, :, 1]
    assert np.allclose(y.values[:, :, 0], ref)


@settings(max_examples=20, deadline=None)
@given(st.floats(-10, 30), st.integers(0, 2 ** 32 - 1))
def test_awgn_hits_requested_snr(snr, seed):
    rng = np.random.default_rng(seed)
    g = _grid(rng, 14, 96, 2)
    nv = awgn_variance(g, snr)
    assert nv == pytest.approx(signal_power(g) / 10 ** (snr / 10))
    noisy = add_awgn(g, snr, seed=seed)
    est = np.mean(np.abs(noisy.values - g.values) ** 2)
    assert est == pytest.approx(nv, rel=0.15)


def test_awgn_infinite_snr_and_conventions():
    g = _grid(np.random.default_rng(2))
    assert add_awgn(g, np.inf) is g
    assert awgn_variance(g, 10, "nominal") == pytest.approx(0.1)
    with pytest.raises(ValueError):
        awgn_variance(g, 10, "peak")


def test_awgn_seeded_is_reproducible():
    g = _grid(np.random.default_rng(3))
    assert np.array_equal(add_awgn(g, 5, seed=7).values, add_awgn(g, 5, seed=7).values)


def test_resample_positions():
    assert np.allclose(resample_positions(11, 6), [0, 2, 4, 6, 8, 10])
    # physical mapping: 30 kHz target onto a 15 kHz source, centred
    pos = resample_positions(600, 4, 15e3, 30e3)
    assert np.allclose(pos, [296, 298, 300, 302])


def _record(h):
    return ChannelRecord(1, 0, 0.0, 0.0, 1, h.astype(np.complex64))


def test_replay_normalised_and_oriented():
    rng = np.random.default_rng(4)
    h = (rng.normal(size=(12, 4, 1, 50)) + 1j * rng.normal(size=(12, 4, 1, 50))) * 3
    rec = _record(h)
    fr = replay_record(rec, 0, 50)
    assert fr.h.shape == (4, 1, 50)
    tot = np.mean([np.mean(np.abs(replay_record(rec, m, 50).h) ** 2) for m in range(12)])
    assert tot == pytest.approx(1.0, rel=1e-5)
    assert np.allclose(fr.h, h[0].astype(np.complex64) / np.sqrt(record_gain(rec)), atol=1e-6)


def test_replay_errors():
    with pytest.raises(IndexOutOfRange):
        replay_record(_record(np.ones((12, 1, 1, 4))), 12, 4)
    with pytest.raises(EmptyRecord):
        replay_record(_record(np.zeros((12, 1, 1, 4))), 0, 4)
    with pytest.raises(EmptyRecord):
        replay_record(_record(np.zeros((12, 1, 1, 0))), 0, 4)


def test_replay_linear_channel_interpolates_exactly():
    k = np.arange(600)
    h = np.broadcast_to((1 + 0.01 * k) + 0j, (12, 1, 1, 600))
    rec = _record(np.array(h))
    fr = replay_record(rec, 0, 48, 15e3, 30e3)
    g = np.sqrt(record_gain(rec))
    pos = resample_positions(600, 48, 15e3, 30e3)
    assert np.allclose(fr.h[0, 0] * g, 1 + 0.01 * pos, rtol=1e-5)


@pytest.mark.parametrize("source", [FlatSource(2), TdlSource(n_rx=3)])
def test_sources_shape_and_determinism(source):
    a = source.draw(np.random.default_rng(5), 14, 48, 30e3)
    b = source.draw(np.random.default_rng(5), 14, 48, 30e3)
    assert a.shape == (14, source.n_rx, 1, 48)
    assert np.array_equal(a, b)


def test_record_source_draws():
    recs = make_site_records(3, seed=1, n_subcarriers=120)
    src = RecordSource(tuple(recs))
    h = src.draw(np.random.default_rng(0), 14, 48, 30e3)
    assert h.shape == (14, 4, 1, 48)
    assert np.array_equal(h[0], h[13])  # one snapshot per slot


def test_site_records_shape_and_delay_profile():
    recs = make_site_records(4, seed=2)
    assert all(r.h.shape == (12, 4, 1, 600) for r in recs)
    # the site's second cluster sits ~1.6 us out: power there in the delay domain
    h = np.concatenate([r.h[:, :, 0, :].reshape(-1, 600) for r in recs])
    pdp = np.mean(np.abs(np.fft.ifft(h, axis=1)) ** 2, axis=0)
    bin_s = 1 / (600 * 15e3)
    late = pdp[int(1.5e-6 / bin_s):int(2.0e-6 / bin_s)].sum()
    assert late / pdp.sum() > 0.2
