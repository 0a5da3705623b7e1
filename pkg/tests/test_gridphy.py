import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sitelink.errors import CapacityMismatch, GridTooWide, InsufficientSamples, LengthMismatch, NonPositiveNoise
from sitelink.gridphy import (
    RE_DATA,
    RE_PILOT,
    ResourceGrid,
    SlotConfig,
    build_pusch_slot,
    constellation,
    data_re_count,
    dmrs_c_init,
    gold_sequence,
    llr_demap,
    ofdm_demodulate,
    ofdm_modulate,
    qam_modulate,
    slot_layout,
)

# c_init = 0x1234, bits 0..31, from a direct bit-by-bit simulation of both
# registers with the 1600-step advance (see _naive_gold below)
GOLD_1234 = "01000001010100100111110000111111"


def _naive_gold(c_init, n):
    x1 = [1] + [0] * 30
    x2 = [(c_init >> i) & 1 for i in range(31)]
    for i in range(1600 + n):
        x1.append(x1[i + 3] ^ x1[i])
        x2.append(x2[i + 3] ^ x2[i + 2] ^ x2[i + 1] ^ x2[i])
    return [x1[k + 1600] ^ x2[k + 1600] for k in range(n)]


def test_gold_golden_vector():
    got = "".join(str(b) for b in gold_sequence(0x1234, 0, 32))
    assert got == GOLD_1234


def test_gold_empty_and_prefix():
    assert gold_sequence(5, 0, 0).size == 0
    assert np.array_equal(gold_sequence(5, 3, 4), gold_sequence(5, 0, 7)[3:7])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 3000), st.integers(0, 200))
def test_gold_prefix_consistency(c, off, n):
    assert np.array_equal(gold_sequence(c, off, n), gold_sequence(c, 0, off + n)[off:])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gold_matches_naive(c):
    assert list(gold_sequence(c, 0, 40)) == _naive_gold(c, 40)


def test_qpsk_table():
    # TS 38.211 5.1.3: d = ((1 - 2b0) + j(1 - 2b1)) / sqrt(2)
    for b0, b1 in itertools.product((0, 1), repeat=2):
        s = qam_modulate([b0, b1], 2)[0]
        assert s == pytest.approx(((1 - 2 * b0) + 1j * (1 - 2 * b1)) / np.sqrt(2))


def test_16qam_table():
    # TS 38.211 5.1.4: ((1-2b0)(2-(1-2b2)) + j(1-2b1)(2-(1-2b3))) / sqrt(10)
    for b in itertools.product((0, 1), repeat=4):
        ref = ((1 - 2 * b[0]) * (2 - (1 - 2 * b[2])) + 1j * (1 - 2 * b[1]) * (2 - (1 - 2 * b[3]))) / np.sqrt(10)
        assert qam_modulate(list(b), 4)[0] == pytest.approx(ref)


def test_256qam_table_point():
    # 256QAM closed form with b = 0 1 1 0 1 0 0 1
    b = [0, 1, 1, 0, 1, 0, 0, 1]
    s = lambda i: 1 - 2 * b[i]  # noqa: E731
    re = s(0) * (8 - s(2) * (4 - s(4) * (2 - s(6))))
    im = s(1) * (8 - s(3) * (4 - s(5) * (2 - s(7))))
    assert qam_modulate(b, 8)[0] == pytest.approx((re + 1j * im) / np.sqrt(170))


@pytest.mark.parametrize("bps", [2, 4, 6, 8])
def test_constellation_unit_energy_and_gray(bps):
    pts = constellation(bps)
    assert abs(np.mean(np.abs(pts) ** 2) - 1) < 1e-12
    # nearest neighbours differ in exactly one bit
    d = np.abs(pts[:, None] - pts[None, :])
    dmin = np.min(d[d > 0])
    for i, j in zip(*np.nonzero(np.isclose(d, dmin))):
        assert bin(i ^ j).count("1") == 1


def test_qam_errors_and_empty():
    assert qam_modulate([], 4).size == 0
    with pytest.raises(LengthMismatch):
        qam_modulate([0, 1, 1], 2)


def _brute_llr(y, h, nv, bps):
    pts = constellation(bps)
    d = np.abs(y - h * pts) ** 2 / nv
    labels = (np.arange(pts.size)[:, None] >> np.arange(bps - 1, -1, -1)) & 1
    return np.array([d[labels[:, i] == 1].min() - d[labels[:, i] == 0].min() for i in range(bps)])


def test_llr_qpsk_example():
    y = (1 + 1j) / np.sqrt(2)
    assert np.allclose(llr_demap(y, 1.0, 1.0, 2), _brute_llr(y, 1.0, 1.0, 2))
    assert np.all(llr_demap(y, 1.0, 1.0, 2) > 0)


@pytest.mark.parametrize("bps", [2, 4, 6, 8])
def test_llr_matches_brute_force(bps):
    rng = np.random.default_rng(bps)
    for _ in range(250):
        y = complex(*rng.normal(size=2))
        h = complex(*rng.normal(size=2))
        nv = rng.uniform(0.01, 2)
        assert np.allclose(llr_demap(y, h, nv, bps), _brute_llr(y, h, nv, bps), atol=1e-9, rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(-np.pi, np.pi), st.sampled_from([2, 4, 6, 8]), st.integers(0, 2**32 - 1))
def test_llr_phase_invariance(theta, bps, seed):
    rng = np.random.default_rng(seed)
    y, h = rng.normal(size=2) @ [1, 1j], rng.normal(size=2) @ [1, 1j]
    r = np.exp(1j * theta)
    assert np.allclose(llr_demap(y * r, h * r, 0.5, bps), llr_demap(y, h, 0.5, bps), atol=1e-9)


def test_llr_sign_for_zero_bits():
    s = qam_modulate(np.zeros(8, dtype=np.uint8), 8)[0]
    h = 0.7 - 0.2j
    assert np.all(llr_demap(h * s, h, 1e-6, 8) > 0)


def test_llr_rejects_bad_noise():
    with pytest.raises(NonPositiveNoise):
        llr_demap(1.0, 1.0, 0.0, 2)


# ---------------------------------------------------------------- OFDM

def _random_grid(rng, s=3, k=24, p=2):
    v = rng.normal(size=(s, k, p)) + 1j * rng.normal(size=(s, k, p))
    return ResourceGrid(v, np.full(v.shape, RE_DATA, dtype=np.int8))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 60), st.sampled_from([64, 128]), st.booleans(), st.integers(0, 1000))
def test_ofdm_round_trip(n_sym, n_sc, fft, dc_null, seed):
    rng = np.random.default_rng(seed)
    g = _random_grid(rng, n_sym, n_sc, 1)
    cps = [int(c) for c in rng.integers(0, 16, n_sym)]
    x = ofdm_modulate(g, fft, cps, dc_null)
    back = ofdm_demodulate(x, fft, cps, n_sc, dc_null=dc_null)
    assert np.max(np.abs(back.values - g.values)) < 1e-9


def test_ofdm_energy_preserved():
    g = _random_grid(np.random.default_rng(1))
    x = ofdm_modulate(g, 64, [0, 0, 0])
    assert np.sum(np.abs(x) ** 2) == pytest.approx(np.sum(np.abs(g.values) ** 2))


def test_ofdm_single_tone_is_exponential():
    k_total, fft, k = 12, 64, 9
    v = np.zeros((1, k_total, 1), dtype=complex)
    v[0, k, 0] = 1.0
    x = ofdm_modulate(v, fft, [0])[0]
    f = k - k_total // 2  # DC-centred grid
    n = np.arange(fft)
    assert np.allclose(x, np.exp(2j * np.pi * f * n / fft) / np.sqrt(fft))


def test_ofdm_zero_grid_and_too_wide():
    assert not np.any(ofdm_modulate(np.zeros((2, 12, 1)), 16, [4, 4]))
    with pytest.raises(GridTooWide):
        ofdm_modulate(np.zeros((1, 20, 1)), 16, [0])
    with pytest.raises(InsufficientSamples):
        ofdm_demodulate(np.zeros(10), 16, [4], 12)


def test_timing_offset_inside_cp_is_phase_ramp():
    rng = np.random.default_rng(3)
    g = _random_grid(rng, 1, 24, 1)
    cp, fft, d = 8, 64, 3
    x = ofdm_modulate(g, fft, [cp])
    # the symbol really starts at d; a window starting at 0 is d samples early,
    # which stays inside the cyclic prefix
    back = ofdm_demodulate(np.concatenate([np.zeros((1, d)), x], axis=1), fft, [cp], 24, timing_offset=0)
    ratio = back.values[0, :, 0] / g.values[0, :, 0]
    assert np.allclose(np.abs(ratio), 1, atol=1e-6)
    f = np.arange(24) - 12
    assert np.allclose(ratio, np.exp(-2j * np.pi * f * d / fft), atol=1e-9)


def test_noise_variance_preserved():
    rng = np.random.default_rng(4)
    s2 = 0.3
    n = 160
    x = (rng.normal(size=n * 64) + 1j * rng.normal(size=n * 64)) * np.sqrt(s2 / 2)
    g = ofdm_demodulate(x, 64, [0] * n, 64)
    assert np.var(g.values) == pytest.approx(s2, rel=0.05)


# ---------------------------------------------------------------- PUSCH slot

def test_slot_counts():
    cfg = SlotConfig(n_rb=4)
    re_map, pilots = slot_layout(cfg)
    assert np.count_nonzero(re_map[2] == RE_PILOT) == 24
    assert np.count_nonzero(re_map == RE_PILOT) == 24
    assert data_re_count(cfg) == 13 * 48 + 24
    assert np.all(np.abs(pilots[re_map == RE_PILOT]) == pytest.approx(1.0))


def test_dmrs_c_init_formula():
    cfg = SlotConfig(pci_or_scrambling_id=17, slot_index=3)
    expect = ((1 << 17) * (14 * 3 + 2 + 1) * (2 * 17 + 1) + 2 * 17) % (1 << 31)
    assert dmrs_c_init(cfg, 2) == expect


def test_build_slot_deterministic_and_pilots_fixed():
    cfg = SlotConfig(n_rb=2, mcs_index=20, mcs_table="qam64")
    n = data_re_count(cfg) * 6
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2, n)
    b = rng.integers(0, 2, n)
    ga, gb = build_pusch_slot(cfg, a), build_pusch_slot(cfg, b)
    assert np.array_equal(build_pusch_slot(cfg, a).values, ga.values)
    pil = ga.re_map == RE_PILOT
    assert np.array_equal(ga.values[pil], gb.values[pil])
    assert np.array_equal(ga.re_map, gb.re_map)


def test_build_slot_capacity_mismatch():
    cfg = SlotConfig(n_rb=1, mcs_index=20, mcs_table="qam64")
    with pytest.raises(CapacityMismatch) as e:
        build_pusch_slot(cfg, np.zeros(10))
    assert e.value.expected == data_re_count(cfg) * 6
