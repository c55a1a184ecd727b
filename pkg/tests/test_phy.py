import math
import random

import pytest
from hypothesis import assume, given, settings, strategies as st

from lwsim.phy import (BANDWIDTHS, DEFAULT_SENSITIVITY, SPREADING_FACTORS, Direction, LinkModel,
                       RadioParams, Reception, Transmission, airtime, min_spreading_factor,
                       path_loss, resolve_receptions, sub_band_of)

from oracles import lora_airtime_ms, pairwise_decodable


# --- airtime --------------------------------------------------------------

@pytest.mark.parametrize("sf,payload,expected", [
    (7, 20, 56.576),
    (12, 20, 1318.912),
    (9, 0, 103.424),
    # values from public LoRa airtime calculators, 125 kHz CR4/5
    (7, 51, 102.656),
    (12, 51, 2465.792),
    (10, 12, 288.768),
])
def test_airtime_known_values(sf, payload, expected):
    assert airtime(RadioParams(sf=sf), payload) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("sf", SPREADING_FACTORS)
@pytest.mark.parametrize("bw", BANDWIDTHS)
@pytest.mark.parametrize("payload", [0, 1, 13, 20, 51, 128, 222, 255])
@pytest.mark.parametrize("cr", [1, 4])
def test_airtime_matches_reference(sf, bw, payload, cr):
    got = airtime(RadioParams(sf=sf, bw=bw, cr=cr), payload)
    assert got == pytest.approx(lora_airtime_ms(sf, bw, payload, cr=cr), abs=1e-9)


def test_airtime_options_match_reference():
    p = RadioParams(sf=9, bw=250, cr=2)
    assert airtime(p, 30, preamble_syms=12) == pytest.approx(
        lora_airtime_ms(9, 250, 30, cr=2, preamble=12))
    assert airtime(p, 30, explicit_header=False) == pytest.approx(
        lora_airtime_ms(9, 250, 30, cr=2, explicit_header=False))
    assert airtime(p, 30, low_dr_optimize=True) == pytest.approx(
        lora_airtime_ms(9, 250, 30, cr=2, ldro=True))
    # LDRO is always on for SF11/12 at 125 kHz, whatever the flag says
    assert airtime(RadioParams(sf=11), 20, low_dr_optimize=False) == pytest.approx(
        lora_airtime_ms(11, 125, 20, ldro=True))


@pytest.mark.parametrize("kwargs", [dict(payload_len=256), dict(payload_len=-1),
                                    dict(payload_len=10, preamble_syms=5)])
def test_airtime_rejects_bad_input(kwargs):
    with pytest.raises(ValueError):
        airtime(RadioParams(), **kwargs)


def test_radio_params_validation():
    with pytest.raises(ValueError):
        RadioParams(sf=6)
    with pytest.raises(ValueError):
        RadioParams(bw=200)
    with pytest.raises(ValueError):
        RadioParams(cr=5)


@given(st.sampled_from(BANDWIDTHS), st.integers(0, 255), st.integers(1, 4))
def test_airtime_increases_with_sf(bw, payload, cr):
    times = [airtime(RadioParams(sf=sf, bw=bw, cr=cr), payload) for sf in SPREADING_FACTORS]
    assert all(b > a for a, b in zip(times, times[1:]))


@given(st.sampled_from(SPREADING_FACTORS), st.integers(0, 255), st.integers(1, 4))
def test_airtime_decreases_with_bw(sf, payload, cr):
    times = [airtime(RadioParams(sf=sf, bw=bw, cr=cr), payload) for bw in BANDWIDTHS]
    assert all(b < a for a, b in zip(times, times[1:]))


# --- link budget -----------------------------------------------------------

def test_path_loss_examples():
    assert path_loss(40) == pytest.approx(127.47)
    assert path_loss(400) == pytest.approx(148.27)
    assert path_loss(40, 3.0) == pytest.approx(130.47)
    with pytest.raises(ValueError):
        path_loss(0)


@given(st.floats(1.0, 1e5))
def test_doubling_distance_adds_fixed_loss(d):
    link = LinkModel()
    assert path_loss(2 * d) - path_loss(d) == pytest.approx(10 * link.exponent * math.log10(2))


@given(st.floats(0.5, 5000), st.floats(0.5, 5000))
def test_path_loss_monotone(a, b):
    assume(a < b)
    assert path_loss(a) < path_loss(b)


def test_min_spreading_factor_examples():
    assert min_spreading_factor(40) == 7
    assert 14 - path_loss(40) == pytest.approx(-113.47)
    link = LinkModel()
    # just beyond the SF11 range, SF12 is the only option
    d11 = link.ref_distance * 10 ** ((14 + 133 - link.ref_loss) / (10 * link.exponent))
    assert min_spreading_factor(d11 * 1.001) == 12
    assert min_spreading_factor(d11 * 0.999) == 11
    r_max = link.max_range(14)
    assert r_max == pytest.approx(484.43, abs=0.01)
    assert min_spreading_factor(r_max * 0.999) == 12
    assert min_spreading_factor(r_max * 1.01) is None


@given(st.floats(1, 600), st.floats(1, 600))
def test_min_sf_nondecreasing(a, b):
    assume(a <= b)
    sa, sb = min_spreading_factor(a), min_spreading_factor(b)
    if sb is not None:
        assert sa is not None and sa <= sb


def test_sensitivity_table_must_be_monotone():
    table = dict(DEFAULT_SENSITIVITY)
    table[(9, 125)] = -120.0
    with pytest.raises(ValueError):
        LinkModel(sensitivity=table)
    with pytest.raises(ValueError):
        LinkModel(exponent=0)
    with pytest.raises(ValueError):
        LinkModel().sensitivity_of(7, 62)


def test_sub_bands():
    assert {sub_band_of(f) for f in (868.1, 868.3, 868.5)} == {"g1"}
    assert sub_band_of(869.545) == "g3"
    with pytest.raises(ValueError):
        sub_band_of(915.0)


# --- reception resolution ---------------------------------------------------

def _rx(rssi, freq=868.1, sf=7, direction=Direction.UPLINK, bw=125):
    tx = Transmission(0, -1, direction, RadioParams(sf=sf, bw=bw, freq=freq), 0.0, 1.0, 20)
    return Reception(tx, rssi)


def test_resolve_examples():
    a, b = _rx(-100, sf=7), _rx(-100, sf=9)
    assert resolve_receptions([a, b]) == [a, b]
    up, down = _rx(-100), _rx(-100, direction=Direction.DOWNLINK)
    assert resolve_receptions([up, down]) == [up, down]
    weak, strong = _rx(-100), _rx(-98)
    assert resolve_receptions([weak, strong]) == []
    weak, strong = _rx(-100), _rx(-92)
    assert resolve_receptions([weak, strong]) == [strong]
    assert not weak.decodable and strong.decodable


def test_exact_threshold_captures():
    weak, strong = _rx(-100), _rx(-94)
    assert resolve_receptions([weak, strong]) == [strong]


def test_below_sensitivity_does_not_interfere():
    faint, ok = _rx(-125), _rx(-120)          # SF7 sensitivity is -123 dBm
    assert resolve_receptions([faint, ok]) == [ok]


_SENS = DEFAULT_SENSITIVITY


def _random_case(rng):
    n = rng.randint(1, 4)
    out = []
    for _ in range(n):
        freq = rng.choice((868.1, 868.3))
        sf = rng.choice((7, 8))
        direction = rng.choice((Direction.UPLINK, Direction.DOWNLINK))
        # half-dB grid so exact-threshold ties and sensitivity edges occur
        rssi = -130.0 + 0.5 * rng.randint(0, 40)
        out.append((freq, sf, direction, rssi, 125))
    return out


def test_resolve_matches_pairwise_oracle_random():
    rng = random.Random(20240611)
    mismatches = 0
    for _ in range(10_000):
        case = _random_case(rng)
        recs = [_rx(r, f, sf, d, bw) for f, sf, d, r, bw in case]
        resolve_receptions(recs)
        expected = pairwise_decodable(case, _SENS, 6.0)
        mismatches += [r.decodable for r in recs] != expected
    assert mismatches == 0


reception_sets = st.lists(
    st.tuples(st.sampled_from((868.1, 868.3, 868.5)), st.sampled_from(SPREADING_FACTORS),
              st.sampled_from(tuple(Direction)), st.floats(-140, -80), st.just(125)),
    min_size=1, max_size=6)


@settings(max_examples=300)
@given(reception_sets, st.floats(0.5, 12))
def test_resolve_properties(case, threshold):
    link = LinkModel(capture_threshold=threshold)
    recs = [_rx(r, f, sf, d, bw) for f, sf, d, r, bw in case]
    out = resolve_receptions(recs, link)
    assert all(any(o is r for r in recs) for o in out)
    for r in out:
        p = r.transmission.params
        assert r.rssi >= link.sensitivity_of(p.sf, p.bw)
    assert [r.decodable for r in recs] == pairwise_decodable(case, _SENS, threshold)


@settings(max_examples=200)
@given(reception_sets, st.integers(0, 5))
def test_removing_non_interferer_keeps_verdicts(case, idx):
    idx %= len(case)
    key = case[idx][:3]
    recs = [_rx(r, f, sf, d, bw) for f, sf, d, r, bw in case]
    resolve_receptions(recs)
    before = {i: r.decodable for i, r in enumerate(recs)}
    # drop every frame outside idx's group: idx's verdict must not change
    keep = [i for i, c in enumerate(case) if c[:3] == key]
    sub = [recs[i] for i in keep]
    resolve_receptions(sub)
    assert all(recs[i].decodable == before[i] for i in keep)
