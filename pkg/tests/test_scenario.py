import math
import statistics

import pytest

from lwsim.engine import rng_stream
from lwsim.phy import LinkModel
from lwsim.scenario import (CONFIG_KEYS, ConfigError, ScenarioConfig, dump_config,
                            generate_topology, load_config, mark_confirmed, next_uplink_time,
                            parse_config_text, downlink_interarrival_ms)


def test_defaults():
    cfg = ScenarioConfig()
    assert cfg.sim_days == 57 and cfg.replications == 15
    assert cfg.channels == (868.1, 868.3, 868.5) and cfg.bw == 125
    assert cfg.mean_send_interval == 1000.0 and cfg.payload_len == 20


@pytest.mark.parametrize("key,value", [
    ("n_nodes", 0), ("confirmed_fraction", 1.5), ("downlink_fraction", -0.1),
    ("channels", (869.545,)), ("bw", 200), ("max_attempts", 0), ("traffic_mode", "bursty"),
    ("sensitivity_125", (-123.0, -126.0, -129.0, -128.0, -133.0, -136.0)),
    ("payload_len", 300), ("capture_threshold", 0.0),
])
def test_invalid_config_names_key(key, value):
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig(**{key: value})
    assert exc.value.key == key
    assert key in str(exc.value)


def test_single_node_at_40m():
    cfg = ScenarioConfig(n_nodes=1)
    topo = generate_topology(cfg, rng_stream(1, "placement"))
    assert len(topo.devices) == 1
    # place one explicitly: the rule at 40 m is SF7
    from lwsim.phy import min_spreading_factor
    assert min_spreading_factor(40.0) == 7


def test_topology_deterministic_and_reachable():
    cfg = ScenarioConfig(n_nodes=500)
    a = generate_topology(cfg, rng_stream(3, "placement"))
    b = generate_topology(cfg, rng_stream(3, "placement"))
    assert [(d.x, d.y, d.radio) for d in a.devices] == [(d.x, d.y, d.radio) for d in b.devices]
    assert all(d.distance <= a.radius for d in a.devices)
    assert sum(a.sf_counts.values()) == 500
    assert {d.radio.freq for d in a.devices} == set(cfg.channels)


def test_sf_rings():
    cfg = ScenarioConfig(n_nodes=2000)
    topo = generate_topology(cfg, rng_stream(5, "placement"))
    pairs = sorted((d.distance, d.radio.sf) for d in topo.devices)
    sfs = [sf for _, sf in pairs]
    assert sfs == sorted(sfs)


def test_uniform_density_on_disc():
    # chi-square over 10 equal-area annuli
    cfg = ScenarioConfig(n_nodes=20000)
    topo = generate_topology(cfg, rng_stream(11, "placement"))
    bins = [0] * 10
    for d in topo.devices:
        bins[min(int((d.distance / topo.radius) ** 2 * 10), 9)] += 1
    expected = 2000
    chi2 = sum((b - expected) ** 2 / expected for b in bins)
    assert chi2 < 27.88   # p = 0.001, 9 dof


def test_sf_share_matches_ring_areas():
    link = LinkModel()
    cfg = ScenarioConfig(n_nodes=20000)
    topo = generate_topology(cfg, rng_stream(2, "placement"))
    r_max = link.max_range(14)
    r11 = link.ref_distance * 10 ** ((14 + 133 - link.ref_loss) / (10 * link.exponent))
    share12 = 1 - (r11 / r_max) ** 2
    assert topo.sf_counts[12] / 20000 == pytest.approx(share12, abs=0.015)
    assert share12 == pytest.approx(0.486, abs=0.002)


def test_exponential_interarrival_mean():
    cfg = ScenarioConfig()
    rng = rng_stream(1, "traffic/0")
    n = 1_000_000
    total = sum(next_uplink_time(0.0, cfg, rng) for _ in range(n))
    assert total / n == pytest.approx(1_000_000.0, rel=0.01)


def test_periodic_zero_jitter():
    cfg = ScenarioConfig(traffic_mode="periodic", jitter=0.0, mean_send_interval=600)
    rng = rng_stream(1, "traffic/0")
    t, times = 0.0, []
    for _ in range(5):
        t = next_uplink_time(t, cfg, rng)
        times.append(t)
    assert times == [600_000.0 * k for k in range(1, 6)]


def test_periodic_jitter_bounds():
    cfg = ScenarioConfig(traffic_mode="periodic", jitter=0.1, mean_send_interval=100)
    rng = rng_stream(1, "traffic/0")
    gaps = [next_uplink_time(0.0, cfg, rng) for _ in range(5000)]
    assert min(gaps) >= 90_000 and max(gaps) <= 110_000
    assert statistics.fmean(gaps) == pytest.approx(100_000, rel=0.01)


def test_streams_differ_per_node():
    cfg = ScenarioConfig()
    a = [next_uplink_time(0, cfg, rng_stream(1, "traffic/0")) for _ in range(1)]
    b = [next_uplink_time(0, cfg, rng_stream(1, "traffic/1")) for _ in range(1)]
    assert a != b


def test_confirmed_binomial_bound():
    cfg = ScenarioConfig(confirmed_fraction=0.05)
    rng = rng_stream(9, "confirm/0")
    n = 100_000
    k = sum(mark_confirmed(cfg, rng) for _ in range(n))
    sigma = math.sqrt(n * 0.05 * 0.95)
    assert abs(k - 5000) < 3 * sigma
    assert not any(mark_confirmed(ScenarioConfig(), rng) for _ in range(1000))


def test_downlink_rate():
    assert downlink_interarrival_ms(ScenarioConfig()) is None
    cfg = ScenarioConfig(n_nodes=100, downlink_fraction=0.05)
    # 100 nodes / 1000 s = 0.1 uplinks/s; 5% of that is one frame every 200 s
    assert downlink_interarrival_ms(cfg) == pytest.approx(200_000.0)


def test_config_file_round_trip(tmp_path):
    cfg = ScenarioConfig(n_nodes=321, confirmed_fraction=0.25, dr_decay=True,
                         channels=(868.1, 868.5), shadow_sigma=3.57)
    path = tmp_path / "s.cfg"
    path.write_text("# comment line\n" + dump_config(cfg))
    assert load_config(path) == cfg
    assert load_config(path, n_nodes=5).n_nodes == 5
    assert set(parse_config_text(dump_config(cfg))) == set(CONFIG_KEYS)


def test_config_file_errors():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("n_nodes = many\n")
    assert exc.value.key == "n_nodes"
    with pytest.raises(ConfigError) as exc:
        parse_config_text("colour = red\n")
    assert exc.value.key == "colour"
    with pytest.raises(ConfigError):
        parse_config_text("just words\n")
    assert parse_config_text("dr_decay = yes  # inline\n") == {"dr_decay": True}
