import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from couplearn.network import (ConstantCoupling, CuckerSmale, FormationRepulsive, NetworkSpec,
                               NoiseModel, ZeroCoupling, complete_graph, formation_offset,
                               path_graph, relative_displacements, step)
from couplearn.simulator import (DistanceHistogram, SimulationDiverged, SimulationDomainError,
                                 distance_stream, empirical_zeta, histogram,
                                 histogram_from_distances, kl_divergence, pair_distances,
                                 read_trajectory, resimulate_distribution, simulate,
                                 trajectory_histogram, weighted_l2_distance, write_trajectory)


def small_spec(n=4, d=2, omega=1.0, R0=0.5):
    return NetworkSpec(n, d, 0.01, complete_graph(n), NoiseModel(omega), R0=R0)


PHI = CuckerSmale(1.0, 0.4, R=5.0)


# -- simulate --------------------------------------------------------------

def test_noise_free_consensus_is_fixed():
    spec = small_spec(omega=0.0, R0=0.0)
    x0 = np.tile([0.2, -0.3], 4)
    traj = simulate(spec, PHI, 50, 0, burn_in=0, x0=x0)
    assert np.array_equal(traj.states, np.tile(x0, (51, 1)))


def test_same_seed_same_states():
    a = simulate(small_spec(), PHI, 300, 42, burn_in=20)
    b = simulate(small_spec(), PHI, 300, 42, burn_in=20)
    c = simulate(small_spec(), PHI, 300, 43, burn_in=20)
    assert np.array_equal(a.states, b.states)
    assert a.spec_fingerprint == b.spec_fingerprint != c.spec_fingerprint
    assert not np.array_equal(a.states, c.states)


def test_prefix_of_longer_run():
    long = simulate(small_spec(), PHI, 5000, 9, burn_in=100)
    short = simulate(small_spec(), PHI, 700, 9, burn_in=100)
    assert np.array_equal(long.prefix(700).states, short.states)


def test_steps_follow_update_rule():
    """Replay the first steps with the drawn noise recovered from the states."""
    spec = small_spec()
    traj = simulate(spec, PHI, 20, 1, burn_in=0)
    for t in range(20):
        x, x1 = traj.states[t], traj.states[t + 1]
        w = (x1 - step(x, spec, PHI, np.zeros_like(x)).x) / spec.h
        a = spec.noise.component_amplitude(spec.d)
        assert np.all(np.abs(w) <= a + 1e-9)


def test_initial_state_within_ball():
    spec = small_spec(R0=0.7)
    for seed in range(20):
        x0 = simulate(spec, PHI, 1, seed, burn_in=0).states[0].reshape(4, 2)
        assert np.all(np.linalg.norm(x0, axis=1) <= 0.7)


def test_bad_arguments():
    with pytest.raises(ValueError):
        simulate(small_spec(), PHI, 0, 0)
    with pytest.raises(ValueError):
        simulate(small_spec(), PHI, 5, 0, thin=0)
    with pytest.raises(ValueError):
        simulate(small_spec(), PHI, 5, 0, x0=np.zeros(3))


def test_domain_error_reports_pair():
    b = formation_offset(3, 1, 1.0)
    spec = NetworkSpec(3, 1, 0.01, path_graph(3), NoiseModel(0.0), b, distance_from="state")
    phi = FormationRepulsive(10.0, 0.4, 1.0, 1.01)
    x0 = np.array([0.0, 1.0, 3.5])          # pair (1, 2) at distance 2.5 is past the singularity
    with pytest.raises(SimulationDomainError) as err:
        simulate(spec, phi, 10, 0, burn_in=0, x0=x0)
    assert (err.value.t, err.value.i, err.value.j) == (0, 1, 2)
    assert err.value.r == pytest.approx(2.5)


def test_divergence_detected():
    spec = small_spec()
    with pytest.raises(SimulationDiverged):
        simulate(spec, ConstantCoupling(-500.0, 5.0), 2000, 0, burn_in=0)


def test_non_contractive_flag():
    traj = simulate(small_spec(), ConstantCoupling(200.0, 5.0), 5, 0, burn_in=0)
    assert not traj.contractive


def test_thinning_keeps_full_rate_histogram():
    spec = small_spec()
    full = simulate(spec, PHI, 400, 3, burn_in=10)
    thin = simulate(spec, PHI, 400, 3, burn_in=10, thin=4, hist_R=2.0, hist_bins=20)
    assert np.array_equal(thin.states, full.states[::4])
    expect = trajectory_histogram(full, spec, 2.0, 20)
    assert np.array_equal(thin.hist.counts, expect.counts)


def test_empirical_zeta_below_bound():
    from couplearn.network import contractivity
    spec = small_spec()
    traj = simulate(spec, PHI, 200, 2, burn_in=10)
    assert empirical_zeta(traj, spec, PHI, stride=10) <= contractivity(spec, PHI).zeta_bound + 1e-12


def test_preset_a_stays_in_working_domain(preset_a):
    cfg, spec, phi, _ = preset_a
    traj = simulate(spec, phi, 10_000, 0)
    assert pair_distances(traj.states, spec).max() <= cfg.R


# -- distance stream -------------------------------------------------------

def test_stream_counts():
    spec = NetworkSpec(3, 2, 0.01, complete_graph(3), NoiseModel(1.0))
    assert len(list(distance_stream(simulate(spec, PHI, 2, 0, burn_in=0), spec))) == 6
    chain = NetworkSpec(20, 1, 0.01, path_graph(20), NoiseModel(1.0))
    rows = list(distance_stream(simulate(chain, PHI, 3, 0, burn_in=0), chain))
    assert len(rows) == 19 * 3


def test_stream_matches_displacements():
    spec = small_spec()
    traj = simulate(spec, PHI, 5, 4, burn_in=0)
    rows = list(distance_stream(traj, spec))
    for t in range(5):
        got = [(i, j, r) for tt, i, j, _, r in rows if tt == t]
        want = [(i, j, r) for i, j, _, r in relative_displacements(traj.states[t], spec)]
        assert got == want


# -- histograms ------------------------------------------------------------

def test_point_mass_histogram():
    h = histogram(np.full(50, 0.37), 1.0, 10)
    assert h.mass[3] == 1.0 and h.mass.sum() == 1.0


def test_uniform_samples_binomial(rng):
    N, B = 200_000, 20
    h = histogram_from_distances(rng.uniform(0, 1, N), 1.0, B)
    sd = math.sqrt((1 / B) * (1 - 1 / B) / N)
    assert np.all(np.abs(h.mass - 1 / B) < 5 * sd)


def test_overflow_clamps_to_last_bin():
    h = histogram_from_distances([0.1, 0.5, 1.5, np.inf], 1.0, 4)
    assert h.overflow == 2 and h.counts[-1] == 2


def test_histogram_rejects():
    with pytest.raises(ValueError):
        histogram_from_distances([0.1], 1.0, 0)
    with pytest.raises(ValueError):
        histogram_from_distances([-0.1], 1.0, 4)


def test_stream_and_batch_histograms_agree():
    spec = small_spec()
    traj = simulate(spec, PHI, 50, 5, burn_in=0)
    a = histogram(distance_stream(traj, spec), 2.0, 16)
    b = trajectory_histogram(traj, spec, 2.0, 16)
    assert np.array_equal(a.counts, b.counts)
    assert a.samples == spec.n_edges * traj.T


@given(st.lists(st.floats(0, 3), min_size=1, max_size=200), st.integers(1, 40))
def test_mass_sums_to_one(r, B):
    h = histogram_from_distances(r, 3.0, B)
    assert np.all(h.mass >= 0)
    assert h.mass.sum() == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50),
       st.lists(st.floats(0, 1), min_size=1, max_size=50))
def test_merge_is_count_sum(a, b):
    ha, hb = histogram_from_distances(a, 1.0, 8), histogram_from_distances(b, 1.0, 8)
    both = histogram_from_distances(a + b, 1.0, 8)
    assert np.array_equal((ha + hb).counts, both.counts)
    assert np.array_equal((ha + hb).counts, (hb + ha).counts)


def test_histogram_csv_roundtrip(tmp_path):
    h = histogram_from_distances([0.1, 0.2, 0.25, 0.9], 1.0, 5)
    p = tmp_path / "h.csv"
    p.write_text(h.to_csv({"config_hash": "abc", "seed": 3}))
    lines = p.read_text().splitlines()
    assert lines[:3] == ["# config_hash=abc", "# seed=3", "bin_left,bin_right,mass"]
    back = DistanceHistogram.read_csv(p)
    assert np.allclose(back.mass, h.mass) and np.allclose(back.edges, h.edges)


# -- metrics ---------------------------------------------------------------

def test_weighted_l2_examples():
    h = histogram(np.full(10, 0.45), 1.0, 10)       # point mass in the bin centred at 0.45
    one, zero = ConstantCoupling(1.0, 1.0), ZeroCoupling(1.0)
    assert weighted_l2_distance(one, one, h) == 0.0
    assert weighted_l2_distance(one, zero, h) == pytest.approx(0.45)


@given(st.lists(st.floats(-5, 5), min_size=9, max_size=9), st.integers(0, 1000))
def test_weighted_l2_triangle(vals, seed):
    rng = np.random.default_rng(seed)
    h = histogram_from_distances(rng.uniform(0, 1, 100), 1.0, 10)
    f, g, k = (ConstantCoupling(v, 1.0) for v in vals[:3])
    assert weighted_l2_distance(f, k, h) <= (weighted_l2_distance(f, g, h)
                                             + weighted_l2_distance(g, k, h) + 1e-12)


def test_kl_examples():
    p = DistanceHistogram.from_counts([1, 0], 1.0)
    q = DistanceHistogram.from_counts([1, 1], 1.0)
    assert kl_divergence(p, p) == 0.0
    assert kl_divergence(p, q) == pytest.approx(math.log(2), rel=1e-9)
    with pytest.raises(ValueError):
        kl_divergence(p, DistanceHistogram.from_counts([1, 1, 1], 1.0))


@given(st.lists(st.integers(0, 50), min_size=3, max_size=3).filter(any),
       st.lists(st.integers(0, 50), min_size=3, max_size=3).filter(any))
def test_kl_nonnegative(a, b):
    p = DistanceHistogram.from_counts(a, 1.0)
    q = DistanceHistogram.from_counts(b, 1.0)
    assert kl_divergence(p, q) >= -1e-12


def test_resimulation_identity_and_zero_coupling():
    spec = small_spec(R0=0.0)
    traj = simulate(spec, PHI, 500, 11, burn_in=100)
    rho = trajectory_histogram(traj, spec, 2.0, 20)
    same = resimulate_distribution(spec, PHI, 500, 11, 2.0, 20, burn_in=100)
    assert np.array_equal(rho.counts, same.counts)
    assert kl_divergence(rho, same) == 0.0
    # without coupling the differences random-walk: the mean distance grows
    free = resimulate_distribution(spec, ZeroCoupling(5.0), 500, 11, 2.0, 20, burn_in=100)
    assert np.sum(free.mass * free.centers) > np.sum(rho.mass * rho.centers)


# -- trajectory files ------------------------------------------------------

def test_trajectory_file_roundtrip(tmp_path):
    spec = small_spec()
    traj = simulate(spec, PHI, 64, 2 ** 40 + 5, burn_in=3)
    p = tmp_path / "t.bin"
    write_trajectory(p, traj)
    raw = p.read_bytes()
    assert raw[:4] == b"CPLT"
    back = read_trajectory(p)
    assert np.array_equal(back.states, traj.states)
    assert (back.n, back.d, back.T, back.seed, back.h) == (4, 2, 64, 2 ** 40 + 5, 0.01)
    assert back.spec_fingerprint == traj.spec_fingerprint
    p2 = tmp_path / "t2.bin"
    write_trajectory(p2, simulate(spec, PHI, 64, 2 ** 40 + 5, burn_in=3))
    assert p2.read_bytes() == raw


def test_trajectory_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"XXXX" + bytes(200))
    with pytest.raises(ValueError):
        read_trajectory(p)
