import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collmon.scattering import (
    AmplitudeTable,
    ChannelSet,
    ClosedChannelError,
    SWaveKMatrixModel,
    amplitude,
    channel_total_cross_section,
    forward_optical_cross_section,
    open_channels,
    optical_theorem_residual,
    pair_cross_section,
    random_k_model,
    s_matrix_at_energy,
)


def single(a, mass=1.0):
    return SWaveKMatrixModel(ChannelSet.from_energies([0.0]), np.array([[a]]), mass)


def test_channel_set_validation():
    with pytest.raises(ValueError):
        ChannelSet(("a", "a"), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        ChannelSet(("a",), np.array([0.0, 1.0]))
    ch = ChannelSet.from_energies([0.0, 1.0, 1.0 + 1e-12])
    assert not ch.nondegenerate
    assert ChannelSet.from_energies([0.0, 1.0]).nondegenerate
    assert ch.index("2") == 2 and ch.index(1) == 1
    with pytest.raises(KeyError):
        ch.index("x")


def test_model_validation():
    ch = ChannelSet.from_energies([0.0, 1.0])
    with pytest.raises(ValueError, match="symmetric"):
        SWaveKMatrixModel(ch, np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0)
    with pytest.raises(ValueError):
        SWaveKMatrixModel(ch, np.zeros((3, 3)), 1.0)


def test_open_channels():
    m = SWaveKMatrixModel(ChannelSet.from_energies([0.0, 2.0]), np.zeros((2, 2)), 1.0)
    assert open_channels(m, -1.0).indices.size == 0
    oc = open_channels(m, 1.0)
    assert list(oc.indices) == [0]
    p = 0.7
    oc = open_channels(single(0.1, mass=2.0), p**2 / 4.0)
    assert list(oc.indices) == [0] and abs(oc.momenta[0] - p) < 1e-15


def test_s_matrix_free_and_scalar():
    m = SWaveKMatrixModel(ChannelSet.from_energies([0.0, 0.5]), np.zeros((2, 2)), 1.0)
    idx, s = s_matrix_at_energy(m, 2.0)
    assert np.allclose(s, np.eye(2))
    a, e = 0.8, 0.9
    p = np.sqrt(2 * e)
    _, s = s_matrix_at_energy(single(a), e)
    assert abs(s[0, 0] - (1 - 1j * p * a) / (1 + 1j * p * a)) < 1e-15
    assert abs(abs(s[0, 0]) - 1) < 1e-15
    with pytest.raises(ClosedChannelError):
        s_matrix_at_energy(single(a), -0.1)


def test_s_matrix_unitary_symmetric(rng):
    for _ in range(20):
        m = random_k_model(rng, 3)
        for e in rng.uniform(m.channels.energies.max(), 6.0, size=20):
            _, s = s_matrix_at_energy(m, e)
            assert np.max(np.abs(s.conj().T @ s - np.eye(3))) < 1e-12
            assert np.max(np.abs(s - s.T)) < 1e-12


def test_amplitude_single_channel():
    a = 0.6
    m = single(a)
    for e in (1e-12, 0.01, 1.0, 7.0):
        p = np.sqrt(2 * e)
        f = amplitude(m, 0, 0, 0.3, e)
        assert abs(f - (-a / (1 + 1j * p * a))) < 1e-15
        _, s = s_matrix_at_energy(m, e)
        assert abs(f - (s[0, 0] - 1) / (2j * p)) < 1e-9
    assert abs(amplitude(m, 0, 0, 1.0, 1e-14) + a) < 1e-6
    assert amplitude(single(0.0), 0, 0, 1.0, 1.0) == 0


def test_amplitude_matches_s_matrix(rng):
    m = random_k_model(rng, 3)
    e = m.channels.energies.max() + 0.7
    idx, s = s_matrix_at_energy(m, e)
    p = open_channels(m, e).momenta
    for i, al in enumerate(idx):
        for j, al0 in enumerate(idx):
            expected = (s[i, j] - (i == j)) / (2j * np.sqrt(p[i] * p[j]))
            assert abs(amplitude(m, al, al0, 0.0, e) - expected) < 1e-12


def test_amplitude_closed_channel():
    m = SWaveKMatrixModel(ChannelSet.from_energies([0.0, 2.0]), np.eye(2), 1.0)
    with pytest.raises(ClosedChannelError):
        amplitude(m, 1, 0, 1.0, 1.0)
    with pytest.raises(ValueError):
        amplitude(m, 0, 0, 1.5, 1.0)


def test_pair_cross_section_single_channel():
    a = 0.6
    m = single(a)
    for e in (0.01, 0.5, 3.0):
        p = np.sqrt(2 * e)
        assert abs(pair_cross_section(m, 0, 0, e) / (4 * np.pi * a**2 / (1 + p**2 * a**2)) - 1) < 1e-12
    assert abs(pair_cross_section(m, 0, 0, 1e-16) / (4 * np.pi * a**2) - 1) < 1e-7
    assert pair_cross_section(single(0.0), 0, 0, 1.0) == 0.0


def test_total_cross_section_free():
    m = SWaveKMatrixModel(ChannelSet.from_energies([0.0, 1.0]), np.zeros((2, 2)), 1.0)
    assert channel_total_cross_section(m, 0, 2.0) == 0.0


def test_off_diagonal_coupling_against_brute_force():
    a12 = 0.4
    m = SWaveKMatrixModel(ChannelSet.from_energies([0.0, 0.3]),
                          np.array([[0.0, a12], [a12, 0.0]]), 1.0)
    e = 1.1
    idx, s = s_matrix_at_energy(m, e)
    p = open_channels(m, e).momenta
    # sum_alpha (p_alpha/p_0) 4 pi |S - I|^2 / (4 p_alpha p_0)
    brute = sum(np.pi * abs(s[i, 0] - (i == 0)) ** 2 / p[0] ** 2 for i in range(2))
    assert abs(channel_total_cross_section(m, 0, e) / brute - 1) < 1e-12
    # elastic part is second order in a12
    assert pair_cross_section(m, 0, 0, e) < pair_cross_section(m, 1, 0, e)


def test_optical_theorem(rng):
    for _ in range(20):
        m = random_k_model(rng, int(rng.integers(1, 5)))
        top = m.channels.energies.max()
        for e in rng.uniform(top + 1e-6, top + 10.0, size=20):
            for a0 in range(m.channels.n):
                assert optical_theorem_residual(m, a0, e) < 1e-10


def test_optical_theorem_below_upper_threshold():
    m = SWaveKMatrixModel(ChannelSet.from_energies([0.0, 1.0]), np.array([[0.3, 0.5], [0.5, -0.2]]), 1.0)
    assert optical_theorem_residual(m, 0, 0.5) < 1e-12


def test_reciprocity(rng):
    m = random_k_model(rng, 3)
    e = m.channels.energies.max() + 1.3
    p = open_channels(m, e).momenta
    for i in range(3):
        for j in range(3):
            lhs = amplitude(m, i, j, 0.0, e) * np.sqrt(p[i] * p[j])
            rhs = amplitude(m, j, i, 0.0, e) * np.sqrt(p[i] * p[j])
            assert abs(lhs - rhs) < 1e-12


def test_thresholds_are_finite():
    m = SWaveKMatrixModel(ChannelSet.from_energies([0.0, 1.0]), np.array([[0.3, 0.5], [0.5, -0.2]]), 1.0)
    for e in (1.0, np.nextafter(1.0, 2.0), np.nextafter(1.0, 0.0)):
        f, _ = m.amplitude_matrix(e)
        assert np.all(np.isfinite(f))
    below = pair_cross_section(m, 0, 0, np.nextafter(1.0, 0.0))
    above = pair_cross_section(m, 0, 0, np.nextafter(1.0, 2.0))
    assert abs(below - above) < 1e-6 * below


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(1e-8, 20))
def test_single_channel_unitarity(a, e):
    _, s = s_matrix_at_energy(single(a), e)
    assert abs(abs(s[0, 0]) - 1) < 1e-12


def _table_from_model(model, e_grid, cos_grid):
    n = model.channels.n
    amps = {}
    for a0 in range(n):
        col = model.column(a0, e_grid)  # [E, alpha]
        for al in range(n):
            amps[(model.channels.labels[al], model.channels.labels[a0])] = np.repeat(
                col[:, al:al + 1], cos_grid.size, axis=1)
    return AmplitudeTable(model.channels, e_grid, cos_grid, amps, model.mass)


def test_table_json_roundtrip(tmp_path, model2):
    t = _table_from_model(model2, np.linspace(0, 3, 7), np.linspace(-1, 1, 5))
    path = tmp_path / "t.json"
    path.write_text(json.dumps(t.to_json()))
    u = AmplitudeTable.load(path)
    assert np.array_equal(u._data, t._data)
    assert u.mass == t.mass and u.channels.labels == t.channels.labels


def test_table_interpolation_exact_on_nodes(model2):
    e = np.linspace(0, 3, 7)
    t = _table_from_model(model2, e, np.linspace(-1, 1, 5))
    for a0 in range(2):
        got = t.column(a0, e[1:], np.full(6, 0.25))
        assert np.allclose(got, model2.column(a0, e[1:]), atol=1e-15)
    with pytest.raises(ValueError, match="range"):
        t.column(0, np.array([4.0]))


def test_table_cos_rule_exact_for_cell_quadratics():
    t = AmplitudeTable(ChannelSet.from_energies([0.0]), np.array([0.0, 1.0]),
                       np.array([-1.0, -0.2, 0.5, 1.0]), {}, 1.0)
    x, w = t.cos_rule()
    assert abs(np.sum(w * x**2) - 2 / 3) < 1e-15
    assert abs(np.sum(w) - 2.0) < 1e-15


def test_table_validation():
    ch = ChannelSet.from_energies([0.0])
    with pytest.raises(ValueError):
        AmplitudeTable(ch, np.array([0.0, 1.0]), np.array([-0.5, 1.0]), {}, 1.0)
    with pytest.raises(ValueError):
        AmplitudeTable(ch, np.array([1.0, 0.0]), np.array([-1.0, 1.0]), {}, 1.0)
    with pytest.raises(ValueError):
        AmplitudeTable.from_json({"channels": [{"label": "0", "energy": 0.0}], "E_grid": [0, 1],
                                  "cos_theta_grid": [-1, 1], "amplitudes": {"bad": []}}, mass=1.0)
