import numpy as np
import pytest

from droopstab.config import LineSpec
from droopstab.network import assemble_network, build_incidence


def test_incidence_properties(ref_config):
    inc = build_incidence(ref_config.nodes, ref_config.lines)
    m, n = ref_config.n_lines, ref_config.n_nodes
    assert inc.J.shape == (m, n)
    np.testing.assert_array_equal(inc.J.sum(axis=1), 0.0)
    np.testing.assert_array_equal(np.abs(inc.J).sum(axis=1), 2.0)
    np.testing.assert_array_equal(inc.J, inc.J1 - inc.J2)
    assert np.all(inc.J1 >= 0) and np.all(inc.J2 >= 0)
    # connected graph: the Laplacian has a one-dimensional null space
    assert np.linalg.matrix_rank(inc.J.T @ inc.J) == n - 1


def test_descriptor_matrix_positive_definite(grid):
    E = grid.network.E
    np.testing.assert_allclose(E, E.T)
    assert np.linalg.eigvalsh(E).min() > 0


def test_network_shapes(grid, ref_config):
    m, n = ref_config.n_lines, ref_config.n_nodes
    net = grid.network
    assert net.A3.shape == (3 * m + n, 3 * m + n)
    assert net.B3.shape == (3 * m + n, n)
    assert len(net.state_names) == 3 * m + n


def test_two_node_line_is_passive(ref_config):
    """A single cable between two stations: all modes damped, dc gain = series resistance."""
    cfg = ref_config
    ln = LineSpec("1", "2", 100e3, 0.01273e-3, 0.9337e-6, 0.01274e-9)
    nodes = ("1", "2")
    sub = type(cfg)(nodes=nodes, lines=(ln,), converters=cfg.converters[:2], gains=cfg.gains[:2])
    net = assemble_network(build_incidence(nodes, [ln]), sub)
    # no path to ground: the common charge is a pure integrator, all else is damped
    lam = np.sort(np.linalg.eigvals(net.A3).real)
    assert abs(lam[-1]) < 1e-9 * np.abs(lam).max()
    assert lam[-2] < 0
    # 1 A injected at node 1 and drawn at node 2 flows through the cable
    R = ln.resistance
    v1 = 400e3
    x = np.array([1.0, 1.0, v1 - R / 2, v1, v1 - R])
    dx = net.derivative(x, np.array([-1.0, 1.0]))
    np.testing.assert_allclose(dx, 0.0, atol=1e-6)


def test_singular_descriptor_rejected(ref_config):
    # two parallel cables with vanishing inductance: the reactors alone
    # cannot make the four half-line currents independent
    ln = LineSpec("1", "2", 100e3, 1e-5, 1e-30, 1e-11)
    nodes = ("1", "2")
    cfg = ref_config
    sub = type(cfg)(nodes=nodes, lines=(ln, ln), converters=cfg.converters[:2], gains=cfg.gains[:2])
    with pytest.raises(ValueError, match="singular"):
        assemble_network(build_incidence(nodes, [ln, ln]), sub)
