import math

import numpy as np
import pytest

from bohmdiff.config import reference_config
from bohmdiff.separator import classify_channel
from bohmdiff import vortices as V

# reference node positions around the theta_4 channel (nm)
THETA4_NODE_TARGETS = ((4505.7354, 2310.6028), (4507.1939, 2310.9549))
THETA4_QBAR = 78823


@pytest.fixture(scope="session")
def cfg():
    return reference_config()


def nearest_channel_node(cfg, q, target, q_bar):
    ch = classify_channel(cfg, q)
    cands = []
    for win in ((ch.theta_b, ch.theta_a), (ch.theta_a_prime, ch.theta_b_prime)):
        nodes, _ = V.find_nodal_points(cfg, win, q_bars=[q_bar])
        cands += nodes
    return min(cands, key=lambda n: math.hypot(n.z0 - target[0], n.R0 - target[1]))


@pytest.fixture(scope="session")
def theta4_nodes(cfg):
    return [nearest_channel_node(cfg, 4, t, THETA4_QBAR) for t in THETA4_NODE_TARGETS]


@pytest.fixture(scope="session")
def theta4_complexes(cfg, theta4_nodes):
    return [V.build_complex(cfg, n) for n in theta4_nodes]


@pytest.fixture(scope="session")
def theta4_manifolds(cfg, theta4_complexes):
    return [V.trace_manifolds(cfg, cx) for cx in theta4_complexes]


@pytest.fixture(scope="session")
def diffuse_complex(cfg):
    return V.build_complex(cfg, V.node_near_theta(cfg, 1.1))


def radial_unit(point):
    p = np.asarray(point, dtype=float)
    return p / np.hypot(*p)


def pytest_terminal_summary(terminalreporter):
    from _report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
