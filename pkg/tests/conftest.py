import numpy as np
import pytest

from convdysat.config import TOY_CONFIG, load_config
from convdysat.graph import build_snapshots, graph_from_edges, read_edge_list
from convdysat.model import ModelConfig, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def path_graph():
    """4 nodes, 3 steps; one more path link per step, plus a chord from step 2."""
    return graph_from_edges(
        [[(0, 1)], [(0, 1), (1, 2), (0, 3)], [(0, 1), (1, 2), (2, 3), (0, 3)]],
        4,
    )


@pytest.fixture
def tiny_cfg():
    return ModelConfig(structural_dims=(4,), structural_heads=2, temporal_dim=4, temporal_heads=2)


@pytest.fixture
def tiny_params(tiny_cfg, path_graph):
    return init_params(tiny_cfg, path_graph.node_count, path_graph.num_steps, seed=3)


@pytest.fixture(scope="session")
def toy_graph():
    cfg = load_config(TOY_CONFIG)
    return build_snapshots(read_edge_list(cfg.data.path), cfg.data.steps, cfg.data.mode)


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = getattr(sys.modules.get("test_acceptance"), "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
