import numpy as np
import pytest

from pufem.grid import CartesianGrid, DomainGeometry, classify_elements
from pufem.mesh import midpoint_rule, refined_cube_mesh
from pufem.space import PufemSpace


def cube_space(d=3, level=1, sigma=0.3, origin=0.0, P=1, rule=None):
    mesh = refined_cube_mesh(d, level)
    rule = midpoint_rule(mesh) if rule is None else rule
    geom = DomainGeometry.box([-0.5] * d, [0.5] * d, mesh)
    cls = classify_elements(CartesianGrid(sigma, origin, d), geom, points=rule.nodes)
    return mesh, rule, PufemSpace.build(cls, P)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
