import numpy as np
import pytest

from allocnet.utils.corridor import CorridorSequence, HPolytope
from allocnet.utils.qp_builder import ProblemInstance


def box_instance(goal=(1.0, 0.0, 0.0), kappa=3, d_m=(4.0, 6.0, 8.0), w_t=17.5, **kwargs) -> ProblemInstance:
    """One box around the unit move along x, rest to rest."""
    corridors = CorridorSequence((HPolytope.from_box([-1.0, -1.0, -1.0], [2.0, 1.0, 1.0]),))
    return ProblemInstance.rest_to_rest(corridors, [0.0, 0.0, 0.0], goal, d_m, kappa=kappa, w_t=w_t, **kwargs)


def two_box_instance(kappa=3, **kwargs) -> ProblemInstance:
    corridors = CorridorSequence((HPolytope.from_box([-1.0, -1.0, -1.0], [3.0, 1.0, 1.0]),
                                  HPolytope.from_box([0.0, -1.0, -1.0], [4.0, 1.0, 1.0])))
    return ProblemInstance.rest_to_rest(corridors, [0.5, 0.0, 0.0], [2.5, 0.0, 0.0], (4.0, 6.0, 8.0),
                                        kappa=kappa, **kwargs)


def long_box_instance() -> ProblemInstance:
    """Five metres along x: infeasible for short durations."""
    corridors = CorridorSequence((HPolytope.from_box([-1.0, -1.0, -1.0], [6.0, 1.0, 1.0]),))
    return ProblemInstance.rest_to_rest(corridors, [0.0, 0.0, 0.0], [5.0, 0.0, 0.0], (4.0, 6.0))


def l_turn_instance(kappa=3) -> ProblemInstance:
    """Two thin boxes meeting at a right angle: the straight path cuts the corner, so corridor rows are active."""
    corridors = CorridorSequence((HPolytope.from_box([-0.3, -0.3, -0.3], [2.3, 0.3, 0.3]),
                                  HPolytope.from_box([1.7, -0.3, -0.3], [2.3, 2.3, 0.3])))
    return ProblemInstance.rest_to_rest(corridors, [0.0, 0.0, 0.0], [2.0, 2.0, 0.0], (4.0, 6.0, 8.0), kappa=kappa)


@pytest.fixture
def unit_move():
    return box_instance()


@pytest.fixture
def two_boxes():
    return two_box_instance()


@pytest.fixture
def long_move():
    return long_box_instance()


QUINTIC = np.array([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])


@pytest.fixture
def l_turn():
    return l_turn_instance()
