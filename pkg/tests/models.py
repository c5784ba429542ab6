"""Small models shared by the test modules."""
import numpy as np

from jumpchain.core import DiscreteEmission, IntensityModel, Trajectory
from jumpchain.ctbn import CtbnModel, CtbnNode

EMISSION = DiscreteEmission(np.array([[0.8, 0.2], [0.3, 0.7]]))


def symmetric(tmax=2.0, R=None, nu=(0.8, 0.2)):
    """2-state model with unit rates both ways."""
    return IntensityModel(np.array([[-1.0, 1.0], [1.0, -1.0]]), list(nu), 0.0, tmax, R=R)


def asymmetric(R=(2.0, 4.0)):
    return IntensityModel(np.array([[-1.0, 1.0], [2.0, -2.0]]), [0.5, 0.5], 0.0, 2.0, R=np.array(R))


def two_node_net(tmax=2.0):
    """a -> b, both binary."""
    a = CtbnNode("a", (0, 1), np.array([[[0, 1.0], [2.0, 0]]]))
    b = CtbnNode("b", (0, 1), np.array([[[0, 1.0], [1.0, 0]], [[0, 3.0], [0.5, 0]]]), parents=("a",))
    return CtbnModel([a, b], 0.0, tmax, [np.array([0.5, 0.5]), np.array([0.3, 0.7])])


def two_node_observed():
    return {1: Trajectory(0.0, 2.0, [0.5, 1.2], [0, 1, 0])}


def three_node_net(tmax=2.0, joint_nu=False):
    """c -> a -> b, (a, b) -> c: a cycle with a two-parent node."""
    a = CtbnNode("a", (0, 1), np.array([[[0, 1.0], [1.5, 0]], [[0, 2.0], [0.5, 0]]]), parents=("c",))
    b = CtbnNode("b", (0, 1), np.array([[[0, 0.5], [2.0, 0]], [[0, 2.0], [1.0, 0]]]), parents=("a",))
    c = CtbnNode("c", (0, 1), np.array([[[0, 1.0], [1.0, 0]], [[0, 3.0], [0.5, 0]],
                                         [[0, 0.5], [2.0, 0]], [[0, 1.5], [1.5, 0]]]), parents=("a", "b"))
    if joint_nu:
        nu = np.array([[[0.1, 0.2], [0.05, 0.15]], [[0.2, 0.1], [0.1, 0.1]]])
    else:
        nu = [np.array([0.6, 0.4]), np.array([0.5, 0.5]), np.array([0.3, 0.7])]
    return CtbnModel([a, b, c], 0.0, tmax, nu)


def three_node_observed():
    return {2: Trajectory(0.0, 2.0, [0.4, 1.1, 1.6], [1, 0, 1, 0])}
