from math import comb

import numpy as np
import pytest

from src.blue.groups import (
    GroupSystem,
    ModelGroup,
    build_system,
    enumerate_groups,
    group_cost,
    principal_submatrix,
    prolong,
    restrict,
)
from src.family.cost import CostModel


def test_canonical_order(cost):
    system = enumerate_groups(3, 2, cost)
    assert [str(g) for g in system.groups] == ["{1}", "{2}", "{3}", "{1,2}", "{1,3}", "{2,3}"]
    assert system.coupling == 2


@pytest.mark.parametrize("L, q", [(4, 1), (4, 2), (4, 3), (4, None), (6, 3)])
def test_number_of_groups(cost, L, q):
    system = enumerate_groups(L, q, cost)
    assert len(system) == sum(comb(L, j) for j in range(1, min(q or L, L) + 1))
    assert all(g.size <= (q or L) for g in system.groups)


def test_group_costs(cost):
    system = enumerate_groups(2, None, cost)
    np.testing.assert_allclose(system.costs, [1.0, 4.0, 5.0])
    assert group_cost(ModelGroup.of(1, 2), CostModel.from_table([1, 4])) == 5.0


def test_labels_round_trip():
    group = ModelGroup((1, 3, 4))
    assert group.label == "1;3;4"
    assert ModelGroup.from_label(group.label) == group
    assert ModelGroup.of(4, 1, 3) == group
    np.testing.assert_array_equal(group.positions, [0, 2, 3])


@pytest.mark.parametrize("indices", [(), (0, 1), (2, 2), (3, 1)])
def test_invalid_groups(indices):
    with pytest.raises(ValueError):
        ModelGroup(indices)


def test_system_validation(cost):
    with pytest.raises(ValueError):
        build_system([ModelGroup.of(1), ModelGroup.of(1)], cost, 2)
    with pytest.raises(ValueError):
        build_system([ModelGroup.of(1, 3)], cost, 2)
    with pytest.raises(ValueError):
        GroupSystem((ModelGroup.of(1, 2),), [5.0], 1, 2)


def test_enumeration_limits(cost):
    with pytest.raises(ValueError):
        enumerate_groups(21, 2, cost)
    with pytest.raises(ValueError):
        enumerate_groups(3, 0, cost)


def test_lookup(cost):
    system = enumerate_groups(3, 2, cost)
    assert system.index(ModelGroup.of(2, 3)) == 5
    assert system.find(ModelGroup.of(1, 2, 3)) is None
    assert system.singleton(2) == 1


def test_restriction_and_prolongation(random_spd):
    group = ModelGroup.of(1, 3)
    v = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(restrict(v, group), [1.0, 3.0])
    np.testing.assert_array_equal(prolong([5.0, 6.0], group, 3), [5.0, 0.0, 6.0])
    np.testing.assert_array_equal(principal_submatrix(random_spd, group), random_spd[np.ix_([0, 2], [0, 2])])
    with pytest.raises(ValueError):
        prolong([1.0], group, 3)
