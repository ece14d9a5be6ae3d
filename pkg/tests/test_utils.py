import collections

import numpy as np
import pytest

from bhmmdiar import utils
from bhmmdiar import common


RelabelFixture = collections.namedtuple("RelabelFixture", ["labels", "expected"])


RELABEL_FIXTURES = [
    RelabelFixture([5, 5, 2, 9, 2], [0, 0, 1, 2, 1]),
    RelabelFixture([0, 1, 2], [0, 1, 2]),
    RelabelFixture(["b", "a", "b"], [0, 1, 0]),
    RelabelFixture([], []),
]


@pytest.mark.parametrize("fixture", RELABEL_FIXTURES)
def test_relabel_first_appearance(fixture):
    got = utils.relabel_first_appearance(fixture.labels)
    assert list(got) == fixture.expected


def test_logdet():
    mat = np.array([[4.0, 1.0], [1.0, 3.0]])
    assert utils.logdet(mat) == pytest.approx(np.log(11.0))


def test_positive_definite():
    assert utils.is_positive_definite(np.eye(3))
    assert not utils.is_positive_definite(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert not utils.is_positive_definite(np.ones((2, 2)))


def test_ensure_positive_definite():
    singular = np.ones((2, 2))
    fixed = utils.ensure_positive_definite(singular, 1e-6, "test covariance")
    np.testing.assert_allclose(fixed, singular + 1e-6 * np.eye(2))
    assert utils.is_positive_definite(fixed)

    zero = utils.ensure_positive_definite(np.zeros((2, 2)), 1e-6, "zero covariance")
    np.testing.assert_allclose(zero, 1e-6 * np.eye(2))

    with pytest.raises(common.NumericalError):
        utils.ensure_positive_definite(-np.eye(2), 1e-6, "negative covariance")


def test_fix_signs():
    vecs = np.array([[0.0, -1.0], [-2.0, 3.0]])
    np.testing.assert_array_equal(utils.fix_signs(vecs), [[0.0, 1.0], [2.0, -3.0]])
    assert vecs[1, 0] == -2.0
