import numba as nb
import numpy as np
from hypothesis import given, strategies as st
from scipy import stats

from rwre import _rng

u64 = st.integers(min_value=0, max_value=2 ** 64 - 1)
coord = st.integers(min_value=-(2 ** 20), max_value=2 ** 20)


@nb.njit
def _nb_unit(key, counter):
    return _rng.nb_unit(key, counter)


@nb.njit
def _nb_site(seed, c0, c1, c2):
    return _rng.nb_site_key(seed, c0, c1, c2)


@nb.njit
def _nb_trial(base, trial, role):
    return _rng.nb_trial_key(base, trial, role)


@given(u64, st.integers(min_value=0, max_value=10 ** 9))
def test_unit_python_matches_numba(key, counter):
    assert _rng.unit(key, counter) == _nb_unit(np.uint64(key), counter)


@given(u64, coord, coord, coord)
def test_site_key_python_matches_numba(seed, a, b, c):
    assert _rng.site_key(seed, (a, b, c)) == int(_nb_site(np.uint64(seed), a, b, c))


@given(u64, st.integers(min_value=0, max_value=10 ** 6), st.sampled_from([1, 2, 3]))
def test_trial_key_python_matches_numba(base, trial, role):
    assert _rng.trial_key(base, trial, role) == int(_nb_trial(np.uint64(base), trial, role))


def test_site_key_pads_short_coordinates():
    assert _rng.site_key(5, (3,)) == _rng.site_key(5, (3, 0, 0))


def test_derive_seed_is_a_pure_function_of_its_path():
    a = _rng.derive_seed(7, "velocity", 3)
    assert a == _rng.derive_seed(7, "velocity", 3)
    assert a != _rng.derive_seed(7, "velocity", 4)
    assert a != _rng.derive_seed(8, "velocity", 3)
    assert a != _rng.derive_seed(7, "condt", 3)


def test_roles_give_distinct_streams():
    base = _rng.derive_seed(0, "x")
    keys = {_rng.trial_key(base, t, r) for t in range(50) for r in (1, 2, 3)}
    assert len(keys) == 150


def test_unit_stream_is_uniform():
    u = np.array([_rng.unit(12345, i) for i in range(20000)])
    assert u.min() >= 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 1e-4
