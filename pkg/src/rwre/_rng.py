"""Counter-based hashing used for every random draw in the package.

Environments and walks never hold generator state.  A draw is the
splitmix64 finalizer applied to a key and a counter, so any site or step
can be regenerated in isolation and in any order.  The Python and numba
versions below must stay bit-identical; ``tests/test_rng.py`` checks this.
"""

import hashlib

import numba as nb
import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# stream roles for seed derivation
ROLE_ENV = 1
ROLE_WALK1 = 2
ROLE_WALK2 = 3

# coordinate offset applied before hashing so negative ints become positive
COORD_OFFSET = 1 << 32


def mix64(z):
    z &= MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


def combine(key, value):
    """Fold an unsigned integer ``value`` into ``key``."""
    return mix64((key ^ mix64((value + GOLDEN) & MASK)) & MASK)


def label_hash(label):
    """Stable 64-bit hash of a string label."""
    digest = hashlib.blake2b(label.encode("utf8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(master_seed, *parts):
    """Splittable seed derivation: hash of the master seed and a path of parts.

    Parts may be non-negative ints or strings (experiment kind, role names).
    """
    key = mix64((master_seed + GOLDEN) & MASK)
    for part in parts:
        if isinstance(part, str):
            part = label_hash(part)
        key = combine(key, int(part) & MASK)
    return key


def to_unit(z):
    return (z >> 11) * (1.0 / 9007199254740992.0)


# numba twins ---------------------------------------------------------------

_U_GOLDEN = np.uint64(GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


@nb.njit(cache=True, nogil=True, inline="always")
def nb_mix64(z):
    z = (z ^ (z >> _S30)) * _U_M1
    z = (z ^ (z >> _S27)) * _U_M2
    return z ^ (z >> _S31)


@nb.njit(cache=True, nogil=True, inline="always")
def nb_combine(key, value):
    return nb_mix64(key ^ nb_mix64(value + _U_GOLDEN))


@nb.njit(cache=True, nogil=True, inline="always")
def nb_unit(key, counter):
    """Uniform in [0, 1) for draw number ``counter`` of stream ``key``."""
    z = nb_mix64(key + (np.uint64(counter) + np.uint64(1)) * _U_GOLDEN)
    return np.float64(z >> _S11) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True, nogil=True, inline="always")
def nb_coord(c):
    return np.uint64(c + COORD_OFFSET)


@nb.njit(cache=True, nogil=True, inline="always")
def nb_site_key(seed, c0, c1, c2):
    key = nb_combine(seed, nb_coord(c0))
    key = nb_combine(key, nb_coord(c1))
    return nb_combine(key, nb_coord(c2))


@nb.njit(cache=True, nogil=True, inline="always")
def nb_trial_key(base, trial, role):
    return nb_combine(nb_combine(base, np.uint64(trial)), np.uint64(role))


def unit(key, counter):
    z = mix64((key + (counter + 1) * GOLDEN) & MASK)
    return to_unit(z)


def site_key(seed, coords):
    """Python mirror of :func:`nb_site_key`; ``coords`` padded to length 3."""
    c = list(coords) + [0] * (3 - len(coords))
    key = seed
    for v in c:
        key = combine(key, v + COORD_OFFSET)
    return key


def trial_key(base, trial, role):
    return combine(combine(base, trial), role)
