"""Shared fixtures.

Mesh construction (icosphere subdivision, synthetic corpus generation) is the
slow part of the suite, so builds are cached per session and tests receive
fresh copies they are free to mutate.
"""

import numpy as np
import pytest

from matstyle import Mesh, SyntheticSpec, gen_synthetic, icosphere


def copy_mesh(m):
    out = Mesh(
        m.vertices.copy(),
        m.faces.copy(),
        {k: np.array(v, copy=True) for k, v in m.attributes.items()},
        metadata=dict(m.metadata),
    )
    return out


@pytest.fixture(scope="session")
def _icosphere_cache():
    cache = {}

    def get(subdivisions, radius=1.0):
        key = (subdivisions, radius)
        if key not in cache:
            cache[key] = icosphere(subdivisions, radius=radius)
        return cache[key]

    return get


@pytest.fixture
def make_icosphere(_icosphere_cache):
    """Factory returning a mutable copy of a cached icosphere."""

    def make(subdivisions, radius=1.0):
        return copy_mesh(_icosphere_cache(subdivisions, radius))

    return make


@pytest.fixture(scope="session")
def _synth_cache():
    cache = {}

    def get(seed, **kwargs):
        # repr is deterministic for the dataclass/tuple/scalar fields used
        # in specs and sidesteps unhashable values.
        key = (seed, repr(sorted(kwargs.items())))
        if key not in cache:
            cache[key] = gen_synthetic(SyntheticSpec(**kwargs), seed)
        return cache[key]

    return get


@pytest.fixture
def make_synthetic(_synth_cache):
    """Factory returning mutable copies of a cached (src, tar, gt) triple."""

    def make(seed, **kwargs):
        src, tar, gt = _synth_cache(seed, **kwargs)
        return copy_mesh(src), copy_mesh(tar), copy_mesh(gt)

    return make
