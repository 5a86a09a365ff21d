from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import settings

from funcfix.corpus import make_cabinet, write_cabinet
from funcfix.meshkit import box_mesh

settings.register_profile("funcfix", max_examples=60, deadline=None)
settings.load_profile("funcfix")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_cube():
    return box_mesh([0, 0, 0], [1, 1, 1], "cube")


@pytest.fixture(scope="session")
def cabinet():
    return make_cabinet(0)


@pytest.fixture(scope="session")
def cabinet_dir(tmp_path_factory, cabinet):
    d = tmp_path_factory.mktemp("cab")
    write_cabinet(cabinet, str(d))
    return str(d)


@pytest.fixture(scope="session")
def offset_cabinet_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("offcab")
    write_cabinet(make_cabinet(3, offset_axes=True), str(d))
    return str(d)


def manifest_of(d: str) -> str:
    return os.path.join(d, "manifest.json")
