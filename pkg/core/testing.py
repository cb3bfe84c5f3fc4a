"""Shared fixtures for the app test suites. Domains are cached per process."""
from functools import lru_cache

import numpy as np

from geometry.domain import GeometryParams, build_domain

SEED = 20240607


def disk_params(**overrides):
    values = dict(mesh_size=0.025, mesh_layers=2)
    values.update(overrides)
    return GeometryParams(**values)


def box_params(dimension=3, **overrides):
    values = dict(
        dimension=dimension,
        family='box' if dimension == 3 else 'square',
        mesh_size=1 / 48,
        rho0=0.4,
        M0=1.0,
        d0=0.3,
        rho1=0.12,
        rho2=0.095,
        h1=0.045,
        extent=1.0,
        d_size=0.08,
        dprime_size=0.18,
        dtilde_size=0.28,
        sigma0_fraction=0.5,
        bulge_depth=0.5,
        mesh_layers=2,
    )
    values.update(overrides)
    return GeometryParams(**values)


@lru_cache(maxsize=None)
def small_disk():
    return build_domain(disk_params())


@lru_cache(maxsize=None)
def small_square():
    return build_domain(box_params(dimension=2, mesh_size=0.02))


def rng(offset=0):
    return np.random.default_rng(SEED + offset)
