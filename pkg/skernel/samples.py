"""Kernel samples and their CSV dumps, one row per (z, w) pair."""
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from core.exceptions import KernelError

CSV_COLUMNS = ('z_index', 'w_index', 'S', 'dS_dnu_z', 'dS_dnu_w', 'd2S_dnu_z_dnu_w')


@dataclass(eq=False)
class SKernelSample:
    """Kernel values on a grid of source points, with normal derivatives when both lie on a surface"""
    z_points: np.ndarray
    w_points: np.ndarray
    values: np.ndarray
    dS_dnu_z: Optional[np.ndarray] = None
    dS_dnu_w: Optional[np.ndarray] = None
    d2S_dnu_z_dnu_w: Optional[np.ndarray] = None
    method: str = 'direct'
    step: Optional[float] = None

    @property
    def shape(self):
        return self.values.shape

    def exchanged(self):
        """The sample seen with the roles of (z, gamma1) and (w, gamma2) swapped"""
        flipped = [None if m is None else -m.T for m in (self.dS_dnu_w, self.dS_dnu_z, self.d2S_dnu_z_dnu_w)]
        return SKernelSample(self.w_points, self.z_points, -self.values.T, *flipped, self.method, self.step)


def dump_sample(sample, path):
    path = Path(path)
    nz, nw = sample.shape
    missing = np.full((nz, nw), np.nan)
    columns = [sample.values] + [missing if m is None else m for m in
                                 (sample.dS_dnu_z, sample.dS_dnu_w, sample.d2S_dnu_z_dnu_w)]
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(CSV_COLUMNS)
        for j in range(nz):
            for k in range(nw):
                writer.writerow([j, k, *('%.17g' % m[j, k] for m in columns)])
    return path


def load_sample(path, z_points=None, w_points=None):
    path = Path(path)
    try:
        with path.open(newline='') as handle:
            reader = csv.DictReader(handle)
            rows = list(reader)
    except OSError as exc:
        raise KernelError(f'cannot read kernel sample {path}: {exc}', key='skernel.sample') from exc
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise KernelError(f'{path} is not a kernel sample', key='skernel.sample')
    if not rows:
        raise KernelError(f'kernel sample {path} has no rows', key='skernel.sample')
    try:
        nz = 1 + max(int(row['z_index']) for row in rows)
        nw = 1 + max(int(row['w_index']) for row in rows)
        blocks = {name: np.full((nz, nw), np.nan) for name in CSV_COLUMNS[2:]}
        for row in rows:
            j, k = int(row['z_index']), int(row['w_index'])
            for name in blocks:
                blocks[name][j, k] = float(row[name])
    except (TypeError, ValueError) as exc:
        raise KernelError(f'malformed kernel sample {path}: {exc}', key='skernel.sample') from exc
    optional = {name: None if np.all(np.isnan(blocks[name])) else blocks[name] for name in CSV_COLUMNS[3:]}
    return SKernelSample(z_points, w_points, blocks['S'], **optional)
