"""Per-vertex field dumps that sit next to a mesh dump."""
from pathlib import Path

import numpy as np

from core.exceptions import ConductivityError
from .fields import ConductivityField

FIELD_HEADER = 'calderon-lab field 1'


def dump_field(gamma, path):
    path = Path(path)
    lines = [
        FIELD_HEADER,
        f'name {gamma.name}',
        f'profile {gamma.profile}',
        'lambda %.17g' % gamma.lam,
        'E %.17g' % gamma.E,
        'E1 ' + ('none' if gamma.E1 is None else '%.17g' % gamma.E1),
        f'vertices {len(gamma.values)}',
    ]
    lines.extend('%.17g' % v for v in gamma.values)
    path.write_text('\n'.join(lines) + '\n')
    return path


def load_field(path, mesh):
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != FIELD_HEADER:
        raise ConductivityError(f'{path} is not a field dump')
    try:
        header = dict(line.split(' ', 1) for line in lines[1:7])
        count = int(header['vertices'])
        values = np.array(lines[7:7 + count], dtype=float)
        E1 = None if header['E1'] == 'none' else float(header['E1'])
        return ConductivityField(mesh, values, lam=float(header['lambda']), E=float(header['E']), E1=E1,
                                 name=header['name'], profile=header['profile'])
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConductivityError):
            raise
        raise ConductivityError(f'malformed field dump {path}: {exc}') from exc
