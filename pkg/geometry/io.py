"""Plain-text mesh dumps. Floats use %.17g so a dump reloads bit-exactly."""
import json
import logging
from pathlib import Path

import numpy as np

from core.exceptions import GeometryError
from .domain import BOUNDARY_TAGS, GeometryParams, MeshedDomain
from .mesh import SimplexMesh

logger = logging.getLogger(__name__)

MESH_HEADER = 'calderon-lab mesh 1'


def _row(values):
    return ' '.join('%.17g' % v for v in values)


def dump_mesh(domain, path):
    path = Path(path)
    mesh = domain.mesh
    lines = [
        MESH_HEADER,
        'params ' + json.dumps(domain.params.to_dict(), sort_keys=True),
        'marked_point ' + _row(domain.marked_point),
        'center ' + _row(domain.center),
        f'vertices {mesh.n_vertices} {mesh.dim}',
    ]
    lines.extend(_row(v) for v in mesh.vertices)
    lines.append(f'cells {mesh.n_cells}')
    lines.extend(' '.join(str(i) for i in cell) + f' {tag}' for cell, tag in zip(mesh.cells, domain.cell_tags))
    lines.append(f'facet_tags {len(BOUNDARY_TAGS)}')
    for tag in BOUNDARY_TAGS:
        ids = domain.facet_tags[tag]
        lines.append(f'{tag} {len(ids)}')
        lines.append(' '.join(str(i) for i in ids))
    path.write_text('\n'.join(lines) + '\n')
    logger.debug('Wrote mesh dump %s', path)
    return path


def load_mesh(path):
    path = Path(path)
    try:
        lines = iter(path.read_text().splitlines())
        if next(lines).strip() != MESH_HEADER:
            raise GeometryError(f'{path} is not a mesh dump')
        params = GeometryParams.from_dict(json.loads(next(lines).split(' ', 1)[1]))
        marked_point = np.array(next(lines).split()[1:], dtype=float)
        center = np.array(next(lines).split()[1:], dtype=float)
        _, count, dim = next(lines).split()
        vertices = np.array([next(lines).split() for _ in range(int(count))], dtype=float).reshape(-1, int(dim))
        count = int(next(lines).split()[1])
        table = np.array([next(lines).split() for _ in range(count)], dtype=np.int64)
        mesh = SimplexMesh(vertices, table[:, :-1])
        facet_tags = {}
        for _ in range(int(next(lines).split()[1])):
            tag, size = next(lines).split()
            ids = next(lines).split()
            facet_tags[tag] = np.array(ids, dtype=np.int64)
            if len(ids) != int(size):
                raise GeometryError(f'facet tag {tag} is truncated in {path}')
    except (StopIteration, ValueError, IndexError) as exc:
        if isinstance(exc, GeometryError):
            raise
        raise GeometryError(f'malformed mesh dump {path}: {exc}') from exc
    if len(facet_tags.get('Sigma', ())) and facet_tags['Sigma'].max() >= len(mesh.facets):
        raise GeometryError(f'facet ids in {path} do not match the mesh')
    return MeshedDomain(mesh, table[:, -1], facet_tags, marked_point, params, center)
