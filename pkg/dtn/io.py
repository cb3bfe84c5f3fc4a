"""Dense operator dumps: dof ids, then the matrix and its H^{1/2} Gram row by row."""
from pathlib import Path

import numpy as np

from core.exceptions import OperatorError
from .operators import BoundaryOperator

OPERATOR_HEADER = 'calderon-lab operator 1'


def _rows(matrix):
    return [' '.join('%.17g' % v for v in row) for row in matrix]


def dump_operator(operator, path):
    path = Path(path)
    n = operator.size
    lines = [
        OPERATOR_HEADER,
        f'tag {operator.tag}',
        f'conductivity {operator.conductivity}',
        f'dofs {n}',
        ' '.join(str(i) for i in operator.dofs),
        f'matrix {n} {n}',
        *_rows(operator.matrix),
        f'gram {n} {n}',
        *_rows(operator.gram),
    ]
    path.write_text('\n'.join(lines) + '\n')
    return path


def load_operator(path):
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != OPERATOR_HEADER:
        raise OperatorError(f'{path} is not an operator dump')
    try:
        tag = lines[1].split(' ', 1)[1]
        conductivity = lines[2].split(' ', 1)[1]
        n = int(lines[3].split()[1])
        dofs = np.array(lines[4].split(), dtype=np.int64)
        matrix = np.array([row.split() for row in lines[6:6 + n]], dtype=float).reshape(n, n)
        gram = np.array([row.split() for row in lines[7 + n:7 + 2 * n]], dtype=float).reshape(n, n)
    except (IndexError, ValueError) as exc:
        raise OperatorError(f'malformed operator dump {path}: {exc}') from exc
    return BoundaryOperator(matrix, gram, dofs, tag, conductivity)
