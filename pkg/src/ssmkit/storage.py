"""File I/O: Matrix Market matrices and plain-text vectors.

Matrix Market is the exchange format for M, C, K because every FE package
can export it.  Forcing vectors are stored one value per line: either a
single float column (real) or two columns (real, imaginary).
"""

from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse as sp


def load_matrix(path):
    mat = scipy.io.mmread(str(path))
    return sp.csc_array(mat)


def save_matrix(path, mat):
    scipy.io.mmwrite(str(path), sp.coo_matrix(sp.csc_matrix(mat)))


def load_vector(path):
    """Read a dense vector file: one float per line, or two columns real/imag."""
    rows = []
    with open(str(path)) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith(("%", "#")):
                continue
            parts = line.split()
            if len(parts) == 1:
                rows.append(complex(float(parts[0])))
            elif len(parts) == 2:
                rows.append(complex(float(parts[0]), float(parts[1])))
            else:
                raise ValueError(f"vector file line has {len(parts)} columns: {line!r}")
    return np.asarray(rows, dtype=complex)


def save_vector(path, vec):
    vec = np.asarray(vec).reshape(-1)
    with open(str(path), "w") as fh:
        if np.iscomplexobj(vec) and np.any(vec.imag != 0):
            for v in vec:
                fh.write(f"{v.real:.17g} {v.imag:.17g}\n")
        else:
            for v in vec:
                fh.write(f"{np.real(v):.17g}\n")
