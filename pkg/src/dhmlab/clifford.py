r"""
Clifford algebra of the flat plane acting on two-component spinors.

A spinor is any complex array whose *last* axis has length 2, so the same
functions act on a single spinor, on a spinor field of shape ``(nx, ny, 2)``
or on a spinor along a map of shape ``(nx, ny, K, 2)``.

The Clifford action of the orthonormal frame :math:`e_1, e_2` is represented
by :math:`g_1 = i\sigma_x`, :math:`g_2 = i\sigma_y`. Both are anti-Hermitian and
satisfy :math:`g_\alpha g_\beta + g_\beta g_\alpha = -2\delta_{\alpha\beta}`.
The real spinor metric is the real part of the Hermitian pairing, which makes
Clifford multiplication skew-adjoint:

.. math::

    \langle e_\alpha\cdot\xi, \eta\rangle = -\langle \xi, e_\alpha\cdot\eta\rangle.

The active basis lives in a :class:`~contextvars.ContextVar` so that tests and
the ``check`` command can swap in a deliberately broken basis without
threading it through every call.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class CliffordBasis:
    """Matrices representing Clifford multiplication by :math:`e_1, e_2`."""

    g1: np.ndarray
    g2: np.ndarray

    def matrix(self, alpha: int) -> np.ndarray:
        if alpha == 1:
            return self.g1
        if alpha == 2:
            return self.g2
        raise ValueError(f"basis direction must be 1 or 2, got {alpha!r}")


def _default_basis() -> CliffordBasis:
    sigma_x = np.array([[0, 1], [1, 0]], dtype=complex)
    sigma_y = np.array([[0, -1j], [1j, 0]], dtype=complex)
    g1 = 1j * sigma_x
    g2 = 1j * sigma_y
    g1.setflags(write=False)
    g2.setflags(write=False)
    return CliffordBasis(g1, g2)


DEFAULT_BASIS = _default_basis()

_active_basis: contextvars.ContextVar[CliffordBasis] = contextvars.ContextVar(
    "dhmlab_clifford_basis", default=DEFAULT_BASIS
)


def active_basis() -> CliffordBasis:
    return _active_basis.get()


@contextlib.contextmanager
def use_basis(basis: CliffordBasis) -> Iterator[CliffordBasis]:
    """Temporarily replace the Clifford basis (fault injection hook)."""
    token = _active_basis.set(basis)
    try:
        yield basis
    finally:
        _active_basis.reset(token)


def spinor(c0: complex, c1: complex) -> np.ndarray:
    return np.array([c0, c1], dtype=complex)


def clifford_mul(alpha: int, xi: np.ndarray) -> np.ndarray:
    """Apply :math:`e_\\alpha\\cdot` to every spinor in *xi* (last axis)."""
    g = active_basis().matrix(alpha)
    xi = np.asarray(xi, dtype=complex)
    # g @ xi on the trailing axis, written out to stay cheap on large fields
    out = np.zeros_like(xi)
    for a in range(2):
        for b in range(2):
            if g[a, b] != 0:
                out[..., a] += g[a, b] * xi[..., b]
    return out


def spinor_inner(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Real spinor metric, contracted over the last axis."""
    xi = np.asarray(xi)
    eta = np.asarray(eta)
    return (xi.real * eta.real + xi.imag * eta.imag).sum(axis=-1)


def vector_clifford(v, xi: np.ndarray) -> np.ndarray:
    """Clifford product :math:`(v_1 e_1 + v_2 e_2)\\cdot\\xi`.

    *v* is a pair ``(v1, v2)`` whose entries broadcast against ``xi[..., 0]``.
    """
    v1, v2 = v
    v1 = np.asarray(v1)[..., None]
    v2 = np.asarray(v2)[..., None]
    return v1 * clifford_mul(1, xi) + v2 * clifford_mul(2, xi)
