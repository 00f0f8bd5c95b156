"""Vectorised concave envelopes along the ``i_0`` axis.

A grid function over ``m**(d+1)`` cells is viewed as an ``(m, S)`` array with
one column per slab ``(i_1, ..., i_d)`` (``S = m**d``, or 1 when ``d == 0``).
The envelope of each column on the nodes ``y`` is stored together with the
pair of hull vertices bracketing every node, which is all that is needed to
read off the two-point martingale kernel attaining the envelope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ColumnEnvelope:
    """Concave envelopes of the columns of an ``(m, S)`` array."""

    values: np.ndarray  # (m, S) envelope on the nodes
    left: np.ndarray  # (m, S) largest hull vertex <= node
    right: np.ndarray  # (m, S) smallest hull vertex >= node
    w_right: np.ndarray  # (m, S) weight on ``right`` in the bracketing pair

    @property
    def w_left(self) -> np.ndarray:
        return 1.0 - self.w_right


def hull_vertices(y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Boolean ``(m, S)`` mask of upper-hull vertices of each column of ``v``.

    Andrew's monotone chain run on all columns at once; collinear points are
    dropped, so the end nodes plus the strict corners remain.
    """
    m, S = v.shape
    cols = np.arange(S)
    stack = np.zeros((m, S), dtype=np.intp)
    top = np.zeros(S, dtype=np.intp)
    for i in range(m):
        while True:
            live = np.flatnonzero(top >= 2)
            if live.size == 0:
                break
            a = stack[top[live] - 2, live]
            b = stack[top[live] - 1, live]
            va, vb, vi = v[a, live], v[b, live], v[i, live]
            # b lies on or below the chord from a to i
            pop = (vb - va) * (y[i] - y[a]) <= (vi - va) * (y[b] - y[a])
            if not pop.any():
                break
            top[live[pop]] -= 1
        stack[top, cols] = i
        top += 1
    mask = np.zeros((m, S), dtype=bool)
    used = np.arange(m)[:, None] < top[None, :]
    mask[stack[used], np.broadcast_to(cols, (m, S))[used]] = True
    return mask


def column_envelope(y: np.ndarray, v: np.ndarray) -> ColumnEnvelope:
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    m, S = v.shape
    mask = hull_vertices(y, v)
    idx = np.arange(m)[:, None]
    left = np.maximum.accumulate(np.where(mask, idx, -1), axis=0)
    right = np.minimum.accumulate(np.where(mask, idx, m)[::-1], axis=0)[::-1]
    span = y[right] - y[left]
    w_right = np.divide(
        y[idx] - y[left], span, out=np.zeros((m, S)), where=right != left
    )
    cols = np.arange(S)[None, :]
    values = (1.0 - w_right) * v[left, cols] + w_right * v[right, cols]
    # a vertex keeps its own value exactly
    values = np.where(mask, v, values)
    return ColumnEnvelope(values, left, right, w_right)


def spread(env: ColumnEnvelope, inflow: np.ndarray) -> np.ndarray:
    """Push mass at nodes onto their bracketing hull vertices, per column.

    ``inflow[e, s]`` is mass sitting at node ``e`` of column ``s``; the result
    has the same total mass and the same mean in every column.
    """
    m, S = inflow.shape
    cols = np.arange(S)[None, :] * m
    out = np.bincount(
        (env.left + cols).ravel(), weights=(inflow * env.w_left).ravel(), minlength=m * S
    )
    out += np.bincount(
        (env.right + cols).ravel(), weights=(inflow * env.w_right).ravel(), minlength=m * S
    )
    return out.reshape((S, m)).T


def call_transform(y: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """``sum_j mass[j, s] * (y_j - y_i)^+`` for every node ``i`` and column ``s``."""
    payoff = np.maximum(y[None, :] - y[:, None], 0.0)
    return payoff @ mass
