"""Reparameterisation of ridge linear regression under groups of simple FDs.

For a group ``f -> S`` the determined indicators are linear images of the
determinant's indicator, ``x_c = R_c x_f``.  The model then only needs
parameters ``gamma`` over the non-determined components, with the penalty
``sum_w |gamma_w|^2 + <gamma_f, B^-1 gamma_f>`` where
``B = I + sum_c R_c' R_c``.  ``B`` is assembled sparsely from the map
``c-value -> {f-values}`` and factorised once with a sparse Cholesky.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from cvxopt import cholmod, matrix, spmatrix

from .catalog import FdSpec
from .errors import FdViolation, LayoutMismatch, MissingCooccurrence
from .gram import ComponentLayout
from .planner import Component
from .storage import Relation

RESIDUAL_BOUND = 1e-10


@dataclass(eq=False)
class FdGroup:
    determinant: str
    determined: tuple[str, ...]
    # c -> c-value -> sorted determinant values (the sparse R_c, grouped by c)
    maps: dict[str, dict[int, list[int]]]
    # c -> determinant value -> c-value
    image: dict[str, dict[int, int]]
    domain: list[int] = field(default_factory=list)
    B: sp.csc_matrix | None = None
    block: slice | None = None
    _factor: object = None

    @property
    def position(self) -> dict[int, int]:
        return {f: i for i, f in enumerate(self.domain)}

    def solve(self, v: np.ndarray) -> np.ndarray:
        """B^-1 v through the Cholesky factor, with a residual check."""
        v = np.asarray(v, dtype=np.float64)
        if v.size == 0:
            return v.copy()
        x = self._cholmod_solve(v)
        resid = v - self.B @ x
        if np.max(np.abs(resid)) > RESIDUAL_BOUND:
            x = x + self._cholmod_solve(resid)
            resid = v - self.B @ x
        if np.max(np.abs(resid)) > RESIDUAL_BOUND * max(1.0, float(np.max(np.abs(v)))):
            raise ArithmeticError(f"B solve residual {np.max(np.abs(resid)):.3g} too large")
        return x

    def _cholmod_solve(self, v: np.ndarray) -> np.ndarray:
        b = matrix(v.reshape(-1, 1))
        cholmod.solve(self._factor, b)
        return np.array(b, dtype=np.float64).ravel()


@dataclass(eq=False)
class FdContext:
    groups: list[FdGroup]
    layout: ComponentLayout | None = None

    @property
    def determined(self) -> set[str]:
        return {c for g in self.groups for c in g.determined}


def extract_fd_maps(relations: Iterable[Relation], fds: Sequence[FdSpec],
                    features: Iterable[str] | None = None) -> FdContext:
    """Read ``determined value -> determinant values`` maps from the data and
    verify that each FD actually holds.

    Only determined variables listed in ``features`` (default: all) enter
    the reparameterisation.
    """
    relations = list(relations)
    keep = None if features is None else set(features)
    groups = []
    for fd in fds:
        f = fd.determinant
        determined = tuple(c for c in fd.determined if keep is None or c in keep)
        maps: dict[str, dict[int, list[int]]] = {}
        image: dict[str, dict[int, int]] = {}
        for c in fd.determined:
            hosts = [r for r in relations if f in r.variables and c in r.variables]
            if not hosts:
                raise MissingCooccurrence(f"no relation holds both {f!r} and {c!r}")
            img: dict[int, int] = {}
            for rel in hosts:
                for fv, cv in zip(rel.columns[f].tolist(), rel.columns[c].tolist()):
                    prev = img.setdefault(fv, cv)
                    if prev != cv:
                        raise FdViolation(f"{f}={fv} maps to both {c}={prev} and {c}={cv} "
                                          f"in {rel.name}")
            if c not in determined:
                continue
            grouped: dict[int, list[int]] = {}
            for fv, cv in img.items():
                grouped.setdefault(cv, []).append(fv)
            maps[c] = {cv: sorted(fvs) for cv, fvs in sorted(grouped.items())}
            image[c] = img
        domain = sorted({fv for img in image.values() for fv in img})
        groups.append(FdGroup(f, determined, maps, image, domain))
    return FdContext(groups)


def bind_layout(context: FdContext, layout: ComponentLayout) -> FdContext:
    """Tie each group to its determinant block in ``layout``: the active
    domain of ``f`` becomes the block's keys, in block order."""
    context.layout = layout
    for g in context.groups:
        i = layout.by_name[g.determinant]
        g.domain = [k[0] for k in layout.keys[i]]
        g.block = slice(int(layout.offsets[i]), int(layout.offsets[i + 1]))
        for c in g.determined:
            g.image[c] = {fv: g.image[c][fv] for fv in g.domain if fv in g.image[c]}
            regrouped: dict[int, list[int]] = {}
            for fv, cv in g.image[c].items():
                regrouped.setdefault(cv, []).append(fv)
            g.maps[c] = {cv: sorted(fvs) for cv, fvs in sorted(regrouped.items())}
    return context


def build_B(context: FdContext) -> FdContext:
    """Assemble ``B = I + sum_c R_c' R_c`` per group and factorise it.

    For every determined value, all pairs of determinant values mapping to
    it get their entry incremented.
    """
    for g in context.groups:
        pos = g.position
        n = len(g.domain)
        rows, cols = list(range(n)), list(range(n))
        for c in g.determined:
            for fvs in g.maps[c].values():
                idx = [pos[fv] for fv in fvs if fv in pos]
                for j in idx:
                    for k in idx:
                        rows.append(j)
                        cols.append(k)
        B = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsc()
        B.sum_duplicates()
        g.B = B
        if n:
            coo = B.tocoo()
            A = spmatrix(coo.data.tolist(), coo.row.tolist(), coo.col.tolist(), (n, n))
            factor = cholmod.symbolic(A)
            cholmod.numeric(A, factor)
            g._factor = factor
    return context


def reduce_components(components: Sequence[Component], fds) -> list[Component]:
    """Drop every component that mentions a functionally determined variable."""
    groups = fds.groups if isinstance(fds, FdContext) else fds
    determined = {c for g in groups for c in g.determined}
    return [comp for comp in components if not determined & set(comp.variables)]


def penalty_and_grad(context: FdContext, gamma: np.ndarray) -> tuple[float, np.ndarray]:
    """``Omega(gamma)`` and ``1/2 dOmega/dgamma``."""
    if context.layout is not None and gamma.shape != (context.layout.size,):
        raise LayoutMismatch(f"gamma has shape {gamma.shape}, expected ({context.layout.size},)")
    grad = np.array(gamma, dtype=np.float64)
    omega = 0.0
    covered = np.zeros(gamma.shape[0], dtype=bool)
    for g in context.groups:
        block = gamma[g.block]
        solved = g.solve(block)
        omega += float(block @ solved)
        grad[g.block] = solved
        covered[g.block] = True
    rest = gamma[~covered]
    omega += float(rest @ rest)
    return omega, grad


def theta_from_gamma(context: FdContext, gamma: np.ndarray,
                     components: Sequence[Component]) -> tuple[ComponentLayout, np.ndarray]:
    """Map reduced parameters back to every original LR component.

    Non-group blocks copy over; the determinant block becomes ``B^-1 gamma_f``
    and each determined block ``R_c B^-1 gamma_f``.
    """
    layout = context.layout
    solved = {g.determinant: g.solve(gamma[g.block]) for g in context.groups}
    owner = {c: g for g in context.groups for c in g.determined}
    keys, blocks = [], []
    for comp in components:
        if comp.name in layout.by_name:
            i = layout.by_name[comp.name]
            keys.append(layout.keys[i])
            if comp.name in solved:
                blocks.append(solved[comp.name])
            else:
                blocks.append(layout.block(gamma, i).copy())
            continue
        (c,) = comp.variables
        g = owner[c]
        pos = g.position
        cvals = list(g.maps[c])
        keys.append([(cv,) for cv in cvals])
        base = solved[g.determinant]
        blocks.append(np.array([sum(base[pos[fv]] for fv in g.maps[c][cv]) for cv in cvals]))
    full = ComponentLayout(components, keys)
    flat = np.concatenate(blocks) if blocks else np.zeros(0)
    return full, flat


def gamma_from_theta(context: FdContext, full: ComponentLayout, theta: np.ndarray) -> np.ndarray:
    """Forward reparameterisation: ``gamma_f = sum_{c in F} R_c' theta_c``."""
    layout = context.layout
    gamma = np.zeros(layout.size)
    for i, comp in enumerate(layout.components):
        gamma[layout.offsets[i]:layout.offsets[i + 1]] = full.block(theta, full.by_name[comp.name])
    for g in context.groups:
        pos = g.position
        for c in g.determined:
            if c not in full.by_name:
                continue
            j = full.by_name[c]
            cpos = full.index[j]
            theta_c = full.block(theta, j)
            out = gamma[g.block]
            for fv, cv in g.image[c].items():
                out[pos[fv]] += theta_c[cpos[(cv,)]]
    return gamma


def b_diagonals(context: FdContext) -> Mapping[str, np.ndarray]:
    return {g.determinant: g.B.diagonal() for g in context.groups}
