"""TPFA admissible meshes and their discrete calculus.

A mesh carries cells (centers, measures) and internal edges. Each internal
edge sigma = K|L stores its measure ``m_sigma``, the center distance
``d_sigma = |x_L - x_K|``, the center-to-edge-midpoint distances ``d_K``,
``d_L`` and the reconstruction weights ``lam_K = d_K/d_sigma``,
``lam_L = d_L/d_sigma``.

Field conventions (plain numpy arrays):

- cell field: one value per cell, shape ``(n_cells,)``
- edge field: one value per internal edge, shape ``(n_edges,)``
- flux field: one value per internal edge, oriented K -> L with K the lower
  cell index; the opposite flux is implicitly the negative, so
  conservativity holds by representation.

Three inner products are available: cells ``sum a b m_K``, edges
``sum u v m_sigma d_sigma`` and fluxes ``sum F G m_sigma d_sigma`` (the
oriented single-scalar form of the conservative-flux pairing).

Meshes are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    """Invalid mesh construction parameters or malformed mesh data."""


@dataclass
class Mesh:
    """TPFA mesh: cells, internal edges and precomputed sparse operators.

    Treat instances as immutable; all derived operators are assembled once
    in ``__post_init__``.
    """

    dim: int
    centers: np.ndarray        # (n_cells, dim) cell centers
    cell_measures: np.ndarray  # (n_cells,) m_K
    edge_cells: np.ndarray     # (n_edges, 2) int, [K, L] with K < L
    edge_measures: np.ndarray  # (n_edges,) m_sigma
    edge_distances: np.ndarray  # (n_edges,) d_sigma
    d_K: np.ndarray            # (n_edges,) distance center K to edge midpoint
    d_L: np.ndarray            # (n_edges,) same for L

    lam_K: np.ndarray = field(init=False)
    lam_L: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.cell_measures = np.asarray(self.cell_measures, dtype=float)
        self.edge_cells = np.asarray(self.edge_cells, dtype=int).reshape(-1, 2)
        self.edge_measures = np.asarray(self.edge_measures, dtype=float)
        self.edge_distances = np.asarray(self.edge_distances, dtype=float)
        self.d_K = np.asarray(self.d_K, dtype=float)
        self.d_L = np.asarray(self.d_L, dtype=float)
        self._validate()
        self.lam_K = self.d_K / self.edge_distances
        self.lam_L = 1.0 - self.lam_K  # weights sum to one exactly
        self._assemble_operators()

    # -- construction checks -------------------------------------------------

    def _validate(self) -> None:
        if self.dim not in (1, 2):
            raise MeshError(f"only 1D and 2D meshes are supported, got dim={self.dim}")
        if np.any(self.cell_measures <= 0):
            raise MeshError("all cell measures must be positive")
        if self.n_edges:
            if np.any(self.edge_measures <= 0) or np.any(self.edge_distances <= 0):
                raise MeshError("all edge measures and distances must be positive")
            if np.any(self.d_K <= 0) or np.any(self.d_L <= 0):
                raise MeshError("center-to-edge distances must be positive")
            K, L = self.edge_cells[:, 0], self.edge_cells[:, 1]
            if np.any(K == L):
                raise MeshError("self-edges are not allowed")
            if np.any(K < 0) or np.any(L >= self.n_cells):
                raise MeshError("edge cell index out of range")
            pairs = {tuple(sorted(p)) for p in self.edge_cells.tolist()}
            if len(pairs) != self.n_edges:
                raise MeshError("duplicate internal edge")

    # -- basic queries --------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return self.cell_measures.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_cells.shape[0]

    @property
    def total_volume(self) -> float:
        return float(self.cell_measures.sum())

    @property
    def h(self) -> float:
        """Mesh size: the largest cell diameter."""
        return float(self._diameters.max())

    # -- operator assembly ----------------------------------------------------

    def _assemble_operators(self) -> None:
        n, e = self.n_cells, self.n_edges
        K, L = self.edge_cells[:, 0], self.edge_cells[:, 1]
        idx = np.arange(e)
        m_sig, d_sig = self.edge_measures, self.edge_distances
        m_cell = self.cell_measures

        # divergence: (div F)_K = (1/m_K) sum_{sigma in Sigma_K} F_{K,sigma} m_sigma
        rows = np.concatenate([K, L])
        cols = np.concatenate([idx, idx])
        vals = np.concatenate([m_sig / m_cell[K], -m_sig / m_cell[L]])
        self.div_mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, e))

        # gradient: (grad a)_{K,sigma} = (a_L - a_K)/d_sigma
        rows = np.concatenate([idx, idx])
        cols = np.concatenate([K, L])
        vals = np.concatenate([-1.0 / d_sig, 1.0 / d_sig])
        self.grad_mat = sp.csr_matrix((vals, (rows, cols)), shape=(e, n))

        # centered reconstruction and its adjoint w.r.t. the two inner products
        vals = np.concatenate([self.lam_K, self.lam_L])
        self.recon_mat = sp.csr_matrix((vals, (rows, cols)), shape=(e, n))
        rows = np.concatenate([K, L])
        cols = np.concatenate([idx, idx])
        vals = np.concatenate(
            [self.lam_K * m_sig * d_sig / m_cell[K], self.lam_L * m_sig * d_sig / m_cell[L]]
        )
        self.recon_adj_mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, e))

        if self.dim == 1:
            self._diameters = self.cell_measures.copy()
        else:
            # square-cell proxy, exact for Cartesian builders which override it
            self._diameters = np.sqrt(2.0 * self.cell_measures)

    # -- discrete calculus ----------------------------------------------------

    def check_cell_field(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if a.shape != (self.n_cells,):
            raise ValueError(f"cell field has shape {a.shape}, expected ({self.n_cells},)")
        return a

    def check_edge_field(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_edges,):
            raise ValueError(f"edge field has shape {u.shape}, expected ({self.n_edges},)")
        return u

    def divergence(self, F: np.ndarray) -> np.ndarray:
        """Cell-wise divergence of a conservative flux field."""
        return self.div_mat @ self.check_edge_field(F)

    def gradient(self, a: np.ndarray) -> np.ndarray:
        """Two-point edge gradient, oriented K -> L."""
        return self.grad_mat @ self.check_cell_field(a)

    def reconstruct(self, a: np.ndarray) -> np.ndarray:
        """Weighted arithmetic average of the two adjacent cell values."""
        return self.recon_mat @ self.check_cell_field(a)

    def reconstruct_adjoint(self, u: np.ndarray) -> np.ndarray:
        """Adjoint of ``reconstruct`` w.r.t. the cell and edge inner products."""
        return self.recon_adj_mat @ self.check_edge_field(u)

    def ip_cells(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.dot(self.check_cell_field(a) * self.cell_measures, self.check_cell_field(b)))

    def ip_edges(self, u: np.ndarray, v: np.ndarray) -> float:
        w = self.edge_measures * self.edge_distances
        return float(np.dot(self.check_edge_field(u) * w, self.check_edge_field(v)))

    def ip_fluxes(self, F: np.ndarray, G: np.ndarray) -> float:
        # oriented representation: (F_K G_K + F_L G_L) m d / 2 = F G m d
        return self.ip_edges(F, G)

    def cell_integral(self, a: np.ndarray) -> float:
        """Total of a cell field against the cell measures, <a, 1>."""
        return float(np.dot(self.check_cell_field(a), self.cell_measures))


# -- public operation wrappers (functional API) --------------------------------


def divergence(mesh: Mesh, F: np.ndarray) -> np.ndarray:
    return mesh.divergence(F)


def gradient(mesh: Mesh, a: np.ndarray) -> np.ndarray:
    return mesh.gradient(a)


def reconstruct(mesh: Mesh, a: np.ndarray) -> np.ndarray:
    return mesh.reconstruct(a)


def reconstruct_adjoint(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    return mesh.reconstruct_adjoint(u)


def inner_product(mesh: Mesh, space: str, a: np.ndarray, b: np.ndarray) -> float:
    """Inner product in one of the three discrete spaces.

    ``space`` is one of ``"cells"``, ``"edges"`` or ``"fluxes"``.
    """
    if space == "cells":
        return mesh.ip_cells(a, b)
    if space == "edges":
        return mesh.ip_edges(a, b)
    if space == "fluxes":
        return mesh.ip_fluxes(a, b)
    raise ValueError(f"unknown inner product space {space!r}")


# -- mesh builders --------------------------------------------------------------


def build_interval_mesh(n_cells: int, interval: tuple[float, float]) -> Mesh:
    """Uniform 1D mesh on ``[a, b]`` with ``n_cells`` cells.

    Edge conventions in 1D: the edge "measure" is 1 (a point), the center
    distance equals the cell width and the reconstruction weights are 1/2.
    """
    a, b = float(interval[0]), float(interval[1])
    if n_cells < 1:
        raise MeshError("n_cells must be >= 1")
    if not b > a:
        raise MeshError(f"invalid interval [{a}, {b}]")
    h = (b - a) / n_cells
    centers = a + h * (np.arange(n_cells) + 0.5)
    edges = np.column_stack([np.arange(n_cells - 1), np.arange(1, n_cells)])
    n_e = n_cells - 1
    return Mesh(
        dim=1,
        centers=centers[:, None],
        cell_measures=np.full(n_cells, h),
        edge_cells=edges,
        edge_measures=np.ones(n_e),
        edge_distances=np.full(n_e, h),
        d_K=np.full(n_e, h / 2),
        d_L=np.full(n_e, h / 2),
    )


def build_cartesian_mesh(
    nx: int, ny: int, rectangle: tuple[float, float, float, float]
) -> Mesh:
    """Axis-aligned Cartesian grid on ``[a, b] x [c, d]``.

    Cell centers are the centroids, so edge orthogonality holds by
    construction and the distance weights reduce to 1/2.
    """
    a, b, c, d = (float(v) for v in rectangle)
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be >= 1")
    if not (b > a and d > c):
        raise MeshError(f"degenerate rectangle [{a},{b}]x[{c},{d}]")
    hx, hy = (b - a) / nx, (d - c) / ny
    xs = a + hx * (np.arange(nx) + 0.5)
    ys = c + hy * (np.arange(ny) + 0.5)
    # cell index: K = ix + nx*iy (x fastest)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    centers = np.column_stack([X.ravel(), Y.ravel()])

    edge_cells, m_sig, d_sig = [], [], []
    for iy in range(ny):
        for ix in range(nx - 1):
            k = ix + nx * iy
            edge_cells.append((k, k + 1))
            m_sig.append(hy)
            d_sig.append(hx)
    for iy in range(ny - 1):
        for ix in range(nx):
            k = ix + nx * iy
            edge_cells.append((k, k + nx))
            m_sig.append(hx)
            d_sig.append(hy)
    n_e = len(edge_cells)
    edge_cells_arr = np.array(edge_cells, dtype=int).reshape(n_e, 2)
    d_sig_arr = np.array(d_sig)
    mesh = Mesh(
        dim=2,
        centers=centers,
        cell_measures=np.full(nx * ny, hx * hy),
        edge_cells=edge_cells_arr,
        edge_measures=np.array(m_sig),
        edge_distances=d_sig_arr,
        d_K=d_sig_arr / 2,
        d_L=d_sig_arr / 2,
    )
    mesh._diameters = np.full(nx * ny, float(np.hypot(hx, hy)))
    return mesh


# -- plain-text mesh files -------------------------------------------------------
#
# Format: header line "d n_cells n_edges", one line per cell "x [y] m_K",
# one line per edge "K L m_sigma d_sigma d_Ksigma d_Lsigma".


def load_mesh_file(path: str) -> Mesh:
    """Load an externally generated admissible mesh from a plain-text file."""
    with open(path, "r", encoding="utf-8") as fh:
        tokens = [line.split() for line in fh if line.strip() and not line.startswith("#")]
    if not tokens:
        raise MeshError(f"empty mesh file {path}")
    try:
        dim, n_cells, n_edges = (int(v) for v in tokens[0])
        cell_rows = tokens[1 : 1 + n_cells]
        edge_rows = tokens[1 + n_cells : 1 + n_cells + n_edges]
        if len(cell_rows) != n_cells or len(edge_rows) != n_edges:
            raise MeshError(f"truncated mesh file {path}")
        centers = np.array([[float(v) for v in row[:dim]] for row in cell_rows])
        measures = np.array([float(row[dim]) for row in cell_rows])
        edges = np.array([[int(row[0]), int(row[1])] for row in edge_rows], dtype=int)
        ed = np.array([[float(v) for v in row[2:6]] for row in edge_rows])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    if n_edges == 0:
        ed = np.zeros((0, 4))
        edges = np.zeros((0, 2), dtype=int)
    return Mesh(
        dim=dim,
        centers=centers,
        cell_measures=measures,
        edge_cells=edges,
        edge_measures=ed[:, 0],
        edge_distances=ed[:, 1],
        d_K=ed[:, 2],
        d_L=ed[:, 3],
    )


def save_mesh_file(mesh: Mesh, path: str) -> None:
    """Write a mesh in the plain-text format understood by ``load_mesh_file``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.dim} {mesh.n_cells} {mesh.n_edges}\n")
        for xk, mk in zip(mesh.centers, mesh.cell_measures):
            coords = " ".join(repr(float(c)) for c in xk[: mesh.dim])
            fh.write(f"{coords} {float(mk)!r}\n")
        for i in range(mesh.n_edges):
            K, L = mesh.edge_cells[i]
            fh.write(
                f"{K} {L} {float(mesh.edge_measures[i])!r} {float(mesh.edge_distances[i])!r} "
                f"{float(mesh.d_K[i])!r} {float(mesh.d_L[i])!r}\n"
            )
