"""Discrete Dirichlet-to-Neumann operators and the trace-space operator norm."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, GramMismatch
from .forward import DirichletProblem, assemble_stiffness, gamma_values
from .mesh import Mesh, trace_matrices


@dataclass(frozen=True, eq=False)
class DtNOperator:
    """Dense boundary operator with its H^{1/2} and H^{-1/2} Gram matrices.

    ``signature`` identifies the boundary trace space (ordered boundary node
    coordinates); operators are comparable only when signatures agree.
    """

    matrix: np.ndarray
    gram_half: np.ndarray
    gram_dual: np.ndarray
    boundary_points: np.ndarray
    signature: str
    mesh_id: str = ""

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def _check(self, other):
        if self.signature != other.signature:
            raise GramMismatch("operators live on different boundary trace spaces")

    def __sub__(self, other):
        self._check(other)
        return DtNOperator(self.matrix - other.matrix, self.gram_half, self.gram_dual,
                           self.boundary_points, self.signature, f"{self.mesh_id}-{other.mesh_id}")

    def __add__(self, other):
        self._check(other)
        return DtNOperator(self.matrix + other.matrix, self.gram_half, self.gram_dual,
                           self.boundary_points, self.signature, f"{self.mesh_id}+{other.mesh_id}")

    def __mul__(self, c):
        return DtNOperator(float(c) * self.matrix, self.gram_half, self.gram_dual,
                           self.boundary_points, self.signature, self.mesh_id)

    __rmul__ = __mul__

    def with_matrix(self, A) -> "DtNOperator":
        return DtNOperator(np.asarray(A, dtype=float), self.gram_half, self.gram_dual,
                           self.boundary_points, self.signature, self.mesh_id)

    def to_dict(self) -> dict:
        return {"matrix": self.matrix.tolist(), "boundary_points": self.boundary_points.tolist(),
                "signature": self.signature, "mesh_id": self.mesh_id,
                "gram": "spectral (1 + Laplace-Beltrami)^(+-1/2) on the P1 boundary trace"}


def trace_grams(M, K):
    """H^{1/2} and H^{-1/2} Gram matrices from the (K, M) boundary eigenbasis.

    With K V = M V diag(lam) and V^T M V = I:
    gram_half = M V diag((1+lam)^(1/2)) V^T M and
    gram_dual = V diag((1+lam)^(-1/2)) V^T = gram_half^{-1}.
    """
    lam, V = sla.eigh(K, M)
    lam = np.maximum(lam, 0.0)  # the constant mode is zero up to roundoff
    MV = M @ V
    gh = (MV * np.sqrt(1 + lam)) @ MV.T
    gd = (V / np.sqrt(1 + lam)) @ V.T
    return 0.5 * (gh + gh.T), 0.5 * (gd + gd.T)


@lru_cache(maxsize=16)
def _grams_cached(signature, pts_bytes, n):
    return trace_grams(*trace_matrices(np.frombuffer(pts_bytes).reshape(n, 2)))


def mesh_grams(mesh: Mesh):
    pts = np.ascontiguousarray(mesh.nodes[mesh.boundary_nodes])
    return _grams_cached(mesh.boundary_signature, pts.tobytes(), len(pts))


class DtNSystem:
    """Stiffness, factorization and discrete harmonic extensions for one field.

    ``E`` (n_nodes x n_boundary) maps boundary data to its discrete harmonic
    extension; the DtN matrix is the Schur complement
    K_bb - K_bi K_ii^{-1} K_ib.
    """

    def __init__(self, mesh: Mesh, gamma, coeff=None):
        if mesh.chimney_halfwidth is not None:
            raise ValueError("DtN maps are defined on meshes of Omega without the chimney")
        self.mesh = mesh
        self.gamma = gamma_values(mesh, gamma)
        self.K = assemble_stiffness(mesh, gamma, coeff)
        self.problem = DirichletProblem(mesh, self.K)
        self._E = None
        self._op = None

    @property
    def boundary(self):
        return self.mesh.boundary_nodes

    @property
    def E(self):
        if self._E is None:
            nb = len(self.boundary)
            self._E, self.residual = self.problem.solve(np.eye(nb))
        return self._E

    def extend(self, f):
        u, _ = self.problem.solve(f)
        return u

    def operator(self) -> DtNOperator:
        if self._op is None:
            b = self.boundary
            p = self.problem
            X = self.E[p.i]
            K_bb = self.K[b][:, b].toarray()
            K_bi = self.K[b][:, p.i]
            lam = K_bb + np.asarray(K_bi @ X)
            gh, gd = mesh_grams(self.mesh)
            self._op = DtNOperator(lam, gh, gd, self.mesh.nodes[b].copy(),
                                   self.mesh.boundary_signature, self.mesh.mesh_id)
        return self._op


def dtn_matrix(mesh: Mesh, gamma, coeff=None) -> DtNOperator:
    return DtNSystem(mesh, gamma, coeff).operator()


def pairing(op: DtNOperator, f, g) -> float:
    """<Lambda f, g> = g^T Lambda f."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (op.n,) or g.shape != (op.n,):
        raise DimensionMismatch(f"expected vectors of length {op.n}, got {f.shape} and {g.shape}")
    return float(g @ (op.matrix @ f))


def star_norm(op: DtNOperator, other: DtNOperator | None = None) -> float:
    """Operator norm from the discrete H^{1/2} to the discrete H^{-1/2} trace space.

    Largest generalized singular value: sqrt of the top eigenvalue of
    (D^T G_dual D, G_half).  With ``other`` the difference op - other is used.
    """
    if other is not None:
        op = op - other
    D = op.matrix
    A = D.T @ op.gram_dual @ D
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    if not np.any(A):
        return 0.0
    top = sla.eigh(A, op.gram_half, eigvals_only=True, subset_by_index=[n - 1, n - 1])
    return float(np.sqrt(max(top[0], 0.0)))


def restrict_operator(fine: DtNOperator, P, coarse_template: DtNOperator) -> DtNOperator:
    """P^T Lambda_fine P on the coarse trace space (P: coarse-to-fine prolongation)."""
    return coarse_template.with_matrix(P.T @ fine.matrix @ P)
