"""Mixed quasi-reversibility for the 2D Laplace Cauchy problem.

P1 finite elements on polygons, corner spectra of the regularized
operator pencil, 1D symbol estimates and (epsilon, h, delta) sweeps.
"""

from qrcauchy.geometry import (
    CornerKind,
    CornerRecord,
    ExponentReport,
    GeometryError,
    PolygonSpec,
    Tag,
    classify_corners,
    regularity_exponent,
)
from qrcauchy.mesh import MeshError, TriMesh, generate_structured, read_mesh, refine_uniform, write_mesh
from qrcauchy.fem import FeFunction, assemble_mass, assemble_stiffness, error_norms
from qrcauchy.qr import QRSolution, QRSystem, assemble_qr_cauchy, assemble_qr_source, solve
from qrcauchy.spectrum import PencilParams, biorthogonality_matrix, eigenvalues, singularity_census
from qrcauchy.experiments import SweepConfig, SweepReport, fit_rate, run_sweep

__all__ = [
    "CornerKind",
    "FeFunction",
    "PencilParams",
    "QRSolution",
    "QRSystem",
    "SweepConfig",
    "SweepReport",
    "assemble_mass",
    "assemble_qr_cauchy",
    "assemble_qr_source",
    "assemble_stiffness",
    "biorthogonality_matrix",
    "eigenvalues",
    "error_norms",
    "fit_rate",
    "run_sweep",
    "singularity_census",
    "solve",
    "CornerRecord",
    "ExponentReport",
    "GeometryError",
    "MeshError",
    "PolygonSpec",
    "Tag",
    "TriMesh",
    "classify_corners",
    "generate_structured",
    "read_mesh",
    "refine_uniform",
    "regularity_exponent",
    "write_mesh",
]

__version__ = "0.1.0"
