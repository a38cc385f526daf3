"""Boundary conductivity recovery from Dirichlet, Neumann and interior data."""

from .pointwise import (
    MeasurementTriple,
    ExponentPair,
    Nothing,
    Unique,
    Double,
    g_eval,
    g_roots,
    recover_candidates,
    cdii_closed_form,
    aet_closed_form,
)
from .forward import build_disk_mesh, solve_conductivity, boundary_triple, field_oracle, FieldOracle
from .synth import SampleSet, NoiseConfig, sample_boundary, tangential_A, add_noise
from .reconstruct import Bounds, algorithm1, algorithm2, evaluate

__version__ = "0.1.0"
