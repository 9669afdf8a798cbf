"""Density-equalizing quasiconformal flattening of triangle meshes onto circular domains."""

from .beltrami import beltrami_from_planar_map, beltrami_from_surface_map, chop, lbs_reconstruct
from .density import assemble_operators, population_from_spec
from .driver import IterationReport, SolverConfig, metrics_report, run_deq, run_ldeq
from .flatten import disk_conformal, koebe_circular_domain, normalize_domain
from .mesh import CircularDomainSpec, LandmarkSet, TriangleMesh, count_flips, extract_boundaries, load_obj, save_obj

__all__ = [
    "CircularDomainSpec", "IterationReport", "LandmarkSet", "SolverConfig", "TriangleMesh",
    "assemble_operators", "beltrami_from_planar_map", "beltrami_from_surface_map", "chop", "count_flips",
    "disk_conformal", "extract_boundaries", "koebe_circular_domain", "lbs_reconstruct", "load_obj",
    "metrics_report", "normalize_domain", "population_from_spec", "run_deq", "run_ldeq", "save_obj",
]
__version__ = "0.1.0"
