"""Numerical verification of conformal infinitesimal bendings of Euclidean submanifolds."""
__version__ = "0.1.0"

from .jets import MultiJet
from .geometry import (AmbientSpace, GeometryError, ImmersionChart, PointFrame, SearchConfig,
                       conformal_s_nullity, evaluate_frame)
from .gallery import BendingChart, ConformalKillingData, GalleryError, instantiate, list_gallery
from .bending import associated_pair, bending_residual, system_S_residual
from .triviality import closed_form_certificate, fit_triviality
from .flatforms import (IndefBilinearForm, IndefInnerSpace, PartialIsometry, build_theta,
                        decompose_flat, extend_isometry, rigidity_check)
from .lightcone import LightConeModel, hat_system_residual, lift_frame, psi_embed

__all__ = [
    "MultiJet", "AmbientSpace", "GeometryError", "ImmersionChart", "PointFrame", "SearchConfig",
    "conformal_s_nullity", "evaluate_frame", "BendingChart", "ConformalKillingData",
    "GalleryError", "instantiate", "list_gallery", "associated_pair", "bending_residual",
    "system_S_residual", "closed_form_certificate", "fit_triviality", "IndefBilinearForm",
    "IndefInnerSpace", "PartialIsometry", "build_theta", "decompose_flat", "extend_isometry",
    "rigidity_check", "LightConeModel", "hat_system_residual", "lift_frame", "psi_embed",
]
