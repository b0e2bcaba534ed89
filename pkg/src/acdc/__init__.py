"""Factorized in-database training of ridge regression, degree-2 polynomial
regression and factorization machines over normalized relations."""
from .catalog import Catalog, ModelSpec, load_config, parse_config, validate_catalog
from .errors import AcdcError
from .pipeline import prepare, train

__all__ = ["AcdcError", "Catalog", "ModelSpec", "load_config", "parse_config", "prepare",
           "train", "validate_catalog"]
__version__ = "0.1.0"
