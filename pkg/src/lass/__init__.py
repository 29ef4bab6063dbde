"""Source separation with discrete latent priors and a counted likelihood tensor."""

from ._kernels import BACKEND
from .codec import Codebook, decode, encode, fit_codebook
from .errors import LassError, ModelFileError, ValidationError
from .likelihood import CountTensor, LikelihoodModel, build_counts, density, normalize
from .priors import NGramPrior, PriorPair, train_ngram
from .refine import RefinementConfig, refine
from .separator import SeparationConfig, SeparationResult, separate

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Codebook", "CountTensor", "LassError", "LikelihoodModel", "ModelFileError",
    "NGramPrior", "PriorPair", "RefinementConfig", "SeparationConfig", "SeparationResult",
    "ValidationError", "build_counts", "decode", "density", "encode", "fit_codebook",
    "normalize", "refine", "separate", "train_ngram",
]
