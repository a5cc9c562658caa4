"""Exception types raised across the package."""


class DPDError(ValueError):
    """Base class for invalid-input errors."""


class NonPositiveScale(DPDError):
    pass


class NonPositiveGamma(DPDError):
    pass


class MissingCovariates(DPDError):
    pass


class EmptyDataset(DPDError):
    pass


class DegenerateSample(DPDError):
    pass


class DegenerateWeights(DPDError):
    pass


class InvalidParticleCount(DPDError):
    pass


class SingularCovariance(DPDError):
    pass


class NonFiniteGradient(DPDError):
    pass


class ImproperPriorForEvidence(DPDError):
    pass


class InvalidTau(DPDError):
    pass


class ParseError(DPDError):
    pass


class SchemaError(DPDError):
    pass


class ConfigError(DPDError):
    pass
