"""Exception and warning types.

Every error carries a ``stage`` tag so the CLI can report where a pipeline
run stopped.
"""


class MacroFactorError(Exception):
    stage = "general"

    def __init__(self, message="", *, stage=None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


# catalog / ingest
class CatalogError(MacroFactorError, ValueError):
    stage = "ingest"


class UnknownColumn(CatalogError):
    pass


class MissingColumn(CatalogError):
    pass


class BadTransformCode(CatalogError):
    pass


class BadEnumValue(CatalogError):
    pass


class DuplicateId(CatalogError):
    pass


class MissingSeriesFile(CatalogError):
    pass


class UnparseableDate(CatalogError):
    pass


class NonMonotonicDates(CatalogError):
    pass


# panel pre-treatment
class PanelError(MacroFactorError, ValueError):
    stage = "panel"


class NonPositiveForLog(PanelError):
    pass


class TooShortForSeasonal(PanelError):
    pass


class TooFewObservations(PanelError):
    pass


class RankDeficient(PanelError):
    pass


class ConstantSeries(PanelError):
    pass


# factors
class FactorError(MacroFactorError, ValueError):
    stage = "factors"


class RankTooLarge(FactorError):
    pass


class ShapeMismatch(FactorError):
    pass


# var
class VarError(MacroFactorError, ValueError):
    stage = "var"


class SingularRegressors(VarError):
    pass


class NotEnoughObservations(VarError):
    pass


class NoConvergence(VarError):
    pass


class SingularSigma(VarError):
    pass


# identification
class IdentificationError(MacroFactorError, ValueError):
    stage = "identify"


class NoOverlap(IdentificationError):
    pass


class ZeroFirstStage(IdentificationError):
    pass


class HorizonOutOfRange(IdentificationError):
    pass


class ConflictingSigns(IdentificationError):
    pass


class CholeskyFailure(IdentificationError):
    pass


class AcceptanceStarved(IdentificationError):
    """Fewer than K admissible rotations were found.

    ``accepted`` holds the partial set of impact matrices and ``tries`` the
    number of rotations drawn.
    """

    def __init__(self, message, accepted=(), tries=0):
        super().__init__(message)
        self.accepted = list(accepted)
        self.tries = tries

    @property
    def count(self):
        return len(self.accepted)


class BootstrapDegenerate(IdentificationError):
    stage = "bootstrap"


# ccvar / pipeline
class CcvarError(MacroFactorError, ValueError):
    stage = "ccvar"


class UnknownSeries(CcvarError):
    pass


class NStarMismatch(CcvarError):
    pass


class DuplicateSeries(CcvarError):
    pass


class ConfigError(MacroFactorError, ValueError):
    stage = "config"


# warnings
class MacroFactorWarning(UserWarning):
    pass


class DegenerateIQR(MacroFactorWarning):
    pass


class EMNoConvergence(MacroFactorWarning):
    pass


class NoStableInterval(MacroFactorWarning):
    pass


class NoFixedPoint(MacroFactorWarning):
    pass
