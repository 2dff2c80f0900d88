from typing import Optional

# ============================================
# EXIT CODES
# ============================================
EXIT_OK = 0
EXIT_INPUT = 2
EXIT_GEOMETRY = 3
EXIT_NUMERICAL = 4


class CalibrationError(Exception):
    """Base class for every failure the toolkit reports to a caller."""

    exit_code: int = EXIT_NUMERICAL
    http_status: int = 500

    def __init__(self, message: str = "", stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        message = super().__str__() or self.__class__.__name__
        if self.stage:
            return f"{self.stage}: {message}"
        return message


# ============================================
# INPUT / CONFIG ERRORS (exit 2)
# ============================================
class InputError(CalibrationError):
    exit_code = EXIT_INPUT
    http_status = 422


class ConfigError(InputError):
    pass


class MalformedDocument(InputError):
    pass


class UnsupportedKeypointCount(InputError):
    pass


class TrackCountMismatch(InputError):
    pass


class AmbiguousAssignment(InputError):
    pass


class IneligibleJoint(InputError):
    pass


class EmptyCorrespondenceSet(InputError):
    pass


class TooFewPairs(InputError):
    pass


class MissingJoint(InputError):
    pass


class TooFewFrames(InputError):
    pass


class ScaleMismatch(InputError):
    pass


# ============================================
# DEGENERATE GEOMETRY (exit 3)
# ============================================
class GeometryError(CalibrationError):
    exit_code = EXIT_GEOMETRY
    http_status = 409


class SingularIntrinsics(GeometryError):
    pass


class DegenerateCloud(GeometryError):
    pass


class DegenerateConfiguration(GeometryError):
    pass


class ZeroEssential(GeometryError):
    pass


class CheiralityUndecidable(GeometryError):
    pass


class DegenerateEpipolarLine(GeometryError):
    pass


class NoModelFound(GeometryError):
    pass


class InsufficientInliers(GeometryError):
    pass


class RankDeficientSystem(GeometryError):
    pass


class BehindCamera(GeometryError):
    pass


class PlacementFailed(GeometryError):
    pass


class ZeroTranslation(GeometryError):
    pass


class NotARotation(GeometryError):
    pass


class ZeroMeanLength(GeometryError):
    pass


class ZeroFemur(GeometryError):
    pass


# ============================================
# NUMERICAL FAILURES (exit 4)
# ============================================
class NumericalError(CalibrationError):
    exit_code = EXIT_NUMERICAL
    http_status = 500


class DivergedObjective(NumericalError):
    pass
