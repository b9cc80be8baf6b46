"""
errors.py

Every failure the library can raise. Library modules raise these; only cli.py
turns them into "[ERROR] ..." lines and exit codes.
"""


class BlurVOError(Exception):
    """Base class for all library errors."""


# lie
class AngleNearPi(BlurVOError, ValueError):
    pass


class OutOfExposure(BlurVOError, ValueError):
    pass


class FractionOutOfRange(BlurVOError, ValueError):
    pass


# imgproc
class OutOfBounds(BlurVOError, ValueError):
    pass


class TooManyLevels(BlurVOError, ValueError):
    pass


class ImageFormatError(BlurVOError, ValueError):
    pass


# camera
class BehindCamera(BlurVOError, ValueError):
    pass


class NonPositiveDepth(BlurVOError, ValueError):
    pass


class RayParallelToPlane(BlurVOError, ValueError):
    pass


class IntersectionBehindCamera(BlurVOError, ValueError):
    pass


# blursim
class CameraBehindPlane(BlurVOError, ValueError):
    pass


class BadParams(BlurVOError, ValueError):
    pass


class IoError(BlurVOError, OSError):
    pass


# tracker
class TooFewKeypoints(BlurVOError, RuntimeError):
    pass


class ConfigInvalid(BlurVOError, ValueError):
    pass


class DimensionMismatch(BlurVOError, ValueError):
    pass


# evaluation
class NoMatches(BlurVOError, RuntimeError):
    pass


class DegenerateConfiguration(BlurVOError, ValueError):
    pass
