"""Exception hierarchy.

``DataError`` subclasses describe problems with inputs (bad files, invalid
geometry). The CLI maps them to exit status 2.
"""


class TokenWarpError(Exception):
    pass


class DataError(TokenWarpError, ValueError):
    pass


class NonPositiveDepth(DataError):
    pass


class InvalidDepth(DataError):
    pass


class IndivisibleResolution(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class EmptyDepth(DataError):
    pass


class DegenerateDirection(DataError):
    pass


class NegativeScale(DataError):
    pass


class InvalidDepthAtKeypoint(DataError):
    pass


class MarkerOutOfBounds(DataError):
    pass


class NonPlanarScene(DataError):
    pass


class NonRigidPose(DataError):
    pass


class ParseError(DataError):
    pass


class BadMagic(ParseError):
    pass


class UnsupportedVersion(ParseError):
    pass


class TruncatedFile(ParseError):
    pass
