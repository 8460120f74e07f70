"""Exception types raised by the change-detection engine."""


class LidarChangeError(Exception):
    """Base class for all engine errors."""


class PlyParseError(LidarChangeError):
    """Malformed PLY header or body; message names the offending line."""


class DataError(LidarChangeError):
    """Invalid data content (non-finite coordinate, bad normals, ...)."""


class DegenerateInputError(LidarChangeError):
    """Input too small or too uniform for the requested operation."""


class ContractError(LidarChangeError):
    """Caller violated a documented precondition."""


class RegistrationError(LidarChangeError):
    """A registration stage failed.

    Attributes:
        stage: one of "coarse", "ndt", "icp", "planes".
    """

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class CoarseAlignmentError(RegistrationError):
    def __init__(self, message: str):
        super().__init__("coarse", message)


class NdtUnusableError(RegistrationError):
    def __init__(self, message: str):
        super().__init__("ndt", message)


class GroundFitError(LidarChangeError):
    """No tile produced a usable ground plane."""


class SceneSpecError(LidarChangeError):
    """Invalid synthetic-scene specification."""
