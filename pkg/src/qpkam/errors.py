"""Exception hierarchy shared by all modules."""


class QPKamError(Exception):
    """Base class for errors raised by qpkam."""


class InvalidAlgebraElement(QPKamError):
    pass


class LogBranchUndefined(QPKamError):
    pass


class BchDivergence(QPKamError):
    pass


class TagMismatch(QPKamError):
    pass


class DegenerateStrip(QPKamError):
    pass


class NotDiophantine(QPKamError):
    def __init__(self, n, dist, msg=None):
        self.n = n
        self.dist = dist
        super().__init__(msg or f"Diophantine condition violated at n={n} (dist={dist:.3e})")


class UnverifiedRange(QPKamError):
    pass


class ClaimViolation(QPKamError):
    def __init__(self, sites, msg=None):
        self.sites = sites
        super().__init__(msg or f"more than one resonant site within the uniqueness radius: {sites}")


class IftContractFailure(QPKamError):
    pass


class PreconditionFailed(QPKamError):
    pass


class DegenerateRho(QPKamError):
    pass


class CertificateViolation(QPKamError):
    pass


class TooLarge(QPKamError):
    pass


class WindowMismatch(QPKamError):
    pass


class NumericOverflow(QPKamError):
    pass


class HomotopyObstruction(QPKamError):
    pass


class GridTooCoarse(QPKamError):
    pass


class SignalBelowNoise(QPKamError):
    def __init__(self, noise_floor, msg=None):
        self.noise_floor = noise_floor
        super().__init__(msg or f"differences do not exceed the noise floor {noise_floor:.3e}")


class ConfigError(QPKamError):
    pass
