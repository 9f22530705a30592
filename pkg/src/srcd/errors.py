"""Exception hierarchy. Every domain error derives from SrcdError so the CLI
can map it to exit code 1."""


class SrcdError(Exception):
    pass


class DegenerateImage(SrcdError):
    pass


class ImageTooSmall(SrcdError):
    pass


class IndivisibleDimension(SrcdError):
    pass


class DegenerateWeights(SrcdError):
    pass


class EmptyDomain(SrcdError):
    pass


class ShapeMismatch(SrcdError):
    pass


class StaleSet(SrcdError):
    pass


class ConfigInvalid(SrcdError):
    pass
