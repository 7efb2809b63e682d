"""Exception types shared across the package."""


class FedgrowError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(FedgrowError):
    """Tensor shapes do not satisfy an operation's contract."""


class ContractError(FedgrowError):
    """A non-shape precondition was violated."""


class ConfigError(FedgrowError):
    """Invalid configuration value or configuration file."""


class DataError(FedgrowError):
    """Invalid runtime data: out-of-range token ids, oversized sequences, ..."""


class GrowthCapError(FedgrowError):
    """Growing the model would exceed its target layer count."""


class FormatError(FedgrowError):
    """Malformed binary payload, or payload inconsistent with the expected model."""


class IntegrityError(FedgrowError):
    """A sealed payload failed its integrity check."""


class ProtocolError(FedgrowError):
    """Client and server exchanged inconsistent payloads."""


class VerificationError(FedgrowError):
    """A measured ledger disagrees with its closed-form expectation."""
