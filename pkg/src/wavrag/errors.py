"""Exception hierarchy for the engine.

Every error raised on purpose derives from :class:`WavragError`, so callers
(CLI, service) can distinguish engine failures from programming bugs.
"""


class WavragError(Exception):
    """Base class for all engine errors."""


class NotFoundError(WavragError):
    """A requested entry or file is not present."""


class IngestLockError(WavragError):
    """Another writer holds the knowledge-base ingestion lock."""


class StoreFormatError(WavragError):
    """An embedding-store or head file is malformed; the message names the field."""


class DimMismatchError(WavragError):
    """Vector dimensions disagree (query vs store, head vs input, ...)."""


class AudioDecodeError(WavragError):
    """Audio input is not canonical WAV (RIFF, PCM 16-bit, mono)."""


class EncoderUnavailableError(WavragError):
    """The remote encoder timed out or answered with a non-200 / bad body. Retryable."""


class GeneratorUnavailableError(WavragError):
    """The generator backend timed out, failed, or has no scripted completion."""


class DegenerateProjectionError(WavragError):
    """A projection produced the zero vector, which cannot be normalized."""


class SilentInputError(WavragError):
    """Signal or noise has zero power, so an SNR target is undefined."""


class ConsistencyError(WavragError):
    """Index and knowledge base disagree (e.g. a retrieved id is missing)."""


class ConfigError(WavragError):
    """Engine configuration is missing or invalid."""


class UsageError(WavragError):
    """Command line was used incorrectly (maps to exit code 1)."""
