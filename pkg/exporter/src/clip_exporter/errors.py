"""Exporter error hierarchy."""


class ExporterError(Exception):
    """Base class for all exporter failures."""


class BadTemplate(ExporterError):
    """A prompt template does not contain exactly one class-name slot."""


class BadPromptSet(ExporterError):
    """A prompt set violates its strategy's invariants."""


class ModelLoadError(ExporterError):
    """The requested vision-language model could not be loaded."""


class IOFailure(ExporterError):
    """Reading inputs or writing the output bundle failed."""
