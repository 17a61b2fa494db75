class ExportError(Exception):
    """Exporter-level failure (configuration, capture, or engine invocation)."""


class CaptureConfigError(ExportError):
    """The capture spec does not match anything the pipeline can hook."""
