"""Exception hierarchy shared across the package."""


class OCRAgentError(Exception):
    pass


class BackendError(OCRAgentError):
    """Transport or protocol failure after retries were exhausted."""

    def __init__(self, message, *, retries=0, status=None):
        super().__init__(message)
        self.retries = retries
        self.status = status


class FixtureMissError(OCRAgentError, KeyError):
    pass


class TemplateError(OCRAgentError):
    pass


class ImageReadError(OCRAgentError):
    pass


class UnsupportedMediaType(OCRAgentError):
    pass


class SequenceError(OCRAgentError):
    pass


class ConfigError(OCRAgentError, ValueError):
    pass


class TaxonomyParseError(OCRAgentError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class EmptyGoldError(OCRAgentError, ValueError):
    pass


class LengthMismatchError(OCRAgentError, ValueError):
    pass


class DatasetFormatError(OCRAgentError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class EmptyRunError(OCRAgentError):
    pass


class NotIterativeError(OCRAgentError):
    pass


class DatasetMismatchError(OCRAgentError):
    pass
