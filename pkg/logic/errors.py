# -*- coding: utf-8 -*-
"""
Exceptions raised by the toolkit. Validation problems are ValueErrors (bad input), execution problems are
RuntimeErrors (a backend or an optimisation that failed on valid input).
"""


class SchemaError(ValueError):
    pass


class ManifestError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = "line {}: {}".format(line, message)
        super().__init__(message)
        self.line = line


class PromptError(ValueError):
    pass


class LlmResponseError(ValueError):
    def __init__(self, message, offset=0):
        super().__init__("{} (at offset {})".format(message, offset))
        self.offset = offset


class ConditioningError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


class EmbeddingError(ValueError):
    pass
