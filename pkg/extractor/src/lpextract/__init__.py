"""Hidden-state extraction into the LPRS store format."""

from .extraction import (CheckpointLoadFailed, EmptyInput, ExtractionConfig,
                         ExtractionError, InputMissing, StoreNotVerifiable,
                         TokenizerMismatch, VerifyReport, extract, verify)

__all__ = [
    "CheckpointLoadFailed",
    "EmptyInput",
    "ExtractionConfig",
    "ExtractionError",
    "InputMissing",
    "StoreNotVerifiable",
    "TokenizerMismatch",
    "VerifyReport",
    "extract",
    "verify",
]
