class ExtractError(Exception):
    """Base class for extractor failures."""


class ManifestError(ExtractError):
    """Malformed manifest CSV: bad header, bad label, empty text, duplicate id."""


class ImageError(ExtractError):
    """An image file is missing or does not decode; the message names the path."""


class InputError(ExtractError):
    """Structurally invalid input to an encoder (e.g. empty text)."""
