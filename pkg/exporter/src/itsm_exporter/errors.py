"""Exporter failure taxonomy; messages must say what to fix, not just what broke."""


class ExporterError(Exception):
    """Base class for everything the exporter raises on purpose."""


class ModelResolutionError(ExporterError):
    """Unknown architecture, missing weights, or an incompatible checkpoint."""


class DatasetResolutionError(ExporterError):
    """Dataset root, split list, or a referenced image/mask cannot be used."""


class InvalidTensor(ExporterError):
    """Array cannot be represented in the interchange container."""
