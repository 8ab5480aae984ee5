# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

"""Exceptions raised by the trilinear_lab library.

Every module raises its own subclass of `LabError`. The command line front end maps
`InvariantViolation` to exit code 2 and every other `LabError` to exit code 1.
"""

from typing import Optional


class LabError(Exception):
    """Base class for every error raised by trilinear_lab."""


class GeometryError(LabError):
    """Invalid hypersurface patch, sample point or patch configuration."""


class WaveError(LabError):
    """Invalid free wave, quadrature grid or evaluation request."""


class PacketError(LabError):
    """Invalid packet lattice or decomposition request."""


class TableError(LabError):
    """Invalid cube family, weight matrix or table request."""


class ExperimentError(LabError):
    """Experiment precondition failed."""


class InvariantViolation(LabError):
    """A checked invariant did not hold on computed data."""


class ConfigError(LabError):
    """Configuration could not be parsed or validated."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        """Builds the diagnostic.

        Args:
            message: What is wrong with the value.
            key: Offending configuration key, if any.
            line: 1-based line of the key in the configuration text, if known.
        """
        self.key = key
        self.line = line
        location = ""
        if key is not None:
            location = f"{key}: "
        if line is not None:
            location = f"line {line}: {location}"
        super().__init__(f"{location}{message}")
