# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

"""Numerical lab for trilinear restriction estimates on transversal hypersurfaces."""

__version__ = "1.0.0"
