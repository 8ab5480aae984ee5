#!/usr/bin/env python3
# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.


"""Command-line entrypoint of the trilinear lab."""

import sys

from trilinear_lab.cli import main

if __name__ == "__main__":
    sys.exit(main())
