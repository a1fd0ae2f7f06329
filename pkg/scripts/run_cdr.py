#!/usr/bin/env python3
"""Run the 1-d convection-diffusion-reaction experiment with reference defaults.

Equivalent to ``ensemble-track cdr``; every flag of the CLI applies.  The
convection variant lives one config key away: ``[pde] convection = 0.1``.
"""
import sys

from ensemble_track.cli import main

if __name__ == "__main__":
    sys.exit(main(["cdr", *sys.argv[1:]]))
