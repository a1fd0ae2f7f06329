#!/usr/bin/env python3
"""Run the oscillator experiment with reference defaults.

Equivalent to ``ensemble-track oscillator``; every flag of the CLI applies.
"""
import sys

from ensemble_track.cli import main

if __name__ == "__main__":
    sys.exit(main(["oscillator", *sys.argv[1:]]))
