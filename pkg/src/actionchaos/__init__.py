"""Action-matrix level statistics, quantum-action flow and classical chaos scans."""

__version__ = "0.1.0"
