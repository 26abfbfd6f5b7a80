"""
Test package for AnosovLab.

Unit tests use small balls so the suite stays fast; tests marked slow run
statistical checks on full-size balls of the bundled scenarios.
"""
