"""
Test suite for the HarmonicShoot package.
"""
