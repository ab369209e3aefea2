"""Test package for emd-motion."""
