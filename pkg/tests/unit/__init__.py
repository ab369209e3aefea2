"""
Unit tests for the emdmotion library and the emdpipeline command line.

This package contains unit tests for every pipeline stage, including scene I/O,
the motion detector, box fitting, evaluation and the command-line runner.
"""
