"""Test package for tinygrnn-py."""
