# This file makes 'harness' a Python package
