# This file makes 'services' a Python package
