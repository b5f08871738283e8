"""
Test package for the telecoupling toolkit.
"""
