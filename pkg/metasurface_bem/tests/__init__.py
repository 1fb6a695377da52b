"""
Test modules for the metasurface engine.
"""
