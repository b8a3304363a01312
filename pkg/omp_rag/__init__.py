"""
OpenMP retrieval-augmented transformation module
"""
