"""
Physics package for vflow
"""
