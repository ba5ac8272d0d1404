"""
Command-line interface for oobsim.
"""
