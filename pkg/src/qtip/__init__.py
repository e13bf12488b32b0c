"""Simulation-based adaptation of traffic speed models to incidents."""
