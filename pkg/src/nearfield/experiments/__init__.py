"""Scenario files, Monte-Carlo sweeps, benchmarks and the command-line front end."""
