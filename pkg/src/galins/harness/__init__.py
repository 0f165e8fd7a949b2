"""Configuration, log I/O, Monte Carlo orchestration and the command-line interface."""
