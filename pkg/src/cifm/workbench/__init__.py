"""Experiment workbench: configs, dataset I/O, reporting, plots and the command line."""
