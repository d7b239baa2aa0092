"""Quadruply robust estimation of marginal structural models for irregularly observed outcomes."""
