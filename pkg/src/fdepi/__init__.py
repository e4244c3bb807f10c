"""Functional data analysis of regional epidemic curves."""
