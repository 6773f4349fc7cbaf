"""Temporary minimal init while modules are under construction."""
