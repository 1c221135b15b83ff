"""Optimal design of Volt/VAR control rules under voltage chance constraints."""
