"""Multistate Landau–Zener models, propagation and closed-form probabilities."""
