"""Reflection privacy testbed: lighting reconstruction, attack, and defenses."""
