"""Onion-routing overlay: relay directory, circuits, stream policies, exit taps."""
