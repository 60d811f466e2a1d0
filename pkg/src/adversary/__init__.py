"""Instrumented exit relays, the malicious peer, and stream linkage."""
