"""Advance reservation: allocation map, negotiation and per-node admission."""
