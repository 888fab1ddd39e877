"""Membership catalogue, heartbeats and failure detection."""
