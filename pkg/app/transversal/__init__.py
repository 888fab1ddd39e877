"""Cross-cutting services: identity, security, persistence and accounting."""
