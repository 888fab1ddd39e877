"""The container runtime: wire format, transport, service hosting and configuration."""
