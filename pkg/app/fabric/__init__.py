"""Platform profiling and node provisioning."""
