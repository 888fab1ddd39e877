"""Job scheduling and execution: job table, scheduler, executor and operations."""
