"""Programming models built on the application model: task, thread and MapReduce."""
