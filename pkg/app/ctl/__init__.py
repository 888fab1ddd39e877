"""Administration surface: the ctl command line and cloud statistics."""
