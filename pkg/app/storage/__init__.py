"""Data channels, the aftp file transfer protocol and job staging."""
