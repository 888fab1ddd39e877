"""deskcloud: desk-scale compute cloud middleware."""
__version__ = "0.1.0"
