"""Term-structure models for SOFR/EFFR futures."""

__version__ = "0.1.0"
