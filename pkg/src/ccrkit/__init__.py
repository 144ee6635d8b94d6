"""Edge-case-robust call-sign recognition: contrastive matcher, command branch, fusion."""

__version__ = "0.1.0"
