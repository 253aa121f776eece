"""Spatio-temporal forecasting engine with text fusion and LoRA-AMR adapters"""

__version__ = '0.1.0'
