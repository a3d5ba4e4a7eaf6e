"""Frequency-domain IR-WRI with source-signature estimation."""

__version__ = "0.1.0"
