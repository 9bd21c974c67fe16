"""
Test utilities for the equity_collectivity test suite.

Logging helpers shared by every test module.
"""
