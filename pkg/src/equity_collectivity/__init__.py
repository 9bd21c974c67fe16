"""
Equity Collectivity

This package quantifies the collective behaviour of an equity market from rolling
cross-correlation matrices of log returns and measures the diversification benefit of
sector-structured portfolios by Monte-Carlo sampling.
"""

__version__ = "0.1.0"


from rompy.logging import LoggingConfig, get_logger

logger = get_logger(__name__)

# Configure logging for the package
logging_config = LoggingConfig()
logging_config.configure_logging()

logger.debug("equity_collectivity initialised")
