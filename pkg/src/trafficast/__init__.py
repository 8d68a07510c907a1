"""Road-network traffic speed forecasting: data pipeline, predictors and evaluation."""

__version__ = "0.1.0"
