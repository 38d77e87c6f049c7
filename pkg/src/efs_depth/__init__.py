"""Event focal stack simulation and sparse depth from focus."""

__version__ = "0.1.0"
