"""Contact processes on groups: exact small-torus linear algebra, Monte Carlo
estimators, and the analytic survival bound."""

__version__ = "0.1.0"
