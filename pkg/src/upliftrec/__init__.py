"""Uplift-driven re-planning of top-N recommendation lists.

Per-user dose-response curves (CTR as a function of a category's exposure
ratio) are estimated from logged feedback with inverse-propensity
debiasing; the exposure allocation is then either optimized directly by
dynamic programming or used to nudge a backend ranking through marginal
treatment effects.
"""

__version__ = "0.1.0"
