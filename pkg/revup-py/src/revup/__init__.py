"""`revup` is a Python package for revenue uplift modeling on randomized
trial data: zero-inflated lognormal response heads on a shared
representation, response and uplift ranking losses, and an uplift ranking
evaluation suite.
"""

# This is updated by our release-please workflow, triggered by this
# annotation: x-release-please-version
__version__ = "0.1.0"
