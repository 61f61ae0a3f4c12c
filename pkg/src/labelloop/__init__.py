"""Human-in-the-loop sparse pixel labeling for domain-adaptive segmentation."""

__version__ = "0.1.0"
