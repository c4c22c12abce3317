"""Active view selection laboratory.

Greedy next-best-view selection driven by image-quality scores of current
renderings, on procedurally generated splat scenes.
"""

__version__ = "0.1.0"
