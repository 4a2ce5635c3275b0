"""Group-based distinctive image captioning toolkit.

Similar-image grouping, distinctive-word extraction, differential memory
attention, the training losses with hand-derived gradients, and the
CIDEr-family distinctiveness metrics.
"""

__version__ = "0.1.0"
