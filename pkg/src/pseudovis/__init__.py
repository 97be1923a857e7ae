"""Quality-guided pseudo-label curation for video instance segmentation."""

__version__ = "0.1.0"
