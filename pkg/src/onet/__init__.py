"""O-net: a numpy micro-framework for dual-decoder U-net style lesion segmentation."""

__version__ = "0.1.0"
