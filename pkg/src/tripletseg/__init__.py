"""Toolkit for instance-grounded surgical action triplet datasets.

Builds datasets by aligning frame-level action triplet labels with
instrument instance masks, validates and summarizes them, evaluates
predictions in segmentation, detection, and recognition modes, compares
methods with a paired one-sided Wilcoxon test over frame subsets, and
ships a numerically verified reference of the gated cross-attention
fusion math.
"""

from .schema import COMPONENTS, TripletSchema, load_schema

__version__ = "0.1.0"

__all__ = ["COMPONENTS", "TripletSchema", "load_schema", "__version__"]
