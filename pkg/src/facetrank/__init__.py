"""Facet-utility-aware complex answer retrieval.

BM25 candidate retrieval, corpus heading statistics, and a family of
convolutional re-rankers that exploit where a query term came from (title,
intermediate, or main heading) and how structural its heading is.
"""

__version__ = "0.1.0"
