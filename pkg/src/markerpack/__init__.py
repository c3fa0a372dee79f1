"""Span and span-pair classification with packed marker encoding.

The package covers the full desk-scale workflow: corpus ingestion and
context windowing, candidate-span packing, marker layout construction
with directional visibility, a deterministic float64 encoder with
analytic gradients, classification heads with bidirectional relation
fusion, span/relation evaluation, and a throughput benchmark.
"""

__version__ = "0.1.0"
