"""High-order finite elements on triangles via the Duffy transform, with
low-order-refined and fictitious-space preconditioners."""

__version__ = "0.1.0"
