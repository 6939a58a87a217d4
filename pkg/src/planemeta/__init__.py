"""planemeta: MRI plane-orientation metadata generation and gated fusion.

Pipeline overview: parse NIfTI-1 volumes or 2D rasters, clean them into
square slices, train 2.5D context classifiers that recover the viewing
plane, and feed the inferred plane into an uncertainty-gated downstream
tumor classifier. Models export to a portable ONNX bundle consumable by
the browser frontend.
"""

__version__ = "0.1.0"
