"""Soil-moisture downscaling with bagged regression trees.

Modules
-------
rastergrid   multi-resolution raster model, aggregation, noise, TDR-CSV I/O
synthscene   surrogate multi-resolution scene generator
carttree     least-squares regression trees
ensemble     bagging, L1 ensemble pruning, tree-count cross-validation
featurize    spatial / spatio-temporal / gap-masked feature assembly
pipeline     scenario runs, sweeps and metrics
cli          ``smdownscale`` command line
"""

__version__ = "0.1.0"
