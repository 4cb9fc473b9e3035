"""Spatiotemporal downscaling of coastal shallow-water simulations.

``swe_sim`` generates paired coarse/fine tidal runs, ``dataset`` renders and
pairs them, ``model`` holds the DNNCS network, ``trainer`` fits and evaluates
it, and ``cli`` wires everything to the ``st-downscaler`` command.
"""

__version__ = "0.1.0"
