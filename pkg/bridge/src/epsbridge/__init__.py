"""Reference server for the EPS1 noise-prediction wire protocol.

Serves zero / identity / analytic-Gaussian predictions for conformance
testing, plus an adapter slot for a pre-trained 256x256 unconditional
diffusion U-Net. The frame codec and the Gaussian formulas are deliberately
implemented here from scratch: byte-level and numeric conformance tests are
the only synchronization with the client side.
"""

__version__ = "0.1.0"

from epsbridge.server import ServerConfig, serve_connection, serve_stdio, serve_tcp
