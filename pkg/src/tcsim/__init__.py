"""tcsim: simulation and analysis of heralded entanglement between two
spin-photon-interface modules."""

__version__ = "0.1.0"
