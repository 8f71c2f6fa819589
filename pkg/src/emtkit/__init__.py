"""emtkit: electromagnetic-transient simulation of power systems built from
terminal circuits (analog circuit primitives assembled with MNA)."""

__version__ = "0.1.0"
