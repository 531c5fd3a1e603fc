"""Link-level simulator for RIS-aided unsourced random access with a
variational coupled-tensor detector."""

__version__ = "0.1.0"
