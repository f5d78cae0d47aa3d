"""Relaxation of extended-valued stored energies in 2D: closed-form and
lattice quasiconvex envelopes, explicit laminates, covering-based recovery
sequences and a finite element solver."""

__version__ = "0.1.0"
