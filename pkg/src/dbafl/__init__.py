"""Deterministic protocol library and discrete-event simulator for DBAFL-style federated learning."""

__version__ = "0.1.0"
