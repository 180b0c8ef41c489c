"""Reliability-evaluation workbench for a systolic deep-learning
accelerator inside a closed-loop driving simulation: bit-exact int8
inference, bit/PE-granularity fault injection, array and redundancy
(RR/CR/DR/HCA) analysis, driving campaigns and reliability metrics."""

__version__ = "0.1.0"
