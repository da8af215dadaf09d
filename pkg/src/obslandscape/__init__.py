"""
Observable control landscapes: critical topology, distance to critical
submanifolds, and gradient-flow searches that may linger near saddles.
"""
from .distance import TableSet, all_distances, block_singular_values, critical_distance
from .dynamics import (ControlField, SystemModel, build_custom, build_oscillator, build_rotor,
                       evaluate, fluence, gradient, objective, propagate)
from .flow import FlowSettings, SearchTrace, run_search
from .harness import BatchSummary, CaseSpec, make_case_operators, make_initial_field, run_batch, run_sweep, summarize
from .topology import (ContingencyTable, DiagonalSpectrum, EnumerationCapError, classify_tables,
                       enumerate_tables, landscape, spectrum_from_diagonal, table_distance)

__version__ = "0.1.0"
