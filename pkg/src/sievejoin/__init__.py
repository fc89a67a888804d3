"""Backward-chained Bloom filters that prune n-way joins before they run."""

__version__ = "0.1.0"

from .bloom import (BloomFilter, BloomjoinCardinalityInputs, CountingBloomFilter,  # noqa: E402
                    estimate_bits_set, estimate_bloomjoin_cardinality, load_filter,
                    size_for_target, theoretical_fpr)
from .engine import (ExecStats, ResultSet, bloomjoin_two_way, hash_join,  # noqa: E402
                     nested_loop_join, sieve_join)
from .query import JoinEdge, JoinQuery, chain_query, clique_query, validate  # noqa: E402
from .sieve import (FilterRegistry, SieveSet, build_backward, build_forward,  # noqa: E402
                    build_sieve, export_pruned_tables, load_sieve, reuse_for, save_sieve)
from .storage import Table, build_index, distinct_values, load_catalog, load_csv  # noqa: E402
from .updates import MaintenanceReport, delete_with_maintenance, insert_with_maintenance  # noqa: E402

__all__ = [
    "BloomFilter", "CountingBloomFilter", "BloomjoinCardinalityInputs", "estimate_bits_set",
    "estimate_bloomjoin_cardinality", "load_filter", "size_for_target", "theoretical_fpr",
    "ExecStats", "ResultSet", "bloomjoin_two_way", "hash_join", "nested_loop_join", "sieve_join",
    "JoinEdge", "JoinQuery", "chain_query", "clique_query", "validate",
    "FilterRegistry", "SieveSet", "build_backward", "build_forward", "build_sieve",
    "export_pruned_tables", "load_sieve", "reuse_for", "save_sieve",
    "Table", "build_index", "distinct_values", "load_catalog", "load_csv",
    "MaintenanceReport", "delete_with_maintenance", "insert_with_maintenance",
]
