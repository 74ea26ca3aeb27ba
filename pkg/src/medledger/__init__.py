"""Medical IoT records on a permissioned ledger with proxy re-encryption."""

__version__ = "0.1.0"
