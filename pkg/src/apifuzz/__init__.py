"""Coverage-guided library-API fuzzer driven by a small call-sequence DSL."""

__version__ = "0.1.0"
