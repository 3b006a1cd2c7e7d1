"""Query provenance analysis: a streaming stateful defense that detects
query-based black-box attacks by linking similar queries into provenance
graphs and flagging anomalous components, plus a desk-scale attack
simulator for exercising it."""

__version__ = "0.1.0"
