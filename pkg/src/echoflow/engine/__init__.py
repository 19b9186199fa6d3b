"""Node-local dataflow engine."""
