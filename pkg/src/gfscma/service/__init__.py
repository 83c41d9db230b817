"""HTTP service around the harness."""
