"""Structure-aware evaluation harness for satellite-to-street synthesis.

Three evaluation tiers (pixel metrics, classification accuracy score,
VLM-as-a-judge) plus a desk-scale generative kernel, driven by JSON
manifests, CVF feature files, and a `crossview-eval` CLI.
"""

__version__ = "0.1.0"
