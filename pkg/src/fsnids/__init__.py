"""Flow-sequence network intrusion detection toolkit.

NetFlow records are discretized into per-feature tokens, sequences of flows
are encoded by a small bidirectional transformer pretrained with a
masked-flow objective on benign traffic, and a per-flow head classifies
each flow as benign or malicious using its surrounding context.
"""

__version__ = "0.1.0"
