"""Delocalized quantum information in entanglement-based networks.

Subpackages:
  qcore     - dense statevector/density-operator engine (the oracle)
  dicke     - Dicke-state codewords and closed-form storage metrics
  wire      - period-wire MPS construction and analysis
  protocols - upload / download / transport / cut / merge protocols
  lognet    - small logical networks of encoded qubits
  expcli    - batch experiment runner and the `deloc` CLI
"""

__version__ = "0.1.0"
