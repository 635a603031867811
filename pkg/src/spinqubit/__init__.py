"""Monte Carlo toolkit for single-shot spin readout and single-qubit benchmarking.

Modules:

* :mod:`spinqubit.physics` - rates, visibility conditions and the error budget
* :mod:`spinqubit.traces` - hidden-state paths and sensor traces
* :mod:`spinqubit.readout` - detection, fidelity estimation and sweeps
* :mod:`spinqubit.qubit` - Bloch-vector qubit, gates and dephasing noise
* :mod:`spinqubit.benchmarking` - Clifford RB and interleaved RB
* :mod:`spinqubit.cli` - configuration-driven command line
"""

__version__ = "0.1.0"
