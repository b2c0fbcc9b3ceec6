"""taskfleet: service-oriented multi-robot task orchestration.

Heterogeneous simulated devices expose their capabilities as services with
precondition/effect formulas over a shared environment ontology.  A task
manager plans, arranges, executes, monitors, and recovers complex tasks
through a failure-recovery transaction protocol.
"""

__version__ = "0.1.0"
