"""decoyloop: deception telemetry that drives automated firewall blocking.

An SSH honeypot sensor emits Cowrie-compatible events; a rule engine turns
them into ATT&CK-tagged incidents; an orchestrator blocks the offending
source in an NSG-style firewall within sub-second latency; a reporter
computes attack- and defense-side metrics over the whole loop.
"""

__version__ = "0.1.0"
