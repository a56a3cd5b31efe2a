"""Mobile-agent exam platform.

An exam server dispatches self-contained evaluation agents (adaptive test
graph + grading state) to student host platforms, where the exam runs and
is graded locally, offline-tolerant; agents return results to the server
for compilation and publication. A deterministic simulator compares the
agent architecture against a per-question client-server baseline.
"""

__version__ = "0.1.0"

PROTOCOL_VERSION = 1
SNAPSHOT_SCHEMA_VERSION = 1
