"""Web-based firm-level pandemic-affectedness indicators.

Pipeline stages: archive ingest -> paragraph extraction -> few-shot
classification -> indicator aggregation -> policy correlation -> financial
panel -> fixed-effects regressions. See the ``webshock`` CLI.
"""

__version__ = "0.1.0"
