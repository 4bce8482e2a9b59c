"""Three-branch video-story question answering pipeline.

The package follows the read / observe / recall split: dialogue from
subtitles, rule-generated scene descriptions from video scene graphs, and
plot summaries retrieved from an external knowledge base. Branch scores are
produced by a pluggable text scorer and combined by a fusion head trained
with a modality-weighting loss.
"""

__version__ = "0.1.0"

UNKNOWN_LABEL = "unknown"
