"""Mixed-frequency video question answering at desk scale.

Query-conditioned temporal grounding, dense re-sampling of the grounded
segments, multi-frequency mixing attention and two-round dialogue
orchestration, with grounding/caption metrics and benchmark-construction tools.
"""
__version__ = "0.1.0"

DEFAULTS = {
    "high_target_count": 20,
    "n_bins": 1000,
    "tokens_per_frame": 64,
    "low_frames_per_second": 1,
}
