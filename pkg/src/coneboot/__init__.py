"""Bootstrap segmentation models for ultrasound cone extraction.

The pipeline: generate cheap change-detection masks, triage them with a
fast human in/out pass, train base models on the keepers, refine on a small
hand-labeled set, and validate improvements with replicate statistics.
"""

__version__ = "0.1.0"
