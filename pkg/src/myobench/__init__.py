"""Motor-intent decoding workbench.

EMG feature pipeline, multi-label movement decoder, rhythm-game
environment, offline-RL fine-tuning and the evaluation suite, runnable
against a configurable synthetic subject or a live browser client.
"""

__version__ = "0.1.0"
