"""Section-aware malware imaging, a prompted frozen-encoder classifier, and time-aware evaluation."""

__version__ = "0.1.0"
