"""Key-frame-aware RTP video streaming simulator and analysis toolkit."""

__version__ = "0.1.0"
