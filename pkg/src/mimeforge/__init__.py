"""mimeforge: teacher MUAP simulator, conditional generative mimic, and
dynamic surface-EMG synthesis."""

__version__ = "0.1.0"
