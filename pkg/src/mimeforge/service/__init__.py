"""HTTP generation service (FastAPI) wrapping the core package."""
