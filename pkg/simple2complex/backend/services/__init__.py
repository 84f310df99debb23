"""External services (dataset download)."""
