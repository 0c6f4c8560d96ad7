"""Settings, errors, protocol registry, progress and console display."""
