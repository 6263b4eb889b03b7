"""mlrhar tests package."""
