"""mlrhar apps package."""
