"""Acceptance tests package."""
