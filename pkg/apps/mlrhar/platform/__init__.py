"""Platform utilities - structured logging."""
