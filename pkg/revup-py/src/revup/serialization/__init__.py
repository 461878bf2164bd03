"""Persisted revup artifacts as pydantic models."""
