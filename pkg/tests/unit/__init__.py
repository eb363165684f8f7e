"""Unit tests for sake."""
