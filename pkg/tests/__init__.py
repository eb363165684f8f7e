"""Test suite for sake."""
