"""Database tests for sake."""
