"""Tests for HTBB."""
