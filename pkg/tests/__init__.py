"""Tests for image-to-text OCR module."""
