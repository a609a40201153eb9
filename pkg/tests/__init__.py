"""Test suite for neurodiff."""
