"""Shipped synthetic drive-cycle profiles (power percent of rated)."""
