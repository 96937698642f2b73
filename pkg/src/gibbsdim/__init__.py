"""Dimension theory toolkit for heavy-tailed digit measures."""
