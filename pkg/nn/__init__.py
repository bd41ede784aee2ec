"""
Minimal dense networks: exact backprop, Adam, Polyak targets, model images
"""
