"""
Live adaptation: the simulated drone node, the ground station and the loop joining them
"""
