"""
Test plants: target-angle pendulum and quadrotor attitude rates, each with a 'real' twin
"""
