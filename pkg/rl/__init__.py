"""
Off-policy agents: replay buffers, critics, composed actor objectives and training loops
"""
