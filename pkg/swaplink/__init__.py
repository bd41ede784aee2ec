"""
Ground-to-drone link: CRC frames, chunked model transfer, staged swaps and the observation uplink
"""
