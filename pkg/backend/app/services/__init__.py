"""
Spotting services: geometry, network, losses, data and harness
"""
