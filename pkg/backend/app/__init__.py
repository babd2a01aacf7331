"""
Text spotting application package
"""
