__version__ = "0.1.0"
PRODUCER = f"amcguard {__version__}"
