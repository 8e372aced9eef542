class QAForgeError(ValueError):
    """Raised for unrenderable templates, bad client config, or misuse."""
