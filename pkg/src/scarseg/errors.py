"""Exceptions shared across modules."""


class FormatError(Exception):
    """A file failed structural validation (bad magic, version, size...).

    Messages carry the byte offset or line number of the offending field so
    broken files can be diagnosed without a hex editor.
    """


class UserInputError(Exception):
    """Invalid user-supplied configuration or CLI arguments (exit code 2)."""
