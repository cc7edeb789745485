"""Exception types raised across the toolkit."""


class DocsegError(Exception):
    pass


class FormatError(DocsegError, ValueError):
    """Unsupported or malformed image file."""


class GeometryError(DocsegError, ValueError):
    """Shapes or grids that do not line up."""


class ConfigError(DocsegError, ValueError):
    """Invalid configuration value or unknown key."""
