"""Exception types shared across the package."""


class RoomlabError(Exception):
    """Base class for all roomlab errors."""


class SceneError(RoomlabError):
    """Raised for malformed scene files, dangling references or bad geometry."""


class LayoutError(RoomlabError):
    """Raised for degenerate layouts or failed fits."""
