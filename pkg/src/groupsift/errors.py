"""Exception hierarchy shared by all groupsift modules.

Ingestion-time problems (bad manifests, malformed embedding files) and
computation-time problems (degenerate groups, unusable labels) both derive
from :class:`GroupsiftError` so callers can catch one base type. The CLI
maps any GroupsiftError to exit code 3.
"""


class GroupsiftError(Exception):
    """Base class for all groupsift domain errors."""


# --- manifest / ingestion ---------------------------------------------------

class MissingColumnError(GroupsiftError):
    """A required manifest column is absent from the header row."""


class DuplicateIdError(GroupsiftError):
    """The same image_id appears more than once."""


class HierarchyViolationError(GroupsiftError):
    """A child group key appears under two different parents."""


class MalformedRowError(GroupsiftError):
    """A row cannot be parsed into a valid record."""


# --- embeddings -------------------------------------------------------------

class DimensionMismatchError(GroupsiftError):
    """Vector or image dimensions disagree with the declared shape."""


class UnknownImageIdError(GroupsiftError):
    """An image_id is not known where it must be (manifest or embedding set)."""


class NonFiniteValueError(GroupsiftError):
    """An embedding component is NaN or infinite."""


class ZeroNormVectorError(GroupsiftError):
    """A zero-norm vector reached a cosine-distance computation."""


class EmbedProviderError(GroupsiftError):
    """An external embedding command failed or produced unusable output."""


# --- ranking ----------------------------------------------------------------

class EmptyGroupError(GroupsiftError):
    """A group contains no images."""


class MissingAreaError(GroupsiftError):
    """A record lacks area_px where size ranking requires it."""


class ZeroMeanAreaError(GroupsiftError):
    """A group's mean area is zero, so relative deviations are undefined."""


# --- evaluation -------------------------------------------------------------

class DegenerateLabelsError(GroupsiftError):
    """Ground-truth labels are all-positive or all-negative."""


class UnlabeledImageError(GroupsiftError):
    """A ranked image has no ground-truth outlier label."""


# --- review service ---------------------------------------------------------

class NoActiveRankingError(GroupsiftError):
    """The requested ranking does not exist in the active session."""


class PathViolationError(GroupsiftError):
    """An image path resolves outside the dataset root."""


class SessionLockedError(GroupsiftError):
    """Another live process holds the session directory lock."""
