"""Exception types shared across the package.

Every error raised by module-forge derives from ModuleForgeError so callers
can catch the whole family with one clause. The CLI maps these onto its
exit-code taxonomy (registry/network errors are reported separately from
local failures).
"""


class ModuleForgeError(Exception):
    """Base class for all module-forge errors."""


class InvalidIdentifier(ModuleForgeError):
    """A container identifier string is not in canonical form."""


# Registry client -----------------------------------------------------------

class RegistryError(ModuleForgeError):
    """Base class for errors talking to a container registry."""


class NotFoundError(RegistryError):
    """The repository, tag, manifest, or blob does not exist upstream."""


class AuthFailure(RegistryError):
    """The registry rejected our credentials or the token flow failed."""


class TransientError(RegistryError):
    """A retryable failure (5xx, 429, timeout) persisted past the retry budget."""


class IntegrityError(RegistryError):
    """Downloaded content did not hash to its declared digest."""


class UnsupportedMediaType(RegistryError):
    """The registry returned a manifest schema we do not understand."""


# Image inspection ----------------------------------------------------------

class MalformedArchive(ModuleForgeError):
    """A layer archive could not be read as a (gzipped) tar."""


class PathTraversal(ModuleForgeError):
    """A layer archive entry tried to escape the extraction directory."""


# Tag pipeline --------------------------------------------------------------

class BadPattern(ModuleForgeError):
    """A tag exclusion glob could not be compiled."""


# Executable cache ----------------------------------------------------------

class IoFailure(ModuleForgeError):
    """A cache document could not be written."""


class CorruptListing(ModuleForgeError):
    """A stored executable listing failed to parse; message names the file."""


class ParseFailure(ModuleForgeError):
    """A document could not be parsed at all."""


class InvariantViolation(ModuleForgeError):
    """A parsed document is structurally valid but breaks a model invariant."""


# Recipes -------------------------------------------------------------------

class SchemaViolation(ModuleForgeError):
    """A registry entry document has missing, extra, or mistyped fields."""


class NoTags(ModuleForgeError):
    """An entry cannot be built or updated because no tagged digest exists."""


class UnknownAlias(ModuleForgeError):
    """A requested alias is not defined by the registry entry."""


# Scheduler -----------------------------------------------------------------

class DuplicateIdentifier(ModuleForgeError):
    """An identifier list contains the same identifier twice."""
