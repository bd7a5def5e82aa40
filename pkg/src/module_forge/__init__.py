"""module-forge: container module registry automation.

Discovers container tags and digests from registry APIs, catalogues the
executables images put on their PATH, selects meaningful command aliases
by cross-container frequency, writes and updates registry entries, and
schedules entry maintenance across days of the month.
"""

__version__ = "0.1.0"

from .aliases import AliasSet, select_aliases  # noqa: F401
from .cache import CacheStore, FrequencyTable, build_counts, load_counts  # noqa: F401
from .identifiers import ContainerIdentifier  # noqa: F401
from .inspector import ExecutableListing, diff_against_bases, enumerate_executables  # noqa: F401
from .recipe import RegistryEntry, build_entry, parse_entry, serialize_entry  # noqa: F401
from .registry_client import ImageConfig, ManifestRef, RegistryClient, TagList  # noqa: F401
from .scheduler import due_on, group_of, partition  # noqa: F401
from .tags import filter_tags, parse_tag, sort_and_select  # noqa: F401
