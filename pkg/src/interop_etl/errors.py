"""Exception hierarchy.

``UserError`` subclasses describe bad input (manifest, metadata, datasets) and
map to exit status 2 on the command line; anything else is an internal error.
"""


class EtlError(Exception):
    pass


class UserError(EtlError):
    pass


class ManifestError(UserError):
    pass


class MetadataError(UserError):
    pass


class IngestError(UserError):
    pass


class StoreError(EtlError):
    pass


class AllocationError(StoreError):
    pass


class IntegrityError(EtlError):
    pass


class StoreAccessError(StoreError, UserError):
    """The store root is missing, not a store, or unreadable."""
