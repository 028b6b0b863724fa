__version__ = '0.3.0'
__versiondate__ = '2026-10-19'

__license__ = f'nestmatch {__version__} ({__versiondate__}): boundary-augmented matching over space-time nests'
