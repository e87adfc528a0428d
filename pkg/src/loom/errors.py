"""Exception hierarchy shared across the package."""

from __future__ import annotations


class LoomError(Exception):
    """Base class for all errors raised by this package."""


class NodeNotFound(LoomError):
    """A node id does not exist in the document."""

    def __init__(self, node_id: str):
        super().__init__(f"unknown node id: {node_id}")
        self.node_id = node_id


class TopologyError(LoomError):
    """A graph mutation violates its preconditions."""


class InvariantViolation(LoomError):
    """The document failed an integrity sweep.

    ``problems`` holds one human-readable string per violation; each names
    the offending node ids so callers can report them.
    """

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class AnnotationError(LoomError):
    """An annotation operation violates its preconditions."""


class ProviderError(LoomError):
    """A language-model provider failed to produce a result.

    ``attempts`` counts transport attempts for remote providers.
    """

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class GenerationError(LoomError):
    """Generation failed part-way; any nodes already created are kept."""

    def __init__(self, message: str, created: list[str]):
        super().__init__(message)
        self.created = created


class MemoryStoreError(LoomError):
    """A memory-store operation violates its preconditions."""


class TemplateError(LoomError):
    """A prompt template is malformed or missing a binding."""


class PersistenceError(LoomError):
    """A document file cannot be read, parsed, or validated."""
