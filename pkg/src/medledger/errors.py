"""Rejection reasons shared by the ledger, the contracts and the node.

``reason`` is one of a fixed vocabulary (``WrongSigner``, ``DuplicateId``,
``BadLink`` ...) and is what the CLI prints verbatim.
"""

from __future__ import annotations


class Rejected(Exception):
    def __init__(self, reason: str, detail: str = "") -> None:
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


class UnknownActor(Rejected):
    def __init__(self, actor_id: str) -> None:
        super().__init__("UnknownActor", actor_id)


class BlockRejected(Rejected):
    """A block failed validation. ``index`` is the offending tx, if any."""

    def __init__(self, reason: str, detail: str = "", index: int | None = None, cause: str | None = None) -> None:
        self.index = index
        self.cause = cause
        if index is not None:
            detail = f"tx {index}: {cause}" + (f" ({detail})" if detail else "")
        super().__init__(reason, detail)


class BadChain(Rejected):
    def __init__(self, height: int, reason: str, detail: str = "") -> None:
        self.height = height
        super().__init__(reason, f"height {height}" + (f": {detail}" if detail else ""))
